#include <catch2/catch_amalgamated.hpp>

#include <latic/fixtures.hpp>
#include <latic/loo_exact.hpp>

using namespace latic;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;

namespace {

ExactLooOptions loo_opts(std::uint64_t seed, int n_warmup = 150, int n_keep = 150) {
  ExactLooOptions o;
  o.config.n_chains = 2;
  o.config.n_warmup = n_warmup;
  o.config.n_keep = n_keep;
  o.config.seed = seed;
  o.config.rhat_threshold = 10.0;
  return o;
}

}  // namespace

TEST_CASE("unit folds: shape, labels, determinism", "[loo]") {
  const Fixture f = fixture_vc(81, 5, 2);
  const ExactLooOptions opts = loo_opts(300);
  const CriterionResult r = exact_loo_cv(f.spec, f.layout, f.data, FoldType::unit, opts);
  CHECK(r.name == "exact-loo");
  CHECK(r.fold == "unit");
  CHECK(r.mode == PredMode::conditional_unit);
  REQUIRE(r.pointwise.size() == 10);
  CHECK(r.diagnostics.at("n_folds") == 10.0);
  CHECK(r.point_labels[0] == "1:1");
  CHECK(r.point_labels[1] == "1:2");
  CHECK(r.point_labels[2] == "2:1");
  CHECK(r.point_labels[9] == "5:2");
  CHECK(r.pointwise.allFinite());
  CHECK(r.mcerr_value > 0.0);
  CHECK(std::isnan(r.mcerr_p));

  // refits are seeded per fold, so the whole procedure replays bitwise
  const CriterionResult again = exact_loo_cv(f.spec, f.layout, f.data, FoldType::unit, opts);
  CHECK(again.value == r.value);
  CHECK((again.pointwise.array() == r.pointwise.array()).all());

  ExactLooOptions shifted = opts;
  shifted.config.seed = 301;
  const CriterionResult other = exact_loo_cv(f.spec, f.layout, f.data, FoldType::unit, shifted);
  CHECK(other.value != r.value);
}

TEST_CASE("cluster folds: shape and labels", "[loo]") {
  const Fixture f = fixture_vc(81, 5, 2);
  const CriterionResult r =
      exact_loo_cv(f.spec, f.layout, f.data, FoldType::cluster, loo_opts(310));
  CHECK(r.fold == "cluster");
  CHECK(r.mode == PredMode::marginal_cluster);
  REQUIRE(r.pointwise.size() == 5);
  CHECK(r.diagnostics.at("n_folds") == 5.0);
  for (int j = 0; j < 5; ++j)
    CHECK(r.point_labels[static_cast<std::size_t>(j)] == std::to_string(j + 1));
  CHECK(r.pointwise.allFinite());
}

TEST_CASE("singleton clusters: unit folds agree with cluster folds", "[loo]") {
  // with one unit per cluster the two fold types remove identical data and
  // refit with identical seeds; the unit path then integrates the vanished
  // cluster's latent by Monte Carlo where the cluster path is closed form
  const Fixture f = fixture_vc(90, 2, 1);
  const ExactLooOptions opts = loo_opts(640, 200, 1500);
  const CriterionResult ru = exact_loo_cv(f.spec, f.layout, f.data, FoldType::unit, opts);
  const CriterionResult rc = exact_loo_cv(f.spec, f.layout, f.data, FoldType::cluster, opts);
  REQUIRE(ru.pointwise.size() == 2);
  REQUIRE(rc.pointwise.size() == 2);
  CHECK(ru.point_labels[0] == "1:1");
  CHECK(rc.point_labels[0] == "1");
  const double tol = 4.0 * (ru.mcerr_value + rc.mcerr_value) + 0.05;
  CHECK_THAT(ru.value, WithinAbs(rc.value, tol));
  CHECK_THAT(ru.pointwise[0], WithinAbs(rc.pointwise[0], tol));
  CHECK_THAT(ru.pointwise[1], WithinAbs(rc.pointwise[1], tol));
}

TEST_CASE("eight schools: positional SDs are pinned before removal", "[loo]") {
  ModelSpec spec;
  spec.family = Family::eight_schools;
  const Layout lay = make_layout(spec);
  const ClusteredDataset with_sd = eight_schools_dataset();

  // same data with the SDs carried on the spec instead of the clusters; the
  // folds must resolve them by original position before clusters move
  ClusteredDataset bare = with_sd;
  for (Cluster& c : bare.clusters) c.known_sd = std::numeric_limits<double>::quiet_NaN();
  ModelSpec spec_sigma = spec;
  spec_sigma.known_sigma = eight_schools_sigmas();

  const ExactLooOptions opts = loo_opts(700, 200, 250);
  const CriterionResult ra = exact_loo_cv(spec, lay, with_sd, FoldType::cluster, opts);
  const CriterionResult rb = exact_loo_cv(spec_sigma, lay, bare, FoldType::cluster, opts);
  REQUIRE(ra.pointwise.size() == 8);
  CHECK(ra.value == rb.value);
  CHECK((ra.pointwise.array() == rb.pointwise.array()).all());
  CHECK(ra.point_labels.front() == "1");
  CHECK(ra.point_labels.back() == "8");
  CHECK(ra.pointwise.allFinite());
}

TEST_CASE("fold budget and shape guards", "[loo]") {
  const Fixture f = fixture_vc(91, 5, 2);
  ExactLooOptions opts = loo_opts(1);
  opts.max_folds = 3;
  CHECK_THROWS_MATCHES(exact_loo_cv(f.spec, f.layout, f.data, FoldType::cluster, opts),
                       std::invalid_argument, Catch::Matchers::MessageMatches(ContainsSubstring("exceed")));
  opts.max_folds = 9;  // 10 unit folds
  CHECK_THROWS_AS(exact_loo_cv(f.spec, f.layout, f.data, FoldType::unit, opts),
                  std::invalid_argument);

  const Fixture solo = fixture_vc(91, 1, 3);
  CHECK_THROWS_MATCHES(
      exact_loo_cv(solo.spec, solo.layout, solo.data, FoldType::cluster, loo_opts(1)),
      std::invalid_argument,
      Catch::Matchers::MessageMatches(ContainsSubstring("at least 2 clusters")));
}

TEST_CASE("a fold that misses the convergence gate is named", "[loo]") {
  const Fixture f = fixture_vc(92, 3, 2);
  ExactLooOptions opts = loo_opts(5, 50, 60);
  opts.config.rhat_threshold = 1.0000001;
  CHECK_THROWS_AS(exact_loo_cv(f.spec, f.layout, f.data, FoldType::cluster, opts), LooFoldError);
  CHECK_THROWS_WITH(exact_loo_cv(f.spec, f.layout, f.data, FoldType::cluster, opts),
                    ContainsSubstring("fold 1 failed convergence"));
  CHECK_THROWS_WITH(exact_loo_cv(f.spec, f.layout, f.data, FoldType::unit, opts),
                    ContainsSubstring("fold 1:1 "));
}
