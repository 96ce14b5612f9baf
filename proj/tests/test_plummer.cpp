#include <catch2/catch_amalgamated.hpp>

#include <latic/fixtures.hpp>
#include <latic/plummer.hpp>
#include <latic/sampler.hpp>

using namespace latic;
using Catch::Matchers::WithinAbs;

namespace {

// one eight-schools cluster, two chains of two identical draws each:
// chain 0 has (alpha, tau, zeta) = (0, 1, 0), chain 1 has (1, 1, 1)
struct EsToy {
  ModelSpec spec;
  Layout lay;
  ClusteredDataset data;
  DrawMatrix draws;
};

EsToy es_toy() {
  EsToy t;
  t.spec.family = Family::eight_schools;
  t.lay = make_layout(t.spec);
  Cluster c;
  c.id = 1;
  c.y = Eigen::VectorXd::Constant(1, 3.0);
  c.units = {0};
  c.x = Eigen::VectorXd::Ones(1);
  c.known_sd = 1.0;
  t.data.clusters.push_back(c);
  t.draws.n_chains = 2;
  t.draws.n_iter = 2;
  t.draws.omega_dim = 0;
  t.draws.psi_dim = 2;
  t.draws.zeta_dim = 1;
  t.draws.names = {"alpha", "tau", "zeta_1"};
  t.draws.data.resize(4, 3);
  t.draws.data << 0.0, 1.0, 0.0,
                  0.0, 1.0, 0.0,
                  1.0, 1.0, 1.0,
                  1.0, 1.0, 1.0;
  return t;
}

}  // namespace

TEST_CASE("symmetric KL between unit normals", "[plummer]") {
  CHECK_THAT(detail::sym_kl_normal(0.0, 1.0, 1.0, 1.0), WithinAbs(1.0, 1e-14));
  CHECK_THAT(detail::sym_kl_normal(0.0, 1.0, 0.0, 2.0), WithinAbs(0.25, 1e-14));
  CHECK_THAT(detail::sym_kl_normal(2.0, 3.0, 2.0, 3.0), WithinAbs(0.0, 1e-14));
  // symmetry
  CHECK_THAT(detail::sym_kl_normal(0.3, 1.2, -0.4, 2.1),
             WithinAbs(detail::sym_kl_normal(-0.4, 2.1, 0.3, 1.2), 1e-14));
}

TEST_CASE("cross-chain pairing", "[plummer]") {
  int n_pairings = 0;
  const auto pairs = detail::cross_chain_pairs(5, 100, 0, &n_pairings);
  CHECK(pairs.size() == 200);  // chains (0,1) and (2,3); the fifth chain is unused
  CHECK(n_pairings == 2);
  CHECK(pairs[0] == std::pair<int, int>{0, 100});
  CHECK(pairs[100] == std::pair<int, int>{200, 300});

  const auto thinned = detail::cross_chain_pairs(5, 100, 50, &n_pairings);
  CHECK(thinned.size() == 50);
  CHECK(n_pairings == 1);  // thinning breaks the pseudo-chain structure

  CHECK_THROWS_AS(detail::cross_chain_pairs(1, 100, 0, &n_pairings), std::invalid_argument);
}

TEST_CASE("Plummer penalty on a frozen toy posterior", "[plummer]") {
  const EsToy t = es_toy();

  // conditional: acc = (z1 - z2)^2 / sd^2 = 1, so each pair contributes 0.5
  const CriterionResult cond = dic_plummer(t.spec, t.lay, t.data, t.draws,
                                           PredMode::conditional_unit, 10.0, 12.0);
  CHECK(cond.name == "dic-plummer");
  CHECK_THAT(cond.p_eff, WithinAbs(0.5, 1e-14));
  CHECK_THAT(cond.value, WithinAbs(11.0, 1e-14));  // plugin + 2 p
  CHECK_THAT(cond.mcerr_p, WithinAbs(0.0, 1e-14));  // constant pair series
  CHECK(cond.diagnostics.at("n_pairs") == 2.0);
  CHECK(cond.diagnostics.at("closed_form") == 1.0);
  CHECK(cond.flags.empty());

  // marginal: symKL(N(0, 2), N(1, 2)) = 1/2, each pair contributes 1/4
  const CriterionResult marg = dic_plummer(t.spec, t.lay, t.data, t.draws,
                                           PredMode::marginal_cluster, 10.0, 12.0);
  CHECK_THAT(marg.p_eff, WithinAbs(0.25, 1e-14));
  CHECK_THAT(marg.value, WithinAbs(10.5, 1e-14));

  // JAGS substitution swaps the plug-in line for the mean deviance
  PlummerOptions jags;
  jags.jags_substitution = true;
  const CriterionResult j = dic_plummer(t.spec, t.lay, t.data, t.draws,
                                        PredMode::conditional_unit, 10.0, 12.0, jags);
  CHECK_THAT(j.value, WithinAbs(12.5, 1e-14));  // mean deviance + p
  CHECK_THAT(j.mcerr_value, WithinAbs(j.mcerr_p, 1e-14));
  REQUIRE(j.flags.size() == 1);
  CHECK(j.flags[0] == "jags-substitution");
}

TEST_CASE("max_pairs thins the pair series", "[plummer]") {
  const Fixture f = fixture_vc(71, 10, 3);
  ChainConfig cfg;
  cfg.n_chains = 2;
  cfg.n_warmup = 100;
  cfg.n_keep = 50;
  cfg.seed = 404;
  cfg.rhat_threshold = 10.0;
  const FitResult r = run_mcmc(f.spec, f.data, cfg);

  const CriterionResult full = dic_plummer(f.spec, f.layout, f.data, r.draws,
                                           PredMode::marginal_cluster, 0.0, 0.0);
  CHECK(full.diagnostics.at("n_pairs") == 50.0);
  PlummerOptions opts;
  opts.max_pairs = 12;
  const CriterionResult thin = dic_plummer(f.spec, f.layout, f.data, r.draws,
                                           PredMode::marginal_cluster, 0.0, 0.0, opts);
  CHECK(thin.diagnostics.at("n_pairs") == 12.0);
}

TEST_CASE("closed-form availability by family and mode", "[plummer]") {
  ModelSpec rasch;
  rasch.family = Family::rasch;
  CHECK(plummer_closed_form_available(rasch, PredMode::conditional_unit));
  CHECK_FALSE(plummer_closed_form_available(rasch, PredMode::marginal_cluster));
  ModelSpec vc;
  vc.family = Family::vc;
  CHECK(plummer_closed_form_available(vc, PredMode::marginal_cluster));
}

TEST_CASE("replicate estimator agrees with the closed form", "[plummer][slow]") {
  const Fixture f = fixture_vc(72, 30, 4);
  ChainConfig cfg;
  cfg.n_chains = 4;
  cfg.n_warmup = 300;
  cfg.n_keep = 500;
  cfg.seed = 515;
  cfg.rhat_threshold = 10.0;
  const FitResult r = run_mcmc(f.spec, f.data, cfg);

  for (const PredMode mode : {PredMode::marginal_cluster, PredMode::conditional_unit}) {
    const CriterionResult closed = dic_plummer(f.spec, f.layout, f.data, r.draws, mode, 0.0, 0.0);
    PlummerOptions rep;
    rep.force_replicates = true;
    rep.seed = 90210;
    const CriterionResult sim = dic_plummer(f.spec, f.layout, f.data, r.draws, mode, 0.0, 0.0, rep);
    REQUIRE(sim.flags.size() == 1);
    CHECK(sim.flags[0] == "replicate-path");
    CHECK(sim.diagnostics.at("closed_form") == 0.0);
    const double tol = 4.0 * std::sqrt(closed.mcerr_p * closed.mcerr_p + sim.mcerr_p * sim.mcerr_p);
    INFO(pred_mode_name(mode) << ": closed " << closed.p_eff << " vs replicate " << sim.p_eff
                              << " (tol " << tol << ")");
    CHECK_THAT(sim.p_eff, WithinAbs(closed.p_eff, tol));
  }
}

TEST_CASE("pair series needs at least two pairs and finite values", "[plummer]") {
  EsToy t = es_toy();
  DrawMatrix one = t.draws;
  one.n_iter = 1;
  one.data = t.draws.data({0, 2}, Eigen::all).eval();
  CHECK_THROWS_AS(dic_plummer(t.spec, t.lay, t.data, one, PredMode::conditional_unit, 0.0, 0.0),
                  std::invalid_argument);
}
