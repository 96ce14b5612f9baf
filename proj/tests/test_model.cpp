#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include <latic/fixtures.hpp>
#include <latic/model.hpp>
#include <latic/quadrature.hpp>

using namespace latic;
using Catch::Matchers::WithinAbs;

namespace {

ModelSpec cfa_spec(const std::string& pattern, int I = 3, int G = 4) {
  ModelSpec s;
  s.family = Family::cfa;
  s.n_ind = I;
  s.n_groups = G;
  s.pattern = pattern;
  s.priors = cfa_priors("default");
  return s;
}

Cluster make_cluster(long id, std::initializer_list<double> y, int group = 0) {
  Cluster c;
  c.id = id;
  c.y = Eigen::Map<const Eigen::VectorXd>(y.begin(), static_cast<Eigen::Index>(y.size()));
  c.units.resize(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) c.units[i] = static_cast<int>(i);
  c.x = Eigen::VectorXd::Ones(1);
  c.group = group;
  return c;
}

}  // namespace

TEST_CASE("CFA restriction ladder free-parameter counts", "[model]") {
  // three indicators, four groups; counts from the invariance-study ladder
  const std::vector<std::pair<std::string, int>> expected = {
      {"2", 30}, {"2a", 31}, {"3", 22}, {"3a", 23}, {"4", 21},
      {"5", 16}, {"5a", 17}, {"5b", 18}, {"6", 17}};
  for (const auto& [pattern, count] : expected) {
    const Layout lay = make_layout(cfa_spec(pattern));
    INFO("pattern " << pattern);
    CHECK(lay.n_omega + lay.n_psi == count);
  }
  CHECK_THROWS_AS(make_layout(cfa_spec("7")), std::invalid_argument);
  CHECK_THROWS_AS(make_layout(cfa_spec("1")), std::invalid_argument);
}

TEST_CASE("CFA layout ties and frees the right cells", "[model]") {
  const ModelSpec s = cfa_spec("2a");
  const Layout lay = make_layout(s);
  // loadings tied across groups except lambda_24
  CHECK(lay.lam_idx[1 + 0 * 3] == lay.lam_idx[1 + 1 * 3]);
  CHECK(lay.lam_idx[1 + 0 * 3] == lay.lam_idx[1 + 2 * 3]);
  CHECK(lay.lam_idx[1 + 3 * 3] != lay.lam_idx[1 + 0 * 3]);
  // first loading fixed to 1 in every group
  Eigen::VectorXd omega = Eigen::VectorXd::Zero(lay.n_omega);
  for (int g = 0; g < 4; ++g) CHECK(detail::cfa_lambda(s, lay, omega, 0, g) == 1.0);

  // pattern 6: alpha_1 = alpha_3 = 0, alpha_2 and alpha_4 free
  const Layout l6 = make_layout(cfa_spec("6"));
  CHECK(l6.alpha_idx[0] == -1);
  CHECK(l6.alpha_idx[2] == -1);
  CHECK(l6.alpha_idx[1] >= 0);
  CHECK(l6.alpha_idx[3] >= 0);
  // pattern 4 onward: tau2 tied in pairs (1,2) and (3,4)
  CHECK(l6.tau_idx[0] == l6.tau_idx[1]);
  CHECK(l6.tau_idx[2] == l6.tau_idx[3]);
  CHECK(l6.tau_idx[0] != l6.tau_idx[2]);
}

TEST_CASE("rasch layout and sum-to-zero difficulties", "[model]") {
  ModelSpec s;
  s.family = Family::rasch;
  s.n_items = 24;
  s.n_cov = 3;
  const Layout lay = make_layout(s);
  CHECK(lay.n_omega == 26);  // 23 free difficulties + 3 coefficients
  CHECK(lay.n_psi == 1);
  CHECK(lay.omega_names[0] == "delta_1");
  CHECK(lay.omega_names[lay.gamma_offset] == "gamma_1");
  CHECK(lay.psi_names[0] == "tau");

  Eigen::VectorXd omega = Eigen::VectorXd::Zero(lay.n_omega);
  for (int i = 0; i < 23; ++i) omega[i] = 0.1 * (i + 1);
  double sum = 0.0;
  for (int i = 0; i < 24; ++i) sum += detail::rasch_delta(s, omega, i);
  CHECK_THAT(sum, WithinAbs(0.0, 1e-12));

  ModelSpec bad = s;
  bad.n_items = 1;
  CHECK_THROWS_AS(make_layout(bad), std::invalid_argument);
}

TEST_CASE("CFA closed-form marginal equals the bivariate normal oracle", "[model]") {
  // lambda = (1,1), sigma2 = (1,1), tau2 = 1, nu = alpha = 0 implies
  // y ~ N(0, [[2,1],[1,2]]); at y = (0,0) the log density is known
  ModelSpec s = cfa_spec("2", 2, 1);
  const Layout lay = make_layout(s);
  REQUIRE(lay.n_omega == 5);  // nu_11, nu_21, lambda_2, sigma2_11, sigma2_21
  REQUIRE(lay.n_psi == 1);
  Eigen::VectorXd omega(5), psi(1);
  omega << 0.0, 0.0, 1.0, 1.0, 1.0;
  psi << 1.0;
  const Cluster c = make_cluster(1, {0.0, 0.0});
  CHECK_THAT(marg_loglik_cluster_closed(s, lay, c, omega, psi), WithinAbs(-2.3871832107434003, 1e-12));

  // exact posterior adaptation makes the Gaussian integrand flat: quadrature
  // is exact at any M (posterior of zeta given y = 0 is N(0, 1/3))
  const double quad7 =
      marg_loglik_cluster_quad(s, lay, c, omega, psi, 0.0, 1.0 / std::sqrt(3.0), gh_rule(7));
  CHECK_THAT(quad7, WithinAbs(-2.3871832107434003, 1e-12));
  // a mis-adapted grid still converges by M = 21
  const double quad21 = marg_loglik_cluster_quad(s, lay, c, omega, psi, 0.4, 0.8, gh_rule(21));
  CHECK_THAT(quad21, WithinAbs(-2.3871832107434003, 1e-8));
}

TEST_CASE("VC closed-form marginal matches a dense MVN computation", "[model]") {
  ModelSpec s;
  s.family = Family::vc;
  const Layout lay = make_layout(s);
  Eigen::VectorXd omega(1), psi(2);
  omega[lay.sigma2_idx] = 2.25;
  psi[lay.alpha_psi_idx] = 1.3;
  psi[lay.tau_psi_idx] = 0.7;
  const Cluster c = make_cluster(1, {0.4, 2.2, 1.9, -0.3});

  // independent dense-covariance evaluation
  const int n = 4;
  Eigen::MatrixXd cov = Eigen::MatrixXd::Constant(n, n, 0.7);
  cov.diagonal().array() += 2.25;
  const Eigen::VectorXd r = c.y.array() - 1.3;
  const Eigen::LLT<Eigen::MatrixXd> llt(cov);
  const Eigen::VectorXd z = llt.matrixL().solve(r);
  double logdet = 0.0;
  for (int i = 0; i < n; ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
  const double dense = -0.5 * (n * log_2pi + logdet + z.squaredNorm());

  CHECK_THAT(marg_loglik_cluster_closed(s, lay, c, omega, psi), WithinAbs(dense, 1e-12));
}

TEST_CASE("VC centerings A and B give identical marginals", "[model]") {
  ModelSpec a;
  a.family = Family::vc;
  ModelSpec b = a;
  b.version_b = true;
  const Layout la = make_layout(a), lb = make_layout(b);
  CHECK(la.n_omega == 1);
  CHECK(lb.n_omega == 2);

  Eigen::VectorXd oa(1), pa(2), ob(2), pb(1);
  oa[la.sigma2_idx] = 1.8;
  pa[la.alpha_psi_idx] = -0.6;
  pa[la.tau_psi_idx] = 0.9;
  ob[lb.sigma2_idx] = 1.8;
  ob[lb.alpha_omega_idx] = -0.6;
  pb[lb.tau_psi_idx] = 0.9;

  Rng rng(7);
  for (int rep = 0; rep < 5; ++rep) {
    Cluster c = make_cluster(rep + 1, {0.0, 0.0, 0.0});
    for (int i = 0; i < 3; ++i) c.y[i] = rng.normal(-0.6, 1.5);
    const double ma = marg_loglik_cluster_closed(a, la, c, oa, pa);
    const double mb = marg_loglik_cluster_closed(b, lb, c, ob, pb);
    CHECK_THAT(ma, WithinAbs(mb, 1e-12));
    // conditional likelihoods differ only through the zeta convention:
    // version A absorbs alpha into zeta
    const double zeta = 0.55;
    CHECK_THAT(cond_loglik_cluster(a, la, c, oa, -0.6 + zeta, -1),
               WithinAbs(cond_loglik_cluster(b, lb, c, ob, zeta, -1), 1e-12));
  }
}

TEST_CASE("eight-schools SDs resolve from cluster or spec, else throw", "[model]") {
  ModelSpec s;
  s.family = Family::eight_schools;
  const Layout lay = make_layout(s);

  Cluster with_sd = make_cluster(1, {3.0});
  with_sd.known_sd = 15.0;
  CHECK(detail::es_sd(s, with_sd, -1) == 15.0);

  Cluster bare = make_cluster(2, {3.0});
  CHECK_THROWS_AS(detail::es_sd(s, bare, -1), std::invalid_argument);
  ModelSpec with_sigma = s;
  with_sigma.known_sigma = eight_schools_sigmas();
  CHECK(detail::es_sd(with_sigma, bare, 0) == 15.0);
  CHECK(detail::es_sd(with_sigma, bare, 7) == 18.0);

  // closed marginal: y_j ~ N(alpha, tau^2 + sigma_j^2)
  Eigen::VectorXd psi(2);
  psi[lay.alpha_psi_idx] = 5.0;
  psi[lay.tau_psi_idx] = 3.0;
  const double got = marg_loglik_cluster_closed(s, lay, with_sd, Eigen::VectorXd(), psi);
  CHECK_THAT(got, WithinAbs(log_normal_pdf(3.0, 5.0, 9.0 + 225.0), 1e-13));
}

TEST_CASE("eight-schools dataset scaling", "[model]") {
  const ClusteredDataset d1 = eight_schools_dataset(1.0);
  REQUIRE(d1.n_clusters() == 8);
  CHECK(d1.clusters[0].y[0] == 28.0);
  CHECK(d1.clusters[2].y[0] == -3.0);
  CHECK(d1.clusters[0].known_sd == 15.0);
  const ClusteredDataset d4 = eight_schools_dataset(4.0);
  CHECK(d4.clusters[0].y[0] == 112.0);
  CHECK(d4.clusters[0].known_sd == 15.0);  // SDs are not scaled

  ModelSpec s;
  s.family = Family::eight_schools;
  validate_for(s, d4);
  // two responses in one cluster is invalid for this family
  ClusteredDataset bad = d1;
  bad.clusters[0] = make_cluster(1, {1.0, 2.0});
  CHECK_THROWS_AS(validate_for(s, bad), std::invalid_argument);
}

TEST_CASE("validate_for rejects malformed data", "[model]") {
  ModelSpec r;
  r.family = Family::rasch;
  r.n_items = 3;
  r.n_cov = 1;
  ClusteredDataset d;
  d.clusters.push_back(make_cluster(1, {1.0, 0.0, 1.0}));
  validate_for(r, d);

  ClusteredDataset nonbin = d;
  nonbin.clusters[0].y[1] = 2.0;
  CHECK_THROWS_WITH(validate_for(r, nonbin), Catch::Matchers::ContainsSubstring("non-binary"));

  ClusteredDataset wrongcov = d;
  wrongcov.clusters[0].x = Eigen::VectorXd::Ones(2);
  CHECK_THROWS_WITH(validate_for(r, wrongcov), Catch::Matchers::ContainsSubstring("covariate"));

  ModelSpec c = cfa_spec("2", 3, 4);
  ClusteredDataset grp;
  grp.clusters.push_back(make_cluster(1, {1.0, 2.0, 3.0}));
  grp.n_groups = 1;
  CHECK_THROWS_WITH(validate_for(c, grp), Catch::Matchers::ContainsSubstring("group count"));
}

TEST_CASE("dataset CSV round trip", "[model]") {
  const Fixture f = fixture_cfa(1001, 12);
  const std::string path = (std::filesystem::temp_directory_path() / "latic_rt.csv").string();
  write_csv(f.data, path);
  const ClusteredDataset back = read_csv(path);
  REQUIRE(back.n_clusters() == f.data.n_clusters());
  CHECK(back.n_groups == f.data.n_groups);
  for (int j = 0; j < back.n_clusters(); ++j) {
    const Cluster &a = f.data.clusters[static_cast<std::size_t>(j)],
                  &b = back.clusters[static_cast<std::size_t>(j)];
    CHECK(a.id == b.id);
    CHECK(a.group == b.group);
    CHECK(a.units == b.units);
    CHECK(a.y == b.y);
  }

  // rasch round trip carries covariates
  const Fixture fr = fixture_rasch_small(2002, 6, 4);
  write_csv(fr.data, path);
  const ClusteredDataset rback = read_csv(path);
  for (int j = 0; j < rback.n_clusters(); ++j)
    CHECK(fr.data.clusters[static_cast<std::size_t>(j)].x ==
          rback.clusters[static_cast<std::size_t>(j)].x);
  std::remove(path.c_str());
}

TEST_CASE("covariate standardization conventions", "[model]") {
  ModelSpec s;
  s.family = Family::rasch;
  s.n_items = 2;
  s.n_cov = 4;  // intercept + continuous + binary + constant
  ClusteredDataset d;
  const std::vector<double> cont = {1.0, 2.0, 3.0, 4.0, 5.0};
  const std::vector<double> bin = {0.0, 1.0, 1.0, 0.0, 1.0};
  for (int j = 0; j < 5; ++j) {
    Cluster c = make_cluster(j + 1, {1.0, 0.0});
    c.x.resize(4);
    c.x << 1.0, cont[static_cast<std::size_t>(j)], bin[static_cast<std::size_t>(j)], 7.0;
    d.clusters.push_back(c);
  }
  standardize_covariates(s, d);
  CHECK(s.cov_center[0] == 0.0);  // intercept untouched
  CHECK(s.cov_scale[0] == 1.0);
  CHECK_THAT(s.cov_center[1], WithinAbs(3.0, 1e-12));
  CHECK_THAT(s.cov_scale[1], WithinAbs(2.0 * std::sqrt(2.5), 1e-12));  // 2 SD
  CHECK_THAT(s.cov_center[2], WithinAbs(0.6, 1e-12));
  CHECK(s.cov_scale[2] == 1.0);  // binary: range
  CHECK(s.cov_center[3] == 0.0);  // constant column skipped
  CHECK(s.cov_scale[3] == 1.0);

  // natural <-> standardized coefficient maps invert each other
  Eigen::VectorXd gamma(4);
  gamma << 0.5, -0.2, 0.8, 0.1;
  const Eigen::VectorXd std_scale = detail::rasch_gamma_std(s, gamma);
  const Eigen::VectorXd back = detail::rasch_gamma_natural(s, std_scale);
  for (int k = 0; k < 4; ++k) CHECK_THAT(back[k], WithinAbs(gamma[k], 1e-12));

  // a standardized continuous covariate has mean 0 and SD 0.5
  Eigen::VectorXd v(5);
  for (int j = 0; j < 5; ++j)
    v[j] = (cont[static_cast<std::size_t>(j)] - s.cov_center[1]) / s.cov_scale[1];
  CHECK_THAT(v.mean(), WithinAbs(0.0, 1e-12));
  CHECK_THAT(std::sqrt((v.array() - v.mean()).square().sum() / 4.0), WithinAbs(0.5, 1e-12));
}

TEST_CASE("simulate is deterministic in the seed", "[model]") {
  const Fixture a = fixture_vc(11, 8, 3);
  const Fixture b = fixture_vc(11, 8, 3);
  const Fixture c = fixture_vc(12, 8, 3);
  REQUIRE(a.data.n_clusters() == 8);
  bool all_equal = true, any_diff = false;
  for (int j = 0; j < 8; ++j) {
    all_equal = all_equal && a.data.clusters[static_cast<std::size_t>(j)].y ==
                                 b.data.clusters[static_cast<std::size_t>(j)].y;
    any_diff = any_diff || a.data.clusters[static_cast<std::size_t>(j)].y !=
                               c.data.clusters[static_cast<std::size_t>(j)].y;
  }
  CHECK(all_equal);
  CHECK(any_diff);

  // bundled fixtures validate against their own specs
  for (const std::string& name : {"synthetic-vc", "synthetic-vc-b", "synthetic-cfa",
                                  "synthetic-rasch-small", "eight-schools", "eight-schools-scaled"}) {
    const Fixture f = make_fixture(name);
    validate_for(f.spec, f.data);
    CHECK(f.name == name);
  }
  CHECK_THROWS_AS(make_fixture("no-such-fixture"), std::invalid_argument);
}

TEST_CASE("CFA group assignment in simulate covers all groups", "[model]") {
  const Fixture f = fixture_cfa(3003, 40);
  std::vector<int> count(4, 0);
  for (const auto& c : f.data.clusters) count[static_cast<std::size_t>(c.group)]++;
  for (int g = 0; g < 4; ++g) CHECK(count[static_cast<std::size_t>(g)] == 10);
}
