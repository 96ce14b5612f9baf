#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include <latic/fixtures.hpp>
#include <latic/sampler.hpp>

using namespace latic;
using Catch::Matchers::WithinAbs;

namespace {

ChainConfig small_config(std::uint64_t seed, int n_chains = 2, int n_warmup = 200, int n_keep = 300) {
  ChainConfig cfg;
  cfg.n_chains = n_chains;
  cfg.n_warmup = n_warmup;
  cfg.n_keep = n_keep;
  cfg.seed = seed;
  cfg.rhat_threshold = 10.0;  // keep unit tests off the convergence gate
  return cfg;
}

}  // namespace

TEST_CASE("run_mcmc is bitwise deterministic in (config, seed)", "[sampler]") {
  const Fixture f = fixture_vc(51, 12, 4);
  const ChainConfig cfg = small_config(2024);
  const FitResult a = run_mcmc(f.spec, f.data, cfg);
  const FitResult b = run_mcmc(f.spec, f.data, cfg);
  REQUIRE(a.draws.data.rows() == b.draws.data.rows());
  CHECK(a.draws.data == b.draws.data);  // bitwise

  ChainConfig other = cfg;
  other.seed = 2025;
  const FitResult c = run_mcmc(f.spec, f.data, other);
  CHECK(a.draws.data != c.draws.data);
}

TEST_CASE("draw matrix shape and naming", "[sampler]") {
  const Fixture f = fixture_vc(52, 10, 3);
  const FitResult r = run_mcmc(f.spec, f.data, small_config(7, 3, 100, 150));
  const DrawMatrix& d = r.draws;
  CHECK(d.n_chains == 3);
  CHECK(d.n_iter == 150);
  CHECK(d.omega_dim == 1);
  CHECK(d.psi_dim == 2);
  CHECK(d.zeta_dim == 10);
  CHECK(d.total() == 450);
  CHECK(d.names[0] == "sigma2");
  CHECK(d.names[1] == "alpha");
  CHECK(d.names[2] == "tau2");
  CHECK(d.names[3] == "zeta_1");
  REQUIRE(d.data.rows() == 450);
  REQUIRE(d.data.cols() == 13);
  // variances stay positive along the chain
  CHECK((d.omega_block().col(0).array() > 0.0).all());
  CHECK((d.psi_block().col(1).array() > 0.0).all());
}

TEST_CASE("convergence gate fails under an unreachable threshold", "[sampler]") {
  const Fixture f = fixture_vc(53, 10, 3);
  ChainConfig cfg = small_config(11, 2, 50, 60);
  cfg.rhat_threshold = 1.0000001;
  const FitResult r = run_mcmc(f.spec, f.data, cfg);
  CHECK_FALSE(r.converged);
  CHECK(r.max_rhat > cfg.rhat_threshold);
  CHECK(r.draws.n_iter == 60);  // partial draws retained
  REQUIRE(r.rhat.size() == 3);  // omega and psi only, no zeta entries
  CHECK(r.rhat[0].name == "sigma2");

  // extensions prolong every chain by n_keep until the cap
  cfg.max_extensions = 2;
  const FitResult e = run_mcmc(f.spec, f.data, cfg);
  CHECK(e.extensions == 2);
  CHECK(e.draws.n_iter == 180);
  CHECK_FALSE(e.converged);
}

TEST_CASE("single-chain runs skip the gate", "[sampler]") {
  const ClusteredDataset es = eight_schools_dataset();
  ModelSpec s;
  s.family = Family::eight_schools;
  const FitResult r = run_mcmc(s, es, small_config(3, 1, 100, 120));
  CHECK(r.converged);
  CHECK(std::isnan(r.max_rhat));
  CHECK(r.rhat.empty());
}

TEST_CASE("pinned parameters are constant in the draws", "[sampler]") {
  const Fixture f = fixture_vc(54, 10, 4);
  ChainConfig cfg = small_config(5);
  cfg.fixed["alpha"] = 2.5;
  const FitResult r = run_mcmc(f.spec, f.data, cfg);
  const Eigen::VectorXd alpha = r.draws.data.col(r.draws.omega_dim + 0);
  CHECK((alpha.array() == 2.5).all());
  // pinned sites are not proposed
  for (const auto& n : r.site_names) CHECK(n != "alpha");

  // version B admits tau2 = 0: the latent block collapses to zero
  const Fixture fb = fixture_vc(54, 10, 4, true);
  ChainConfig czero = small_config(5);
  czero.fixed["tau2"] = 0.0;
  const FitResult rz = run_mcmc(fb.spec, fb.data, czero);
  CHECK((rz.draws.zeta_block().array() == 0.0).all());
  CHECK((rz.draws.psi_block().col(0).array() == 0.0).all());

  // version A centers the latent at alpha, so tau2 = 0 is rejected
  ChainConfig bad = small_config(5);
  bad.fixed["tau2"] = 0.0;
  CHECK_THROWS_AS(run_mcmc(f.spec, f.data, bad), std::invalid_argument);
}

TEST_CASE("invalid pins and configs are rejected", "[sampler]") {
  const Fixture f = fixture_vc(55, 8, 3);
  ChainConfig cfg = small_config(1);

  ChainConfig unknown = cfg;
  unknown.fixed["nonesuch"] = 1.0;
  CHECK_THROWS_WITH(run_mcmc(f.spec, f.data, unknown),
                    Catch::Matchers::ContainsSubstring("nonesuch"));

  ChainConfig negvar = cfg;
  negvar.fixed["sigma2"] = -1.0;
  CHECK_THROWS_AS(run_mcmc(f.spec, f.data, negvar), std::invalid_argument);

  const Fixture fr = fixture_rasch_small(56, 8, 4);
  ChainConfig gpin = cfg;
  gpin.fixed["gamma_1"] = 0.0;
  CHECK_THROWS_AS(run_mcmc(fr.spec, fr.data, gpin), std::invalid_argument);

  ChainConfig zchain = cfg;
  zchain.n_chains = 0;
  CHECK_THROWS_AS(run_mcmc(f.spec, f.data, zchain), std::invalid_argument);
  ChainConfig zkeep = cfg;
  zkeep.n_keep = 0;
  CHECK_THROWS_AS(run_mcmc(f.spec, f.data, zkeep), std::invalid_argument);
  ChainConfig badacc = cfg;
  badacc.target_accept = 1.0;
  CHECK_THROWS_AS(run_mcmc(f.spec, f.data, badacc), std::invalid_argument);
}

TEST_CASE("retained-phase acceptance rates hover near the target", "[sampler]") {
  const Fixture f = fixture_vc(57, 20, 5);
  const FitResult r = run_mcmc(f.spec, f.data, small_config(99, 2, 400, 500));
  REQUIRE(r.accept_rate.size() == static_cast<Eigen::Index>(r.site_names.size()));
  CHECK_THAT(r.accept_rate.mean(), WithinAbs(0.44, 0.15));
  CHECK(r.accept_rate.minCoeff() > 0.05);
  CHECK(r.accept_rate.maxCoeff() < 0.95);
}

TEST_CASE("VC posterior recovers the generating parameters", "[sampler]") {
  const Fixture f = fixture_vc();  // J = 50, n_j = 5, truth (2.25, 2.0, 1.0)
  const FitResult r = run_mcmc(f.spec, f.data, small_config(313, 3, 500, 1000));
  const ParamPoint m = r.draws.posterior_mean();
  const auto sd = [&](int col) {
    const Eigen::VectorXd v = r.draws.data.col(col);
    return std::sqrt((v.array() - v.mean()).square().sum() / (v.size() - 1.0));
  };
  CHECK_THAT(m.omega[0], WithinAbs(2.25, 5.0 * sd(0) + 0.2));  // sigma2
  CHECK_THAT(m.psi[0], WithinAbs(2.0, 5.0 * sd(1) + 0.2));     // alpha
  CHECK(m.psi[1] > 0.3);                                       // tau2 well away from 0
  CHECK(m.psi[1] < 3.0);
}

TEST_CASE("draws CSV round trip is exact", "[sampler]") {
  const Fixture f = fixture_vc(58, 6, 3);
  const FitResult r = run_mcmc(f.spec, f.data, small_config(21, 2, 50, 80));
  const std::string path = (std::filesystem::temp_directory_path() / "latic_draws_rt.csv").string();
  write_draws_csv(r.draws, path);
  const DrawMatrix back = read_draws_csv(path, f.layout);
  CHECK(back.n_chains == r.draws.n_chains);
  CHECK(back.n_iter == r.draws.n_iter);
  CHECK(back.zeta_dim == r.draws.zeta_dim);
  CHECK(back.names == r.draws.names);
  CHECK(back.data == r.draws.data);  // bitwise through 17 significant digits

  // a layout with different parameter names rejects the file
  ModelSpec other;
  other.family = Family::eight_schools;
  CHECK_THROWS_WITH(read_draws_csv(path, make_layout(other)),
                    Catch::Matchers::ContainsSubstring("column mismatch"));
  std::remove(path.c_str());
}

TEST_CASE("rasch sampler honors pinned difficulties", "[sampler]") {
  const Fixture f = fixture_rasch_small(59, 12, 4);
  ChainConfig cfg = small_config(77, 2, 150, 200);
  cfg.fixed["delta_1"] = 0.35;
  const FitResult r = run_mcmc(f.spec, f.data, cfg);
  CHECK((r.draws.data.col(0).array() == 0.35).all());
  for (const auto& n : r.site_names) CHECK(n != "delta_1");

  ChainConfig badtau = cfg;
  badtau.fixed["tau"] = 0.0;
  CHECK_THROWS_AS(run_mcmc(f.spec, f.data, badtau), std::invalid_argument);
}
