#include <algorithm>
#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <latic/fixtures.hpp>
#include <latic/pipeline.hpp>

using namespace latic;

namespace {

ChainConfig cfg(std::uint64_t seed, int nc, int w, int k) {
  ChainConfig c;
  c.n_chains = nc;
  c.n_warmup = w;
  c.n_keep = k;
  c.seed = seed;
  c.rhat_threshold = 10.0;  // structural properties, not convergence gates
  return c;
}

CriterionRequest req(CriterionId id, PredMode m, int qp = 0) {
  CriterionRequest r;
  r.id = id;
  r.mode = m;
  r.quad_points = qp;
  return r;
}

}  // namespace

// Plugging the posterior mean into the marginal deviance can only flatter the
// fit, so both effective-parameter estimates stay positive; conditioning on
// the latent draws inflates them well past the marginal counts.
TEST_CASE("penalties are positive and conditional exceeds marginal", "[properties][slow]") {
  const char* names[] = {"synthetic-vc", "synthetic-vc-b", "synthetic-cfa",
                         "synthetic-rasch-small", "eight-schools"};
  for (int i = 0; i < 5; ++i) {
    INFO(names[i]);
    Fixture f = make_fixture(names[i]);
    FittedModel fm = fit_model(f.spec, f.data, cfg(7001 + static_cast<std::uint64_t>(i), 2, 300, 400));
    const int qp = f.spec.family == Family::rasch ? 11 : 0;
    auto dm = evaluate_criterion(fm, req(CriterionId::dic_spiegelhalter, PredMode::marginal_cluster, qp));
    auto dc = evaluate_criterion(fm, req(CriterionId::dic_spiegelhalter, PredMode::conditional_unit));
    auto wm = evaluate_criterion(fm, req(CriterionId::waic, PredMode::marginal_cluster, qp));
    auto wc = evaluate_criterion(fm, req(CriterionId::waic, PredMode::conditional_unit));

    CHECK(dm.result.p_eff > 0.3);
    CHECK(wm.result.p_eff > 0.2);
    CHECK(dc.result.p_eff > dm.result.p_eff);
    CHECK(wc.result.p_eff > wm.result.p_eff);
    if (f.data.n_clusters() >= 20) {  // many latent sites: gap is wide, not marginal
      CHECK(dc.result.p_eff > 3.0 * dm.result.p_eff);
      CHECK(wc.result.p_eff > 3.0 * wm.result.p_eff);
    }
  }
}

// Variance-components model with diffuse priors: three marginal parameters,
// so the marginal DIC penalty should land near 3.
TEST_CASE("vc marginal penalty counts the marginal parameters", "[properties][slow]") {
  Fixture f = make_fixture("synthetic-vc");
  FittedModel fm = fit_model(f.spec, f.data, cfg(7100, 3, 400, 800));
  REQUIRE(fm.fit.max_rhat < 1.05);
  auto dm = evaluate_criterion(fm, req(CriterionId::dic_spiegelhalter, PredMode::marginal_cluster));
  CHECK(dm.result.p_eff > 3.0 * 0.85);
  CHECK(dm.result.p_eff < 3.0 * 1.15);
  CHECK(dm.result.mcerr_p < 0.5);
}

// The two centerings describe the same marginal model, so marginal criteria
// computed from either fit agree up to Monte Carlo error.
TEST_CASE("centering A and B give the same marginal criteria", "[properties][slow]") {
  Fixture base = fixture_vc(515, 100, 5);
  ModelSpec sa = base.spec;
  ModelSpec sb = sa;
  sb.version_b = true;
  FittedModel fa = fit_model(sa, base.data, cfg(7200, 3, 400, 800));
  FittedModel fb = fit_model(sb, base.data, cfg(7201, 3, 400, 800));
  REQUIRE(fa.fit.max_rhat < 1.05);
  REQUIRE(fb.fit.max_rhat < 1.05);

  auto wa = evaluate_criterion(fa, req(CriterionId::waic, PredMode::marginal_cluster));
  auto wb = evaluate_criterion(fb, req(CriterionId::waic, PredMode::marginal_cluster));
  CHECK(std::abs(wa.result.value - wb.result.value) <
        4.0 * (wa.result.mcerr_value + wb.result.mcerr_value));

  auto da = evaluate_criterion(fa, req(CriterionId::dic_spiegelhalter, PredMode::marginal_cluster));
  auto db = evaluate_criterion(fb, req(CriterionId::dic_spiegelhalter, PredMode::marginal_cluster));
  CHECK(std::abs(da.result.value - db.result.value) <
        4.0 * (da.result.mcerr_value + db.result.mcerr_value));
}

namespace {

// Rasch data where both covariates matter and anger matters more, so model
// choice by marginal DIC has a clear right answer.
ClusteredDataset strong_rasch(int J, int I, std::uint64_t seed) {
  ModelSpec sp;
  sp.family = Family::rasch;
  sp.n_items = I;
  sp.n_cov = 3;
  Layout lay = make_layout(sp);
  Eigen::VectorXd omega(lay.n_omega);
  Eigen::VectorXd delta(I);
  for (int i = 0; i < I; ++i) delta[i] = -1.5 + 3.0 * static_cast<double>(i) / (I - 1.0);
  delta.array() -= delta.mean();
  for (int i = 0; i < I - 1; ++i) omega[i] = delta[i];
  omega[lay.gamma_offset + 0] = -7.45;  // centers the predictor near zero
  omega[lay.gamma_offset + 1] = 0.35;
  omega[lay.gamma_offset + 2] = 0.9;
  Eigen::VectorXd psi = Eigen::VectorXd::Constant(1, 1.2);
  Rng cov_rng(seed ^ 0x9e3779b97f4a7c15ULL);
  Eigen::MatrixXd covs(J, 2);
  for (int j = 0; j < J; ++j) {
    covs(j, 0) = std::clamp(std::round(cov_rng.normal(20.0, 4.9)), 5.0, 35.0);
    covs(j, 1) = cov_rng.bernoulli(0.5) ? 1.0 : 0.0;
  }
  return simulate(sp, lay, omega, psi, J, I, seed, covs);
}

}  // namespace

TEST_CASE("marginal DIC ranks rasch covariate sets correctly", "[properties][slow]") {
  ClusteredDataset full = strong_rasch(250, 12, 2211);
  struct V {
    const char* label;
    std::vector<int> keep;  // indices into the full covariate vector
    bool inter;
  };
  const V vs[] = {{"intercept", {}, false},
                  {"anger", {1}, false},
                  {"male", {2}, false},
                  {"anger+male", {1, 2}, false},
                  {"anger*male", {1, 2}, true}};
  double value[5], mcerr[5];
  for (int i = 0; i < 5; ++i) {
    ClusteredDataset d;
    for (const Cluster& c0 : full.clusters) {
      Cluster c = c0;
      Eigen::VectorXd x(1 + static_cast<int>(vs[i].keep.size()) + (vs[i].inter ? 1 : 0));
      x[0] = 1.0;
      int p = 1;
      for (int k : vs[i].keep) x[p++] = c0.x[k];
      if (vs[i].inter) x[p++] = c0.x[1] * c0.x[2];
      c.x = x;
      d.clusters.push_back(std::move(c));
    }
    ModelSpec sp;
    sp.family = Family::rasch;
    sp.n_items = 12;
    sp.n_cov = 1 + static_cast<int>(vs[i].keep.size()) + (vs[i].inter ? 1 : 0);
    standardize_covariates(sp, d);
    FittedModel fm = fit_model(sp, d, cfg(7300 + static_cast<std::uint64_t>(i), 2, 400, 600));
    auto out = evaluate_criterion(fm, req(CriterionId::dic_spiegelhalter, PredMode::marginal_cluster, 11));
    value[i] = out.result.value;
    mcerr[i] = out.result.mcerr_value;
    REQUIRE(std::isfinite(value[i]));
    REQUIRE(mcerr[i] > 0.0);
  }

  // models without anger are far worse than every model with it
  for (int bad : {0, 2})
    for (int good : {1, 3, 4}) CHECK(value[bad] > value[good] + 100.0);
  // adding male on top of anger helps beyond Monte Carlo noise
  CHECK(value[3] < value[1] - 2.0 * (mcerr[1] + mcerr[3]));
  CHECK(value[3] < value[1] - 4.0);
  // the spurious interaction buys nothing
  CHECK(std::abs(value[4] - value[3]) < 4.0);
}

TEST_CASE("vc posterior recovers generating values at large J", "[properties][slow]") {
  Fixture f = fixture_vc(909, 500, 5);
  FittedModel fm = fit_model(f.spec, f.data, cfg(7400, 2, 300, 500));
  REQUIRE(fm.fit.max_rhat < 1.05);
  ParamPoint pm = fm.fit.draws.posterior_mean();
  auto sd_of = [&](const std::string& nm) {
    for (int c = 0; c < fm.fit.draws.cols(); ++c)
      if (fm.fit.draws.names[static_cast<std::size_t>(c)] == nm) {
        Eigen::VectorXd col = fm.fit.draws.data.col(c);
        const double m = col.mean();
        return std::sqrt((col.array() - m).square().sum() / (col.size() - 1.0));
      }
    FAIL("missing draw column " + nm);
    return 0.0;
  };

  const double sigma2 = pm.omega[f.layout.sigma2_idx];
  const double alpha = pm.psi[f.layout.alpha_psi_idx];
  const double tau2 = pm.psi[f.layout.tau_psi_idx];
  CHECK(std::abs(sigma2 - 2.25) < 0.25);
  CHECK(std::abs(alpha - 2.0) < 0.25);
  CHECK(std::abs(tau2 - 1.0) < 0.3);
  CHECK(std::abs(sigma2 - 2.25) < 5.0 * sd_of("sigma2"));
  CHECK(std::abs(alpha - 2.0) < 5.0 * sd_of("alpha"));
  CHECK(std::abs(tau2 - 1.0) < 5.0 * sd_of("tau2"));
}

// Simulated response frequencies match the quadrature integral of the item
// response function over the latent distribution.
TEST_CASE("rasch simulation matches its quadrature frequencies", "[properties][slow]") {
  ModelSpec sp;
  sp.family = Family::rasch;
  sp.n_items = 4;
  sp.n_cov = 1;
  Layout lay = make_layout(sp);
  Eigen::VectorXd omega(lay.n_omega);
  omega << -0.9, -0.3, 0.3, 0.0;  // three free deltas, zero covariate effect
  Eigen::VectorXd psi = Eigen::VectorXd::Constant(1, 1.0);
  const int J = 6000;
  ClusteredDataset d = simulate(sp, lay, omega, psi, J, 4, 424242);

  GaussHermiteRule r = gh_rule(41);
  double prev = 1.0;
  for (int i = 0; i < 4; ++i) {
    double freq = 0.0;
    for (const Cluster& c : d.clusters) freq += c.y[i];
    freq /= J;
    double p = 0.0;
    for (int m = 0; m < 41; ++m)
      p += r.weights[m] * inv_logit(r.nodes[m] - detail::rasch_delta(sp, omega, i));
    INFO("item " << i + 1 << " freq " << freq << " oracle " << p);
    CHECK(std::abs(freq - p) < 0.02);
    CHECK(p < prev);  // harder items are answered less often
    prev = p;
  }
}
