#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <string>

#include "latic/dataset.hpp"
#include "latic/model.hpp"
#include "latic/rng.hpp"

namespace latic {

// Bundled synthetic datasets with frozen generating parameters, used by the
// test suite and exposed through the CLI's simulate command.
struct Fixture {
  std::string name;
  ModelSpec spec;
  Layout layout;
  ClusteredDataset data;
  Eigen::VectorXd true_omega, true_psi;
};

// Balanced one-way layout sized so the marginal parameter count (3) is a
// meaningful plug-in check against p_D under diffuse priors.
inline Fixture fixture_vc(std::uint64_t seed = 424201, int J = 50, int n_j = 5, bool version_b = false) {
  Fixture f;
  f.name = version_b ? "synthetic-vc-b" : "synthetic-vc";
  f.spec.family = Family::vc;
  f.spec.version_b = version_b;
  f.layout = make_layout(f.spec);
  f.true_omega.resize(f.layout.n_omega);
  f.true_psi.resize(f.layout.n_psi);
  f.true_omega[f.layout.sigma2_idx] = 2.25;
  if (version_b) {
    f.true_omega[f.layout.alpha_omega_idx] = 2.0;
    f.true_psi[f.layout.tau_psi_idx] = 1.0;
  } else {
    f.true_psi[f.layout.alpha_psi_idx] = 2.0;
    f.true_psi[f.layout.tau_psi_idx] = 1.0;
  }
  f.data = simulate(f.spec, f.layout, f.true_omega, f.true_psi, J, n_j, seed);
  return f;
}

// Four-group, four-indicator factor model. The truth embeds the measurement
// violations the restriction ladder probes: a deviant loading and intercept
// for indicator 2 in group 4, intercept shifts for indicator 3 in groups 1-2,
// an inflated unique variance in cell (2,4), and factor variances tied in
// pairs. Factor means are folded into the intercepts, so the truth lives in
// the pattern-2a parameterization that generates the data.
inline Fixture fixture_cfa(std::uint64_t seed = 515301, int J = 295) {
  Fixture f;
  f.name = "synthetic-cfa";
  f.spec.family = Family::cfa;
  f.spec.n_ind = 4;
  f.spec.n_groups = 4;
  f.spec.pattern = "2a";
  f.layout = make_layout(f.spec);

  const Eigen::Vector4d nu_i(0.0, 0.2, -0.1, 0.3);
  const Eigen::Vector4d lam_i(1.0, 0.8, 1.1, 0.9);
  const Eigen::Vector4d alpha_g(0.0, 0.4, -0.3, 0.2);
  const Eigen::Vector4d sig_i(0.5, 0.6, 0.45, 0.55);
  const Eigen::Vector4d tau_g(0.9, 0.9, 1.2, 1.2);

  auto lam_cell = [&](int i, int g) {
    if (i == 1 && g == 3) return 1.15;  // deviant loading lambda_24
    return lam_i[i];
  };
  auto bump = [&](int i, int g) {
    if (i == 1 && g == 3) return 0.35;  // nu_24
    if (i == 2 && g == 0) return 0.25;  // nu_31
    if (i == 2 && g == 1) return -0.20; // nu_32
    return 0.0;
  };

  f.true_omega = Eigen::VectorXd::Zero(f.layout.n_omega);
  f.true_psi = Eigen::VectorXd::Zero(f.layout.n_psi);
  for (int g = 0; g < 4; ++g)
    for (int i = 0; i < 4; ++i) {
      const std::size_t cell = static_cast<std::size_t>(i + g * 4);
      f.true_omega[f.layout.nu_idx[cell]] = nu_i[i] + lam_cell(i, g) * alpha_g[g] + bump(i, g);
      if (f.layout.lam_idx[cell] >= 0) f.true_omega[f.layout.lam_idx[cell]] = lam_cell(i, g);
      f.true_omega[f.layout.sig_idx[cell]] = (i == 1 && g == 3) ? 0.8 : sig_i[i];
      f.true_psi[f.layout.tau_idx[static_cast<std::size_t>(g)]] = tau_g[g];
    }
  f.data = simulate(f.spec, f.layout, f.true_omega, f.true_psi, J, f.spec.n_ind, seed);
  return f;
}

// Item response fixture shaped like a verbal-aggression study: 24 binary
// items, a continuous anger score and a binary sex indicator as
// cluster-level predictors of the latent trait.
inline Fixture fixture_rasch(std::uint64_t seed = 606101, int J = 316, int I = 24) {
  Fixture f;
  f.name = "synthetic-rasch";
  f.spec.family = Family::rasch;
  f.spec.n_items = I;
  f.spec.n_cov = 3;
  f.layout = make_layout(f.spec);

  f.true_omega.resize(f.layout.n_omega);
  Eigen::VectorXd delta(I);
  for (int i = 0; i < I; ++i) delta[i] = -1.9 + 3.8 * static_cast<double>(i) / static_cast<double>(I - 1);
  delta.array() -= delta.mean();
  for (int i = 0; i < I - 1; ++i) f.true_omega[i] = delta[i];
  f.true_omega[f.layout.gamma_offset + 0] = -1.3;
  f.true_omega[f.layout.gamma_offset + 1] = 0.057;  // anger
  f.true_omega[f.layout.gamma_offset + 2] = 0.30;   // male
  // person spread wide enough that misfitting units strain the conditional
  // predictive density, as in the verbal-aggression analyses
  f.true_psi = Eigen::VectorXd::Constant(1, 2.2);

  Rng cov_rng(seed ^ 0x9e3779b97f4a7c15ULL);
  Eigen::MatrixXd covs(J, 2);
  for (int j = 0; j < J; ++j) {
    covs(j, 0) = std::clamp(std::round(cov_rng.normal(20.0, 4.9)), 5.0, 35.0);
    covs(j, 1) = cov_rng.bernoulli(0.67) ? 1.0 : 0.0;
  }
  f.data = simulate(f.spec, f.layout, f.true_omega, f.true_psi, J, I, seed, covs);
  f.data.covariate_names = {"anger", "male"};
  standardize_covariates(f.spec, f.data);
  return f;
}

// small enough that every unit fold can be refit exactly
inline Fixture fixture_rasch_small(std::uint64_t seed = 717501, int J = 30, int I = 5) {
  Fixture f;
  f.name = "synthetic-rasch-small";
  f.spec.family = Family::rasch;
  f.spec.n_items = I;
  f.spec.n_cov = 1;
  f.layout = make_layout(f.spec);
  f.true_omega.resize(f.layout.n_omega);
  Eigen::VectorXd delta(I);
  for (int i = 0; i < I; ++i) delta[i] = -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(I - 1);
  delta.array() -= delta.mean();
  for (int i = 0; i < I - 1; ++i) f.true_omega[i] = delta[i];
  f.true_omega[f.layout.gamma_offset] = 0.2;
  f.true_psi = Eigen::VectorXd::Constant(1, 0.9);
  f.data = simulate(f.spec, f.layout, f.true_omega, f.true_psi, J, I, seed);
  standardize_covariates(f.spec, f.data);
  return f;
}

// Rubin's SAT coaching effects; scaling the responses while keeping the
// standard errors stresses the gap between conditional and marginal criteria.
inline Fixture fixture_eight_schools(double s_scale = 1.0) {
  Fixture f;
  f.name = s_scale == 1.0 ? "eight-schools" : "eight-schools-scaled";
  f.spec.family = Family::eight_schools;
  f.spec.known_sigma = eight_schools_sigmas();
  f.spec.s_scale = s_scale;
  f.layout = make_layout(f.spec);
  f.data = eight_schools_dataset(s_scale);
  f.true_omega = Eigen::VectorXd();
  f.true_psi = Eigen::VectorXd();  // real data: no generating values
  return f;
}

inline Fixture make_fixture(const std::string& name, std::uint64_t seed = 0) {
  if (name == "synthetic-vc") return seed ? fixture_vc(seed) : fixture_vc();
  if (name == "synthetic-vc-b") return seed ? fixture_vc(seed, 50, 5, true) : fixture_vc(424201, 50, 5, true);
  if (name == "synthetic-cfa") return seed ? fixture_cfa(seed) : fixture_cfa();
  if (name == "synthetic-rasch") return seed ? fixture_rasch(seed) : fixture_rasch();
  if (name == "synthetic-rasch-small") return seed ? fixture_rasch_small(seed) : fixture_rasch_small();
  if (name == "eight-schools") return fixture_eight_schools(1.0);
  if (name == "eight-schools-scaled") return fixture_eight_schools(4.0);
  throw std::invalid_argument(
      "unknown fixture '" + name +
      "' (available: synthetic-vc, synthetic-vc-b, synthetic-cfa, synthetic-rasch, "
      "synthetic-rasch-small, eight-schools, eight-schools-scaled)");
}

}  // namespace latic
