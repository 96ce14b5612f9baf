#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "latic/model.hpp"
#include "latic/util.hpp"

namespace latic {

// probabilists' convention: integrates against the N(0,1) density, sum w = 1
struct GaussHermiteRule {
  Eigen::VectorXd nodes, weights;
  int size() const { return static_cast<int>(nodes.size()); }
};

// Golub-Welsch on the Jacobi matrix with off-diagonal sqrt(k); symmetrized so
// nodes come in exact +/- pairs with an exact 0 when M is odd.  Weights come
// from the Christoffel function w_i = 1 / sum_k p_k(x_i)^2 over the
// orthonormal polynomials: squared first eigenvector components bottom out
// near machine noise (~1e-32) at the extreme nodes of large rules, and the
// adapted masses multiply by exp(+a^2/2), which would amplify that noise.
inline GaussHermiteRule gh_rule(int M) {
  if (M < 1) throw std::invalid_argument("gh_rule: M must be >= 1");
  GaussHermiteRule rule;
  if (M == 1) {
    rule.nodes = Eigen::VectorXd::Zero(1);
    rule.weights = Eigen::VectorXd::Ones(1);
    return rule;
  }
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(M, M);
  for (int k = 1; k < M; ++k) {
    const double b = std::sqrt(static_cast<double>(k));
    jac(k, k - 1) = b;
    jac(k - 1, k) = b;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jac, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw std::runtime_error("gh_rule: eigensolver failed");
  rule.nodes = es.eigenvalues();
  for (int m = 0; m < M / 2; ++m) {
    const int r = M - 1 - m;
    const double a = 0.5 * (rule.nodes[r] - rule.nodes[m]);
    rule.nodes[m] = -a;
    rule.nodes[r] = a;
  }
  if (M % 2 == 1) rule.nodes[M / 2] = 0.0;

  rule.weights.resize(M);
  for (int m = 0; m < M; ++m) {
    const double x = rule.nodes[m];
    double prev = 0.0, cur = 1.0, norm2 = 1.0;  // p_0 = 1
    for (int k = 1; k < M; ++k) {
      const double next =
          (x * cur - std::sqrt(static_cast<double>(k - 1)) * prev) / std::sqrt(static_cast<double>(k));
      prev = cur;
      cur = next;
      norm2 += cur * cur;
    }
    rule.weights[m] = 1.0 / norm2;
  }
  rule.weights /= rule.weights.sum();
  return rule;
}

// sample mean and sample SD (denominator S-1) of a cluster's zeta draws
inline std::pair<double, double> posterior_moments(const Eigen::Ref<const Eigen::VectorXd>& zeta_draws) {
  if (zeta_draws.size() < 2) throw std::invalid_argument("posterior_moments: need at least 2 draws");
  const double mu = zeta_draws.mean();
  const double var = (zeta_draws.array() - mu).square().sum() / static_cast<double>(zeta_draws.size() - 1);
  if (!(var > 0.0))
    throw std::runtime_error(
        "posterior_moments: degenerate grid (constant draws); fall back to the prior-scale grid");
  return {mu, std::sqrt(var)};
}

// per-cluster normal approximation to the unconditional posterior of zeta_j
struct AdaptedGrid {
  Eigen::VectorXd mu, phi;
  std::vector<int> fallback_clusters;  // clusters where phi_j = 0 forced the prior-scale grid
};

// Grid from the zeta block of a draw matrix (S x J); degenerate clusters fall
// back to (0, mean prior SD) so batch runs survive pathological cases.
inline AdaptedGrid make_adapted_grid(const Eigen::Ref<const Eigen::MatrixXd>& zeta_draws,
                                     double prior_sd_fallback) {
  AdaptedGrid grid;
  const Eigen::Index J = zeta_draws.cols();
  grid.mu.resize(J);
  grid.phi.resize(J);
  for (Eigen::Index j = 0; j < J; ++j) {
    try {
      auto [m, p] = posterior_moments(zeta_draws.col(j));
      grid.mu[j] = m;
      grid.phi[j] = p;
    } catch (const std::runtime_error&) {
      grid.mu[j] = 0.0;
      grid.phi[j] = prior_sd_fallback;
      grid.fallback_clusters.push_back(static_cast<int>(j));
    }
  }
  return grid;
}

// a_jm = mu_j + phi_j a_m; log w_jm = log[sqrt(2pi) phi_j exp(a_m^2/2) g(a_jm; mean, var) w_m].
// The latent mean generalizes the zero-mean disturbance case to centered factors.
inline void adapt_log(const GaussHermiteRule& rule, double mu_j, double phi_j, double latent_mean,
                      double latent_var, Eigen::VectorXd& locations, Eigen::VectorXd& log_masses) {
  if (!(phi_j > 0.0)) throw std::domain_error("adapt: phi_j must be positive");
  if (!(latent_var > 0.0)) throw std::domain_error("adapt: latent variance must be positive");
  const int M = rule.size();
  locations.resize(M);
  log_masses.resize(M);
  const double log_phi = std::log(phi_j);
  for (int m = 0; m < M; ++m) {
    const double a = rule.nodes[m];
    locations[m] = mu_j + phi_j * a;
    log_masses[m] = 0.5 * log_2pi + log_phi + 0.5 * a * a +
                    log_normal_pdf(locations[m], latent_mean, latent_var) + std::log(rule.weights[m]);
  }
}

struct AdaptedPoints {
  Eigen::VectorXd locations, masses;
};

inline AdaptedPoints adapt(const GaussHermiteRule& rule, double mu_j, double phi_j, double tau) {
  AdaptedPoints out;
  Eigen::VectorXd lm;
  adapt_log(rule, mu_j, phi_j, 0.0, tau * tau, out.locations, lm);
  out.masses = lm.array().exp();
  return out;
}

// log sum_m w_jm f_c(y_j | omega, zeta = a_jm), stabilized; -inf when every
// summand underflows (callers flag it)
inline double marg_loglik_cluster_quad(const ModelSpec& spec, const Layout& lay, const Cluster& c,
                                       const Eigen::VectorXd& omega, const Eigen::VectorXd& psi,
                                       double mu_j, double phi_j, const GaussHermiteRule& rule,
                                       int cluster_index = -1) {
  Eigen::VectorXd loc, lw;
  adapt_log(rule, mu_j, phi_j, latent_mean(spec, lay, c, psi), latent_var(spec, lay, c, psi), loc, lw);
  Eigen::VectorXd terms(rule.size());
  for (int m = 0; m < rule.size(); ++m)
    terms[m] = lw[m] + cond_loglik_cluster(spec, lay, c, omega, loc[m], cluster_index);
  return log_sum_exp(terms);
}

// candidates grow ~50% while staying odd so one location sits at the posterior mean
inline const std::vector<int>& quad_ladder() {
  static const std::vector<int> ladder = {7, 11, 17, 25, 37, 55, 83, 111};
  return ladder;
}

struct SelectMTrace {
  int selected = -1;
  bool converged = false;
  std::vector<int> M;
  std::vector<double> value;
  std::vector<double> delta;  // vs previous ladder value; NaN for the first

  std::string csv() const {
    std::string s = "M,target_value,delta\n";
    for (std::size_t k = 0; k < M.size(); ++k) {
      s += std::to_string(M[k]) + "," + std::to_string(value[k]) + ",";
      if (k > 0) s += std::to_string(delta[k]);
      s += "\n";
    }
    return s;
  }
};

struct SelectMError : std::runtime_error {
  SelectMTrace trace;
  explicit SelectMError(SelectMTrace t)
      : std::runtime_error("select_M: ladder exhausted without convergence (cap " +
                           std::to_string(quad_ladder().back()) + ")"),
        trace(std::move(t)) {}
};

// Walks the ladder until the target changes by < tol (absolute, on the
// deviance scale) and returns the earlier M of the first such pair: that M was
// already sufficient. Throws SelectMError with the trace when the cap is hit.
inline SelectMTrace select_M_over(const std::function<double(int)>& target_at_M, double tol = 0.01) {
  SelectMTrace tr;
  for (int M : quad_ladder()) {
    const double v = target_at_M(M);
    tr.M.push_back(M);
    tr.value.push_back(v);
    tr.delta.push_back(tr.value.size() > 1 ? v - tr.value[tr.value.size() - 2]
                                           : std::numeric_limits<double>::quiet_NaN());
    if (tr.value.size() > 1 && std::abs(tr.delta.back()) < tol) {
      tr.selected = tr.M[tr.M.size() - 2];
      tr.converged = true;
      return tr;
    }
  }
  throw SelectMError(std::move(tr));
}

}  // namespace latic
