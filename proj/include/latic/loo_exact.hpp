#pragma once

// Exact leave-one-out cross-validation by refitting: unit folds score the
// held-out response under the conditional density with the cluster's latent
// draws from the reduced fit; cluster folds score the held-out cluster under
// the marginal density (closed form, or prior-located quadrature for
// families without one).

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "latic/criteria.hpp"
#include "latic/pointwise.hpp"
#include "latic/sampler.hpp"

namespace latic {

enum class FoldType { unit, cluster };

struct ExactLooOptions {
  ChainConfig config;       // refit protocol; seed is offset per fold
  int max_folds = 500;      // desk-scale guard
  int quad_points = 21;     // marginal evaluation without a closed form
};

struct LooFoldError : std::runtime_error {
  explicit LooFoldError(const std::string& fold, const std::string& why)
      : std::runtime_error("exact-loo: fold " + fold + " " + why) {}
};

namespace detail {

// mean predictive density of one held-out unit: f_c averaged over the
// reduced fit's draws, with zeta_j from the remaining cluster data (or from
// the latent distribution when the cluster vanished with the unit)
inline std::pair<double, double> loo_unit_predictive(const ModelSpec& spec, const Layout& lay,
                                                     const Cluster& held, int pos,
                                                     const DrawMatrix& draws, int zeta_col,
                                                     int n_chains, std::uint64_t seed) {
  const int S = draws.total();
  Eigen::VectorXd logf(S);
  Eigen::VectorXd om(lay.n_omega), ps(lay.n_psi);
  Rng rng(seed);
  for (int s = 0; s < S; ++s) {
    om = draws.data.row(s).head(lay.n_omega);
    double zeta;
    if (zeta_col >= 0) {
      zeta = draws.data(s, lay.n_omega + lay.n_psi + zeta_col);
    } else {
      ps = draws.data.row(s).segment(lay.n_omega, lay.n_psi);
      zeta = rng.normal(latent_mean(spec, lay, held, ps),
                        std::sqrt(std::max(latent_var(spec, lay, held, ps), 0.0)));
    }
    logf[s] = cond_loglik_unit(spec, lay, held, pos, om, zeta, -1);
  }
  const double elpd = log_mean_exp(logf);
  double rel_var = 0.0;
  Eigen::VectorXd h = Eigen::VectorXd::Constant(S, 1.0 / S);
  for (int s = 0; s < S; ++s) {
    const double d = h[s] * std::expm1(std::min(logf[s] - elpd, 700.0));
    rel_var += d * d;
  }
  const double s_eff = s_eff_or_S(logf, n_chains);
  return {-2.0 * elpd, 4.0 * rel_var * static_cast<double>(S) / s_eff};
}

inline std::pair<double, double> loo_cluster_predictive(const ModelSpec& spec, const Layout& lay,
                                                        const Cluster& held,
                                                        const DrawMatrix& draws, int n_chains,
                                                        int quad_points) {
  const int S = draws.total();
  const bool closed = has_closed_form_marginal(spec.family);
  const GaussHermiteRule rule = closed ? GaussHermiteRule{} : gh_rule(quad_points);
  Eigen::VectorXd logf(S);
  Eigen::VectorXd om(lay.n_omega), ps(lay.n_psi);
  for (int s = 0; s < S; ++s) {
    om = draws.data.row(s).head(lay.n_omega);
    ps = draws.data.row(s).segment(lay.n_omega, lay.n_psi);
    if (closed) {
      logf[s] = marg_loglik_cluster_closed(spec, lay, held, om, ps, -1);
    } else {
      const double mu = latent_mean(spec, lay, held, ps);
      const double phi = std::sqrt(std::max(latent_var(spec, lay, held, ps), 1e-12));
      logf[s] = marg_loglik_cluster_quad(spec, lay, held, om, ps, mu, phi, rule, -1);
    }
  }
  const double elpd = log_mean_exp(logf);
  double rel_var = 0.0;
  for (int s = 0; s < S; ++s) {
    const double d = std::expm1(std::min(logf[s] - elpd, 700.0)) / static_cast<double>(S);
    rel_var += d * d;
  }
  const double s_eff = s_eff_or_S(logf, n_chains);
  return {-2.0 * elpd, 4.0 * rel_var * static_cast<double>(S) / s_eff};
}

}  // namespace detail

inline CriterionResult exact_loo_cv(const ModelSpec& spec, const Layout& lay,
                                    const ClusteredDataset& data, FoldType fold,
                                    const ExactLooOptions& opts = {}) {
  const int J = static_cast<int>(data.clusters.size());
  int n_folds = 0;
  if (fold == FoldType::cluster) {
    n_folds = J;
  } else {
    for (const auto& c : data.clusters) n_folds += static_cast<int>(c.units.size());
  }
  if (n_folds > opts.max_folds)
    throw std::invalid_argument("exact-loo: " + std::to_string(n_folds) +
                                " folds exceed the configured budget of " +
                                std::to_string(opts.max_folds));
  if (fold == FoldType::cluster && J < 2)
    throw std::invalid_argument("exact-loo: cluster folds need at least 2 clusters");

  // pin positional known SDs to the clusters so removals cannot shift them
  ClusteredDataset base = data;
  if (spec.family == Family::eight_schools)
    for (int j = 0; j < J; ++j) {
      Cluster& c = base.clusters[static_cast<std::size_t>(j)];
      if (!std::isfinite(c.known_sd)) c.known_sd = detail::es_sd(spec, c, j);
    }

  CriterionResult r;
  r.name = "exact-loo";
  r.fold = fold == FoldType::unit ? "unit" : "cluster";
  r.mode = fold == FoldType::unit ? PredMode::conditional_unit : PredMode::marginal_cluster;
  r.pointwise.resize(n_folds);
  Eigen::VectorXd mcerr2(n_folds);

  int f = 0;
  for (int j = 0; j < J; ++j) {
    const Cluster held_cluster = base.clusters[static_cast<std::size_t>(j)];
    const int n_units = fold == FoldType::unit ? static_cast<int>(held_cluster.units.size()) : 1;
    for (int pos = 0; pos < n_units; ++pos, ++f) {
      ClusteredDataset reduced = base;
      std::string label;
      int zeta_col = j;
      if (fold == FoldType::cluster) {
        reduced.clusters.erase(reduced.clusters.begin() + j);
        label = std::to_string(held_cluster.id);
      } else {
        Cluster& c = reduced.clusters[static_cast<std::size_t>(j)];
        const Eigen::VectorXd y = c.y;
        c.y.resize(y.size() - 1);
        std::vector<int> units;
        for (Eigen::Index q = 0, w = 0; q < y.size(); ++q) {
          if (q == pos) continue;
          c.y[w++] = y[q];
          units.push_back(c.units[static_cast<std::size_t>(q)]);
        }
        c.units = std::move(units);
        label = std::to_string(held_cluster.id) + ":" +
                std::to_string(held_cluster.units[static_cast<std::size_t>(pos)] + 1);
        if (c.units.empty()) {
          reduced.clusters.erase(reduced.clusters.begin() + j);
          zeta_col = -1;  // latent distribution stands in for the vanished cluster
        }
      }

      ChainConfig cfg = opts.config;
      cfg.seed = opts.config.seed + static_cast<std::uint64_t>(f) + 1;
      FitResult fit;
      try {
        fit = run_mcmc(spec, reduced, cfg);
      } catch (const std::exception& e) {
        throw LooFoldError(label, std::string("failed to fit: ") + e.what());
      }
      if (!fit.converged) throw LooFoldError(label, "failed convergence (max R-hat " +
                                                        std::to_string(fit.max_rhat) + ")");

      std::pair<double, double> pv;
      if (fold == FoldType::cluster) {
        pv = detail::loo_cluster_predictive(spec, lay, held_cluster, fit.draws, cfg.n_chains,
                                            opts.quad_points);
      } else {
        pv = detail::loo_unit_predictive(spec, lay, held_cluster, pos, fit.draws, zeta_col,
                                         cfg.n_chains, cfg.seed ^ 0x5bd1e995u);
      }
      r.pointwise[f] = pv.first;
      mcerr2[f] = pv.second;
      r.point_labels.push_back(label);
    }
  }

  r.value = stable_sum(r.pointwise);
  r.mcerr_value = std::sqrt(stable_sum(mcerr2));
  r.mcerr_p = std::numeric_limits<double>::quiet_NaN();
  r.diagnostics["n_folds"] = n_folds;
  return r;
}

}  // namespace latic
