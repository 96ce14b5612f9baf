#pragma once

// Plummer penalty for DIC: p_D^P is half the expected symmetric
// Kullback-Leibler divergence between the predictive densities at two
// independent posterior draws, estimated over cross-chain pairs.  Gaussian
// and Bernoulli predictives have closed-form divergences; otherwise each
// pair draws replicate datasets.  The Plummer definition substitutes 2p_D^P
// for the optimism (DIC = plugin + 2p_D^P); the JAGS variant substitutes
// p_D^P into the mean-deviance line instead and is exposed behind a flag.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "latic/criteria.hpp"
#include "latic/pointwise.hpp"
#include "latic/quadrature.hpp"
#include "latic/rng.hpp"

namespace latic {

struct PlummerOptions {
  bool force_replicates = false;   // replicate estimator even when a closed form exists
  int max_pairs = 0;               // 0 = every cross-chain pair; else deterministic thinning
  int replicate_quad_points = 21;  // marginal replicate evaluation without a closed form
  bool jags_substitution = false;  // JAGS: mean deviance + p_D^P instead of plugin + 2 p_D^P
  std::uint64_t seed = 7771;       // replicate generation
};

inline bool plummer_closed_form_available(const ModelSpec& spec, PredMode mode) {
  // Bernoulli units and Gaussian units/clusters all admit closed-form
  // symmetric KL; the Rasch marginal (logistic-normal mixture) does not.
  return spec.family != Family::rasch || mode == PredMode::conditional_unit;
}

namespace detail {

inline double sym_kl_normal(double m1, double v1, double m2, double v2) {
  const double dm = m1 - m2;
  return 0.5 * ((v1 / v2 + v2 / v1 - 2.0) + dm * dm * (1.0 / v1 + 1.0 / v2));
}

inline std::vector<std::pair<int, int>> cross_chain_pairs(int n_chains, int n_iter,
                                                          int max_pairs, int* n_pairings) {
  if (n_chains < 2)
    throw std::invalid_argument("dic-plummer: independent pairs need >= 2 chains");
  std::vector<std::pair<int, int>> idx;
  int pairings = 0;
  for (int c = 0; c + 1 < n_chains; c += 2, ++pairings)
    for (int t = 0; t < n_iter; ++t)
      idx.emplace_back(c * n_iter + t, (c + 1) * n_iter + t);
  if (max_pairs > 0 && static_cast<int>(idx.size()) > max_pairs) {
    std::vector<std::pair<int, int>> kept;
    kept.reserve(static_cast<std::size_t>(max_pairs));
    const double step = static_cast<double>(idx.size()) / max_pairs;
    for (int k = 0; k < max_pairs; ++k)
      kept.push_back(idx[static_cast<std::size_t>(k * step)]);
    idx.swap(kept);
    pairings = 1;  // thinning breaks the pseudo-chain structure
  }
  *n_pairings = pairings;
  return idx;
}

// conditional-density evaluation at an arbitrary response value
inline double unit_loglik_at(const ModelSpec& spec, const Layout& lay, const Cluster& c, int pos,
                             const Eigen::VectorXd& omega, double zeta, double y,
                             int cluster_index) {
  const int unit = c.units[static_cast<std::size_t>(pos)];
  switch (spec.family) {
    case Family::rasch: {
      const double pred = omega.segment(lay.gamma_offset, spec.n_cov).dot(c.x);
      return log_bernoulli_logit(y, pred + zeta - rasch_delta(spec, omega, unit));
    }
    case Family::cfa: {
      const double mu = cfa_nu(spec, lay, omega, unit, c.group) +
                        cfa_lambda(spec, lay, omega, unit, c.group) * zeta;
      return log_normal_pdf(y, mu, cfa_sigma2(spec, lay, omega, unit, c.group));
    }
    case Family::vc: {
      const double mu = spec.version_b ? omega[lay.alpha_omega_idx] + zeta : zeta;
      return log_normal_pdf(y, mu, omega[lay.sigma2_idx]);
    }
    case Family::eight_schools: {
      const double sd = es_sd(spec, c, cluster_index);
      return log_normal_pdf(y, zeta, sd * sd);
    }
  }
  return neg_inf;
}

inline double sim_unit(const ModelSpec& spec, const Layout& lay, const Cluster& c, int pos,
                       const Eigen::VectorXd& omega, double zeta, int cluster_index, Rng& rng) {
  const int unit = c.units[static_cast<std::size_t>(pos)];
  switch (spec.family) {
    case Family::rasch: {
      const double pred = omega.segment(lay.gamma_offset, spec.n_cov).dot(c.x);
      return rng.bernoulli(inv_logit(pred + zeta - rasch_delta(spec, omega, unit))) ? 1.0 : 0.0;
    }
    case Family::cfa: {
      const double mu = cfa_nu(spec, lay, omega, unit, c.group) +
                        cfa_lambda(spec, lay, omega, unit, c.group) * zeta;
      return rng.normal(mu, std::sqrt(cfa_sigma2(spec, lay, omega, unit, c.group)));
    }
    case Family::vc: {
      const double mu = spec.version_b ? omega[lay.alpha_omega_idx] + zeta : zeta;
      return rng.normal(mu, std::sqrt(omega[lay.sigma2_idx]));
    }
    case Family::eight_schools:
      return rng.normal(zeta, es_sd(spec, c, cluster_index));
  }
  return 0.0;
}

}  // namespace detail

// Per-pair series of half log-ratio sums; its mean estimates p_D^P.
inline Eigen::VectorXd plummer_pair_series(const ModelSpec& spec, const Layout& lay,
                                           const ClusteredDataset& data, const DrawMatrix& draws,
                                           PredMode mode, const PlummerOptions& opts,
                                           bool* used_closed_form, int* n_pairings) {
  const auto pairs =
      detail::cross_chain_pairs(draws.n_chains, draws.n_iter, opts.max_pairs, n_pairings);
  const int n_pairs = static_cast<int>(pairs.size());
  const int J = static_cast<int>(data.clusters.size());
  Eigen::VectorXd series(n_pairs);

  const bool closed = plummer_closed_form_available(spec, mode) && !opts.force_replicates;
  *used_closed_form = closed;

  if (mode == PredMode::conditional_unit) detail::require_zeta(draws, data);

  if (closed && mode == PredMode::conditional_unit) {
    const auto Z = draws.zeta_block();
    switch (spec.family) {
      case Family::rasch: {
        const Eigen::MatrixXd D = detail::rasch_delta_matrix(spec, lay, draws);
        const Eigen::MatrixXd Pred = detail::rasch_pred_matrix(spec, lay, data, draws);
        for (int k = 0; k < n_pairs; ++k) {
          const auto [s1, s2] = pairs[static_cast<std::size_t>(k)];
          double acc = 0.0;
          for (int j = 0; j < J; ++j) {
            const auto& c = data.clusters[static_cast<std::size_t>(j)];
            const double b1 = Pred(s1, j) + Z(s1, j), b2 = Pred(s2, j) + Z(s2, j);
            for (const int i : c.units) {
              const double e1 = b1 - D(s1, i), e2 = b2 - D(s2, i);
              acc += (inv_logit(e1) - inv_logit(e2)) * (e1 - e2);
            }
          }
          series[k] = 0.5 * acc;
        }
        break;
      }
      case Family::cfa: {
        const int I = spec.n_ind, G = spec.n_groups;
        Eigen::MatrixXd NU(draws.total(), I * G), LAM(draws.total(), I * G),
            SIG(draws.total(), I * G);
        Eigen::VectorXd om(lay.n_omega);
        for (int s = 0; s < draws.total(); ++s) {
          om = draws.data.row(s).head(lay.n_omega);
          for (int g = 0; g < G; ++g)
            for (int i = 0; i < I; ++i) {
              const int cell = i + g * I;
              NU(s, cell) = detail::cfa_nu(spec, lay, om, i, g);
              LAM(s, cell) = detail::cfa_lambda(spec, lay, om, i, g);
              SIG(s, cell) = detail::cfa_sigma2(spec, lay, om, i, g);
            }
        }
        for (int k = 0; k < n_pairs; ++k) {
          const auto [s1, s2] = pairs[static_cast<std::size_t>(k)];
          double acc = 0.0;
          for (int j = 0; j < J; ++j) {
            const auto& c = data.clusters[static_cast<std::size_t>(j)];
            for (const int i : c.units) {
              const int cell = i + c.group * I;
              acc += detail::sym_kl_normal(NU(s1, cell) + LAM(s1, cell) * Z(s1, j), SIG(s1, cell),
                                           NU(s2, cell) + LAM(s2, cell) * Z(s2, j), SIG(s2, cell));
            }
          }
          series[k] = 0.5 * acc;
        }
        break;
      }
      case Family::vc: {
        for (int k = 0; k < n_pairs; ++k) {
          const auto [s1, s2] = pairs[static_cast<std::size_t>(k)];
          const double v1 = draws.data(s1, lay.sigma2_idx), v2 = draws.data(s2, lay.sigma2_idx);
          const double a1 = spec.version_b ? draws.data(s1, lay.alpha_omega_idx) : 0.0;
          const double a2 = spec.version_b ? draws.data(s2, lay.alpha_omega_idx) : 0.0;
          double acc = 0.0;
          for (int j = 0; j < J; ++j) {
            const auto& c = data.clusters[static_cast<std::size_t>(j)];
            const double n_j = static_cast<double>(c.y.size());
            acc += n_j * detail::sym_kl_normal(a1 + Z(s1, j), v1, a2 + Z(s2, j), v2);
          }
          series[k] = 0.5 * acc;
        }
        break;
      }
      case Family::eight_schools: {
        for (int k = 0; k < n_pairs; ++k) {
          const auto [s1, s2] = pairs[static_cast<std::size_t>(k)];
          double acc = 0.0;
          for (int j = 0; j < J; ++j) {
            const auto& c = data.clusters[static_cast<std::size_t>(j)];
            const double sd = detail::es_sd(spec, c, j);
            const double dz = Z(s1, j) - Z(s2, j);
            acc += static_cast<double>(c.y.size()) * dz * dz / (sd * sd);
          }
          series[k] = 0.5 * acc;
        }
        break;
      }
    }
    return series;
  }

  if (closed) {  // marginal mode, Gaussian families
    Eigen::VectorXd om1(lay.n_omega), om2(lay.n_omega), ps1(lay.n_psi), ps2(lay.n_psi);
    switch (spec.family) {
      case Family::cfa: {
        const int I = spec.n_ind;
        Eigen::VectorXd mu1(I), mu2(I), lam(I);
        Eigen::MatrixXd S1(I, I), S2(I, I);
        std::vector<int> group_count(static_cast<std::size_t>(spec.n_groups), 0);
        bool complete = true;
        for (const auto& c : data.clusters) {
          if (static_cast<int>(c.units.size()) != I) { complete = false; break; }
          ++group_count[static_cast<std::size_t>(c.group)];
        }
        if (!complete)
          throw std::invalid_argument("dic-plummer: CFA marginal closed form needs complete clusters");
        for (int k = 0; k < n_pairs; ++k) {
          const auto [d1, d2] = pairs[static_cast<std::size_t>(k)];
          om1 = draws.data.row(d1).head(lay.n_omega);
          om2 = draws.data.row(d2).head(lay.n_omega);
          ps1 = draws.data.row(d1).segment(lay.n_omega, lay.n_psi);
          ps2 = draws.data.row(d2).segment(lay.n_omega, lay.n_psi);
          double acc = 0.0;
          for (int g = 0; g < spec.n_groups; ++g) {
            if (group_count[static_cast<std::size_t>(g)] == 0) continue;
            auto build = [&](const Eigen::VectorXd& om, const Eigen::VectorXd& ps,
                             Eigen::VectorXd& mu, Eigen::MatrixXd& S) {
              const double alpha = detail::cfa_alpha(lay, ps, g);
              const double tau2 = detail::cfa_tau2(lay, ps, g);
              for (int i = 0; i < I; ++i) {
                lam[i] = detail::cfa_lambda(spec, lay, om, i, g);
                mu[i] = detail::cfa_nu(spec, lay, om, i, g) + lam[i] * alpha;
              }
              S = tau2 * lam * lam.transpose();
              for (int i = 0; i < I; ++i) S(i, i) += detail::cfa_sigma2(spec, lay, om, i, g);
            };
            build(om1, ps1, mu1, S1);
            build(om2, ps2, mu2, S2);
            const Eigen::LLT<Eigen::MatrixXd> l1(S1), l2(S2);
            if (l1.info() != Eigen::Success || l2.info() != Eigen::Success)
              throw std::runtime_error("dic-plummer: marginal covariance not positive definite");
            const Eigen::VectorXd dm = mu1 - mu2;
            const double sym =
                0.5 * (l2.solve(S1).trace() + l1.solve(S2).trace() - 2.0 * I +
                       dm.dot(l1.solve(dm)) + dm.dot(l2.solve(dm)));
            acc += sym * group_count[static_cast<std::size_t>(g)];
          }
          series[k] = 0.5 * acc;
        }
        break;
      }
      case Family::vc: {
        for (int k = 0; k < n_pairs; ++k) {
          const auto [d1, d2] = pairs[static_cast<std::size_t>(k)];
          const double s21 = draws.data(d1, lay.sigma2_idx), s22 = draws.data(d2, lay.sigma2_idx);
          ps1 = draws.data.row(d1).segment(lay.n_omega, lay.n_psi);
          ps2 = draws.data.row(d2).segment(lay.n_omega, lay.n_psi);
          double acc = 0.0;
          for (int j = 0; j < J; ++j) {
            const auto& c = data.clusters[static_cast<std::size_t>(j)];
            const double n_j = static_cast<double>(c.y.size());
            const double t21 = latent_var(spec, lay, c, ps1), t22 = latent_var(spec, lay, c, ps2);
            const double m1 = spec.version_b ? draws.data(d1, lay.alpha_omega_idx)
                                             : ps1[lay.alpha_psi_idx];
            const double m2 = spec.version_b ? draws.data(d2, lay.alpha_omega_idx)
                                             : ps2[lay.alpha_psi_idx];
            const double w1 = s21 + n_j * t21, w2 = s22 + n_j * t22;
            const double r = s21 / s22, q = w1 / w2, dm = m1 - m2;
            acc += 0.5 * ((n_j - 1.0) * (r + 1.0 / r - 2.0) + (q + 1.0 / q - 2.0) +
                          n_j * dm * dm * (1.0 / w1 + 1.0 / w2));
          }
          series[k] = 0.5 * acc;
        }
        break;
      }
      case Family::eight_schools: {
        for (int k = 0; k < n_pairs; ++k) {
          const auto [d1, d2] = pairs[static_cast<std::size_t>(k)];
          ps1 = draws.data.row(d1).segment(lay.n_omega, lay.n_psi);
          ps2 = draws.data.row(d2).segment(lay.n_omega, lay.n_psi);
          double acc = 0.0;
          for (int j = 0; j < J; ++j) {
            const auto& c = data.clusters[static_cast<std::size_t>(j)];
            const double sd = detail::es_sd(spec, c, j);
            acc += detail::sym_kl_normal(latent_mean(spec, lay, c, ps1),
                                         latent_var(spec, lay, c, ps1) + sd * sd,
                                         latent_mean(spec, lay, c, ps2),
                                         latent_var(spec, lay, c, ps2) + sd * sd);
          }
          series[k] = 0.5 * acc;
        }
        break;
      }
      case Family::rasch:
        throw std::logic_error("unreachable: rasch marginal has no closed form");
    }
    return series;
  }

  // replicate path: draw y^r from each side's predictive, evaluate both sides
  Rng rng(opts.seed);
  std::vector<Cluster> scratch(data.clusters.begin(), data.clusters.end());
  const GaussHermiteRule rule = gh_rule(opts.replicate_quad_points);
  Eigen::VectorXd om1(lay.n_omega), om2(lay.n_omega), ps1(lay.n_psi), ps2(lay.n_psi);
  const auto Z = draws.zeta_block();

  auto marg_loglik = [&](const Cluster& c, int j, const Eigen::VectorXd& om,
                         const Eigen::VectorXd& ps) {
    if (has_closed_form_marginal(spec.family))
      return marg_loglik_cluster_closed(spec, lay, c, om, ps, j);
    const double mu = latent_mean(spec, lay, c, ps);
    const double phi = std::sqrt(std::max(latent_var(spec, lay, c, ps), 1e-12));
    return marg_loglik_cluster_quad(spec, lay, c, om, ps, mu, phi, rule, j);
  };

  for (int k = 0; k < n_pairs; ++k) {
    const auto [d1, d2] = pairs[static_cast<std::size_t>(k)];
    om1 = draws.data.row(d1).head(lay.n_omega);
    om2 = draws.data.row(d2).head(lay.n_omega);
    ps1 = draws.data.row(d1).segment(lay.n_omega, lay.n_psi);
    ps2 = draws.data.row(d2).segment(lay.n_omega, lay.n_psi);
    double acc = 0.0;
    for (int side = 0; side < 2; ++side) {
      const Eigen::VectorXd& om_gen = side == 0 ? om1 : om2;
      const Eigen::VectorXd& om_oth = side == 0 ? om2 : om1;
      const Eigen::VectorXd& ps_gen = side == 0 ? ps1 : ps2;
      const Eigen::VectorXd& ps_oth = side == 0 ? ps2 : ps1;
      const int d_gen = side == 0 ? d1 : d2;
      const int d_oth = side == 0 ? d2 : d1;
      for (int j = 0; j < J; ++j) {
        Cluster& c = scratch[static_cast<std::size_t>(j)];
        if (mode == PredMode::conditional_unit) {
          const double z_gen = Z(d_gen, j), z_oth = Z(d_oth, j);
          for (int pos = 0; pos < static_cast<int>(c.units.size()); ++pos) {
            const double yr = detail::sim_unit(spec, lay, c, pos, om_gen, z_gen, j, rng);
            acc += detail::unit_loglik_at(spec, lay, c, pos, om_gen, z_gen, yr, j) -
                   detail::unit_loglik_at(spec, lay, c, pos, om_oth, z_oth, yr, j);
          }
        } else {
          const double zeta =
              rng.normal(latent_mean(spec, lay, c, ps_gen),
                         std::sqrt(std::max(latent_var(spec, lay, c, ps_gen), 0.0)));
          for (int pos = 0; pos < static_cast<int>(c.units.size()); ++pos)
            c.y[pos] = detail::sim_unit(spec, lay, c, pos, om_gen, zeta, j, rng);
          acc += marg_loglik(c, j, om_gen, ps_gen) - marg_loglik(c, j, om_oth, ps_oth);
        }
      }
    }
    series[k] = 0.5 * acc;
  }
  // restore is unnecessary: scratch was a copy
  return series;
}

inline CriterionResult dic_plummer(const ModelSpec& spec, const Layout& lay,
                                   const ClusteredDataset& data, const DrawMatrix& draws,
                                   PredMode mode, double plugin_deviance, double mean_deviance,
                                   const PlummerOptions& opts = {}) {
  bool used_closed = false;
  int n_pairings = 0;
  const Eigen::VectorXd series =
      plummer_pair_series(spec, lay, data, draws, mode, opts, &used_closed, &n_pairings);
  if (series.size() < 2) throw std::invalid_argument("dic-plummer: need at least 2 pairs");
  if (!series.allFinite()) throw std::runtime_error("dic-plummer: non-finite pair contribution");

  const double s_eff = detail::s_eff_or_S(series, std::max(n_pairings, 1));
  const McErrorReport rep = mcerr_p_plummer(series, s_eff);
  const double p = rep.estimate;

  CriterionResult r;
  r.name = "dic-plummer";
  r.mode = mode;
  r.p_eff = p;
  r.mcerr_p = rep.mcerr;
  if (opts.jags_substitution) {
    r.value = mean_deviance + p;
    r.mcerr_value = rep.mcerr;
    r.flags.push_back("jags-substitution");
    r.diagnostics["mean_deviance"] = mean_deviance;
  } else {
    r.value = plugin_deviance + 2.0 * p;
    r.mcerr_value = 2.0 * rep.mcerr;
  }
  r.diagnostics["plugin_deviance"] = plugin_deviance;
  r.diagnostics["n_pairs"] = static_cast<double>(series.size());
  r.diagnostics["closed_form"] = used_closed ? 1.0 : 0.0;
  r.diagnostics["S_eff"] = s_eff;
  if (!used_closed) r.flags.push_back("replicate-path");
  return r;
}

}  // namespace latic
