#pragma once

// Pointwise log-likelihood matrices over retained draws.
//
// Rows index draws (chain-major, matching DrawMatrix); columns index
// prediction points: one per unit in conditional mode, one per cluster in
// marginal mode.  Marginal evaluation uses the closed form when the family
// has one, otherwise adaptive Gauss-Hermite quadrature on a grid adapted to
// the latent-variable draws.

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "latic/dataset.hpp"
#include "latic/draws.hpp"
#include "latic/model.hpp"
#include "latic/quadrature.hpp"
#include "latic/util.hpp"

namespace latic {

enum class PredMode { conditional_unit, marginal_cluster };

inline const char* pred_mode_name(PredMode m) {
  return m == PredMode::conditional_unit ? "conditional" : "marginal";
}

struct PointwiseLogLik {
  PredMode mode = PredMode::conditional_unit;
  int n_chains = 1;
  Eigen::MatrixXd L;                 // S x P
  std::vector<std::string> labels;   // one per point
  std::vector<int> cluster_of;       // point -> cluster position in dataset

  int n_draws() const { return static_cast<int>(L.rows()); }
  int n_points() const { return static_cast<int>(L.cols()); }
};

namespace detail {

inline void require_zeta(const DrawMatrix& draws, const ClusteredDataset& data) {
  if (draws.zeta_dim != static_cast<int>(data.clusters.size()))
    throw std::invalid_argument(
        "conditional evaluation needs latent draws for every cluster (have " +
        std::to_string(draws.zeta_dim) + ", data has " +
        std::to_string(data.clusters.size()) + " clusters)");
}

// full delta matrix (free columns + implied last) for the Rasch family
inline Eigen::MatrixXd rasch_delta_matrix(const ModelSpec& spec, const Layout& lay,
                                          const DrawMatrix& draws) {
  const int I = spec.n_items;
  Eigen::MatrixXd D(draws.data.rows(), I);
  D.leftCols(I - 1) = draws.data.middleCols(lay.delta_offset, I - 1);
  D.col(I - 1) = -D.leftCols(I - 1).rowwise().sum();
  return D;
}

// linear predictor x_j' gamma for every (draw, cluster)
inline Eigen::MatrixXd rasch_pred_matrix(const ModelSpec& spec, const Layout& lay,
                                         const ClusteredDataset& data,
                                         const DrawMatrix& draws) {
  const int K = spec.n_cov;  // includes the intercept column
  const int J = static_cast<int>(data.clusters.size());
  Eigen::MatrixXd X(J, K);
  for (int j = 0; j < J; ++j)
    for (int k = 0; k < K; ++k) X(j, k) = data.clusters[static_cast<std::size_t>(j)].x[k];
  return draws.data.middleCols(lay.gamma_offset, K) * X.transpose();
}

}  // namespace detail

// ---- conditional (unit-level) pointwise matrix ----

inline PointwiseLogLik conditional_pointwise(const ModelSpec& spec, const Layout& lay,
                                             const ClusteredDataset& data,
                                             const DrawMatrix& draws) {
  detail::require_zeta(draws, data);
  const int S = draws.total();
  if (S < 1) throw std::invalid_argument("conditional_pointwise: no draws");

  int P = 0;
  for (const auto& c : data.clusters) P += static_cast<int>(c.units.size());

  PointwiseLogLik pw;
  pw.mode = PredMode::conditional_unit;
  pw.n_chains = draws.n_chains;
  pw.L.resize(S, P);
  pw.labels.reserve(static_cast<std::size_t>(P));
  pw.cluster_of.reserve(static_cast<std::size_t>(P));

  const auto Z = draws.zeta_block();

  if (spec.family == Family::rasch) {
    const Eigen::MatrixXd D = detail::rasch_delta_matrix(spec, lay, draws);
    const Eigen::MatrixXd Pred = detail::rasch_pred_matrix(spec, lay, data, draws);
    int p = 0;
    for (int j = 0; j < static_cast<int>(data.clusters.size()); ++j) {
      const auto& c = data.clusters[static_cast<std::size_t>(j)];
      const Eigen::VectorXd base = Pred.col(j) + Z.col(j);
      for (std::size_t pos = 0; pos < c.units.size(); ++pos, ++p) {
        const int i = c.units[pos];
        const double sgn = c.y[pos] > 0.5 ? 1.0 : -1.0;
        auto e = (sgn * (base - D.col(i)).array()).eval();
        pw.L.col(p) = e.min(0.0) - (-e.abs()).exp().log1p();
        pw.labels.push_back(std::to_string(c.id) + ":" + std::to_string(i + 1));
        pw.cluster_of.push_back(j);
      }
    }
    return pw;
  }

  // gaussian families: per-cell parameter columns, then vector ops per unit
  Eigen::MatrixXd NU, LAM, SIG;
  if (spec.family == Family::cfa) {
    const int I = spec.n_ind, G = spec.n_groups;
    NU.resize(S, I * G);
    LAM.resize(S, I * G);
    SIG.resize(S, I * G);
    Eigen::VectorXd om(lay.n_omega);
    for (int s = 0; s < S; ++s) {
      om = draws.data.row(s).head(lay.n_omega);
      for (int g = 0; g < G; ++g)
        for (int i = 0; i < I; ++i) {
          const int cell = i + g * I;
          NU(s, cell) = detail::cfa_nu(spec, lay, om, i, g);
          LAM(s, cell) = detail::cfa_lambda(spec, lay, om, i, g);
          SIG(s, cell) = detail::cfa_sigma2(spec, lay, om, i, g);
        }
    }
  }

  int p = 0;
  Eigen::VectorXd mu(S), var(S);
  for (int j = 0; j < static_cast<int>(data.clusters.size()); ++j) {
    const auto& c = data.clusters[static_cast<std::size_t>(j)];
    for (std::size_t pos = 0; pos < c.units.size(); ++pos, ++p) {
      const int i = c.units[pos];
      const double y = c.y[pos];
      switch (spec.family) {
        case Family::cfa: {
          const int cell = i + c.group * spec.n_ind;
          mu = NU.col(cell) + (LAM.col(cell).array() * Z.col(j).array()).matrix();
          var = SIG.col(cell);
          break;
        }
        case Family::vc: {
          for (int s = 0; s < S; ++s) {
            const double alpha = spec.version_b ? draws.data(s, lay.alpha_omega_idx) : 0.0;
            mu[s] = alpha + Z(s, j);
            var[s] = draws.data(s, lay.sigma2_idx);
          }
          break;
        }
        case Family::eight_schools: {
          const double sd = detail::es_sd(spec, c, j);
          mu = Z.col(j);
          var.setConstant(sd * sd);
          break;
        }
        default:
          throw std::logic_error("conditional_pointwise: unhandled family");
      }
      pw.L.col(p) = (-0.5 * (log_2pi + var.array().log()) -
                     (y - mu.array()).square() / (2.0 * var.array()))
                        .matrix();
      pw.labels.push_back(std::to_string(c.id) + ":" + std::to_string(i + 1));
      pw.cluster_of.push_back(j);
    }
  }
  return pw;
}

// ---- marginal (cluster-level) pointwise matrices ----

// adapted quadrature grid from the latent draws (prior-scale fallback when a
// cluster's draws are degenerate)
inline AdaptedGrid make_grid(const ModelSpec& spec, const Layout& lay,
                             const ClusteredDataset& data, const DrawMatrix& draws) {
  if (draws.zeta_dim <= 0)
    throw std::invalid_argument("marginal quadrature needs latent draws to adapt on");
  const int S = draws.total();
  const int J = static_cast<int>(data.clusters.size());
  Eigen::VectorXd ps(lay.n_psi);
  double acc = 0.0;
  for (int s = 0; s < S; ++s) {
    ps = draws.data.row(s).segment(lay.n_omega, lay.n_psi);
    for (int j = 0; j < J; ++j)
      acc += latent_var(spec, lay, data.clusters[static_cast<std::size_t>(j)], ps);
  }
  const double fallback = std::sqrt(std::max(acc / (static_cast<double>(S) * J), 1e-12));
  return make_adapted_grid(draws.zeta_block(), fallback);
}

inline PointwiseLogLik marginal_pointwise_closed(const ModelSpec& spec, const Layout& lay,
                                                 const ClusteredDataset& data,
                                                 const DrawMatrix& draws) {
  if (!has_closed_form_marginal(spec.family))
    throw std::invalid_argument("no closed-form marginal for this family");
  const int S = draws.total();
  const int J = static_cast<int>(data.clusters.size());
  if (S < 1) throw std::invalid_argument("marginal_pointwise_closed: no draws");

  PointwiseLogLik pw;
  pw.mode = PredMode::marginal_cluster;
  pw.n_chains = draws.n_chains;
  pw.L.resize(S, J);
  pw.labels.reserve(static_cast<std::size_t>(J));
  pw.cluster_of.reserve(static_cast<std::size_t>(J));
  for (int j = 0; j < J; ++j) {
    pw.labels.push_back(std::to_string(data.clusters[static_cast<std::size_t>(j)].id));
    pw.cluster_of.push_back(j);
  }

  // CFA with complete clusters: per-(draw, group) covariance cache
  bool cfa_complete = spec.family == Family::cfa;
  if (cfa_complete)
    for (const auto& c : data.clusters) {
      if (static_cast<int>(c.units.size()) != spec.n_ind) { cfa_complete = false; break; }
      for (int i = 0; i < spec.n_ind; ++i)
        if (c.units[static_cast<std::size_t>(i)] != i) { cfa_complete = false; break; }
      if (!cfa_complete) break;
    }

  if (cfa_complete) {
    const int I = spec.n_ind, G = spec.n_groups;
    std::vector<Eigen::VectorXd> yv(static_cast<std::size_t>(J));
    for (int j = 0; j < J; ++j)
      yv[static_cast<std::size_t>(j)] =
          Eigen::Map<const Eigen::VectorXd>(data.clusters[static_cast<std::size_t>(j)].y.data(), I);
    Eigen::VectorXd mu(I), lam(I), sig(I), om(lay.n_omega), ps(lay.n_psi);
    for (int s = 0; s < S; ++s) {
      om = draws.data.row(s).head(lay.n_omega);
      ps = draws.data.row(s).segment(lay.n_omega, lay.n_psi);
      std::vector<Eigen::LLT<Eigen::MatrixXd>> llt(static_cast<std::size_t>(G));
      std::vector<Eigen::VectorXd> mug(static_cast<std::size_t>(G));
      std::vector<double> half_logdet(static_cast<std::size_t>(G));
      for (int g = 0; g < G; ++g) {
        const double alpha = detail::cfa_alpha(lay, ps, g);
        const double tau2 = detail::cfa_tau2(lay, ps, g);
        for (int i = 0; i < I; ++i) {
          lam[i] = detail::cfa_lambda(spec, lay, om, i, g);
          mu[i] = detail::cfa_nu(spec, lay, om, i, g) + lam[i] * alpha;
          sig[i] = detail::cfa_sigma2(spec, lay, om, i, g);
        }
        Eigen::MatrixXd Sig = tau2 * lam * lam.transpose();
        Sig.diagonal() += sig;
        llt[static_cast<std::size_t>(g)].compute(Sig);
        if (llt[static_cast<std::size_t>(g)].info() != Eigen::Success)
          throw std::runtime_error("marginal covariance not positive definite");
        half_logdet[static_cast<std::size_t>(g)] =
            llt[static_cast<std::size_t>(g)].matrixL().toDenseMatrix().diagonal().array().log().sum();
        mug[static_cast<std::size_t>(g)] = mu;
      }
      for (int j = 0; j < J; ++j) {
        const int g = data.clusters[static_cast<std::size_t>(j)].group;
        const Eigen::VectorXd r = yv[static_cast<std::size_t>(j)] - mug[static_cast<std::size_t>(g)];
        const double quad = r.dot(llt[static_cast<std::size_t>(g)].solve(r));
        pw.L(s, j) = -0.5 * (I * log_2pi + quad) - half_logdet[static_cast<std::size_t>(g)];
      }
    }
    return pw;
  }

  for (int s = 0; s < S; ++s) {
    const Eigen::VectorXd om = draws.omega(s);
    const Eigen::VectorXd ps = draws.psi(s);
    for (int j = 0; j < J; ++j)
      pw.L(s, j) = marg_loglik_cluster_closed(spec, lay, data.clusters[static_cast<std::size_t>(j)],
                                              om, ps, j);
  }
  return pw;
}

inline PointwiseLogLik marginal_pointwise_quad(const ModelSpec& spec, const Layout& lay,
                                               const ClusteredDataset& data,
                                               const DrawMatrix& draws, const AdaptedGrid& grid,
                                               const GaussHermiteRule& rule) {
  const int S = draws.total();
  const int J = static_cast<int>(data.clusters.size());
  if (S < 1) throw std::invalid_argument("marginal_pointwise_quad: no draws");
  if (static_cast<int>(grid.mu.size()) != J)
    throw std::invalid_argument("adapted grid does not match dataset");

  PointwiseLogLik pw;
  pw.mode = PredMode::marginal_cluster;
  pw.n_chains = draws.n_chains;
  pw.L.resize(S, J);
  for (int j = 0; j < J; ++j) {
    pw.labels.push_back(std::to_string(data.clusters[static_cast<std::size_t>(j)].id));
    pw.cluster_of.push_back(j);
  }
  for (int s = 0; s < S; ++s) {
    const Eigen::VectorXd om = draws.omega(s);
    const Eigen::VectorXd ps = draws.psi(s);
    for (int j = 0; j < J; ++j)
      pw.L(s, j) = marg_loglik_cluster_quad(spec, lay, data.clusters[static_cast<std::size_t>(j)],
                                            om, ps, grid.mu[j], grid.phi[j], rule, j);
  }
  return pw;
}

// closed form when available, else quadrature at M points
inline PointwiseLogLik marginal_pointwise(const ModelSpec& spec, const Layout& lay,
                                          const ClusteredDataset& data, const DrawMatrix& draws,
                                          int M = 0) {
  if (M <= 0) {
    if (!has_closed_form_marginal(spec.family))
      throw std::invalid_argument("family needs a quadrature point count M");
    return marginal_pointwise_closed(spec, lay, data, draws);
  }
  const AdaptedGrid grid = make_grid(spec, lay, data, draws);
  return marginal_pointwise_quad(spec, lay, data, draws, grid, gh_rule(M));
}

// ---- deviance series and plug-in deviances ----

inline Eigen::VectorXd deviance_series(const PointwiseLogLik& pw) {
  const int S = pw.n_draws();
  Eigen::VectorXd dev(S);
  for (int s = 0; s < S; ++s) dev[s] = -2.0 * stable_sum(pw.L.row(s).transpose());
  return dev;
}

inline double plugin_deviance(const std::function<double(const ParamPoint&)>& total_loglik,
                              const ParamPoint& at) {
  const double ll = total_loglik(at);
  if (std::isnan(ll)) throw std::domain_error("plugin deviance: log-likelihood is NaN");
  return -2.0 * ll;
}

inline double total_conditional_loglik(const ModelSpec& spec, const Layout& lay,
                                       const ClusteredDataset& data, const Eigen::VectorXd& omega,
                                       const Eigen::VectorXd& zeta) {
  std::vector<double> terms;
  terms.reserve(data.clusters.size());
  for (std::size_t j = 0; j < data.clusters.size(); ++j)
    terms.push_back(cond_loglik_cluster(spec, lay, data.clusters[j], omega,
                                        zeta[static_cast<Eigen::Index>(j)],
                                        static_cast<int>(j)));
  return stable_sum(std::move(terms));
}

inline double total_marginal_loglik_closed(const ModelSpec& spec, const Layout& lay,
                                           const ClusteredDataset& data,
                                           const Eigen::VectorXd& omega,
                                           const Eigen::VectorXd& psi) {
  std::vector<double> terms;
  terms.reserve(data.clusters.size());
  for (std::size_t j = 0; j < data.clusters.size(); ++j)
    terms.push_back(marg_loglik_cluster_closed(spec, lay, data.clusters[j], omega, psi,
                                               static_cast<int>(j)));
  return stable_sum(std::move(terms));
}

inline double total_marginal_loglik_quad(const ModelSpec& spec, const Layout& lay,
                                         const ClusteredDataset& data,
                                         const Eigen::VectorXd& omega, const Eigen::VectorXd& psi,
                                         const AdaptedGrid& grid, const GaussHermiteRule& rule) {
  std::vector<double> terms;
  terms.reserve(data.clusters.size());
  for (std::size_t j = 0; j < data.clusters.size(); ++j)
    terms.push_back(marg_loglik_cluster_quad(spec, lay, data.clusters[j], omega, psi,
                                             grid.mu[static_cast<Eigen::Index>(j)],
                                             grid.phi[static_cast<Eigen::Index>(j)], rule,
                                             static_cast<int>(j)));
  return stable_sum(std::move(terms));
}

inline double plugin_deviance_conditional(const ModelSpec& spec, const Layout& lay,
                                          const ClusteredDataset& data, const DrawMatrix& draws) {
  detail::require_zeta(draws, data);
  const ParamPoint tilde = draws.posterior_mean();
  return -2.0 * total_conditional_loglik(spec, lay, data, tilde.omega, tilde.zeta);
}

inline double plugin_deviance_marginal(const ModelSpec& spec, const Layout& lay,
                                       const ClusteredDataset& data, const DrawMatrix& draws,
                                       int M = 0) {
  const ParamPoint tilde = draws.posterior_mean();
  if (M <= 0) {
    if (!has_closed_form_marginal(spec.family))
      throw std::invalid_argument("family needs a quadrature point count M");
    return -2.0 * total_marginal_loglik_closed(spec, lay, data, tilde.omega, tilde.psi);
  }
  const AdaptedGrid grid = make_grid(spec, lay, data, draws);
  return -2.0 * total_marginal_loglik_quad(spec, lay, data, tilde.omega, tilde.psi, grid,
                                           gh_rule(M));
}

}  // namespace latic
