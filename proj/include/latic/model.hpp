#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "latic/dataset.hpp"
#include "latic/rng.hpp"
#include "latic/util.hpp"

namespace latic {

enum class Family { rasch, cfa, vc, eight_schools };

inline std::string family_name(Family f) {
  switch (f) {
    case Family::rasch: return "rasch";
    case Family::cfa: return "cfa";
    case Family::vc: return "vc";
    case Family::eight_schools: return "eight-schools";
  }
  return "?";
}

struct NormalPrior {
  double mean = 0.0, var = 1.0;
};
// shape/rate on the precision 1/v
struct GammaPrior {
  double shape = 1.0, rate = 1.0;
};

struct CfaPriors {
  NormalPrior nu{0, 1000}, lambda{0, 100}, alpha{0, 100};
  GammaPrior sigma2{1, 0.5}, tau2{1, 1};
};

inline CfaPriors cfa_priors(const std::string& which) {
  if (which == "default") return {};
  if (which == "uninformative")
    return {{0, 10000}, {0, 1000}, {0, 1000}, {0.01, 0.01}, {0.1, 0.1}};
  if (which == "informative") return {{7, 10}, {0, 1}, {0, 1}, {2.5, 5}, {2.5, 5}};
  throw std::invalid_argument("unknown CFA prior set: " + which);
}

struct VcPriors {
  NormalPrior alpha{0, 1e6};
  GammaPrior sigma2{1e-3, 1e-3}, tau2{1e-3, 1e-3};
};

struct ModelSpec {
  Family family = Family::vc;

  // rasch: I items, K covariates incl. constant; gamma priors are t1 on the
  // standardized scale x* = (x - center) / scale
  int n_items = 0;
  int n_cov = 1;
  Eigen::VectorXd cov_center, cov_scale;  // length K; entry 0 is (0, 1)

  // cfa: I indicators x G groups, restriction pattern "2".."6"
  int n_ind = 0;
  int n_groups = 1;
  std::string pattern;
  CfaPriors priors;
  std::string prior_set = "default";

  // vc: version A (zeta ~ N(alpha, tau2)) or B (mean alpha + zeta, zeta ~ N(0, tau2))
  bool version_b = false;
  VcPriors vc_priors;

  // eight-schools: known unit SDs applied by cluster position when the
  // dataset does not carry them; response scale factor
  Eigen::VectorXd known_sigma;
  double s_scale = 1.0;
};

// Index maps from the structural (i, g) grid into the free-parameter vectors.
// -1 marks a fixed entry (lambda -> 1, alpha -> 0).
struct Layout {
  int n_omega = 0, n_psi = 0;
  std::vector<std::string> omega_names, psi_names;

  // cfa, indexed [i + g*I]
  std::vector<int> nu_idx, lam_idx, sig_idx;
  std::vector<int> alpha_idx, tau_idx;  // per group

  // rasch
  int delta_offset = 0, gamma_offset = 0;

  // vc / eight-schools
  int sigma2_idx = -1;       // omega
  int alpha_omega_idx = -1;  // omega (vc version B)
  int alpha_psi_idx = -1;    // psi
  int tau_psi_idx = -1;      // psi: tau2 (vc/cfa) or tau (rasch/eight-schools)
};

namespace detail {

inline int cfa_pattern_rank(const std::string& p) {
  static const std::vector<std::string> order = {"2", "2a", "3", "3a", "4", "5", "5a", "5b", "6"};
  for (std::size_t k = 0; k < order.size(); ++k)
    if (order[k] == p) return static_cast<int>(k);
  throw std::invalid_argument("unknown CFA restriction pattern: " + p);
}

}  // namespace detail

inline Layout make_layout(const ModelSpec& spec) {
  Layout lay;
  auto push_omega = [&](const std::string& n) {
    lay.omega_names.push_back(n);
    return lay.n_omega++;
  };
  auto push_psi = [&](const std::string& n) {
    lay.psi_names.push_back(n);
    return lay.n_psi++;
  };

  switch (spec.family) {
    case Family::rasch: {
      if (spec.n_items < 2) throw std::invalid_argument("rasch: need n_items >= 2");
      lay.delta_offset = 0;
      for (int i = 0; i < spec.n_items - 1; ++i) push_omega("delta_" + std::to_string(i + 1));
      lay.gamma_offset = lay.n_omega;
      for (int k = 0; k < spec.n_cov; ++k) push_omega("gamma_" + std::to_string(k + 1));
      lay.tau_psi_idx = push_psi("tau");
      break;
    }
    case Family::cfa: {
      const int I = spec.n_ind, G = spec.n_groups;
      if (I < 2 || G < 1) throw std::invalid_argument("cfa: need n_ind >= 2 and n_groups >= 1");
      const int rank = detail::cfa_pattern_rank(spec.pattern);
      lay.nu_idx.assign(static_cast<std::size_t>(I * G), -1);
      lay.lam_idx.assign(static_cast<std::size_t>(I * G), -1);
      lay.sig_idx.assign(static_cast<std::size_t>(I * G), -1);
      lay.alpha_idx.assign(static_cast<std::size_t>(G), -1);
      lay.tau_idx.assign(static_cast<std::size_t>(G), -1);
      auto at = [I](int i, int g) { return static_cast<std::size_t>(i + g * I); };
      auto tag = [](int i, int g) { return std::to_string(i + 1) + std::to_string(g + 1); };

      // intercepts: free per (i,g) through pattern 4, then tied with exceptions
      if (rank <= detail::cfa_pattern_rank("4")) {
        for (int g = 0; g < G; ++g)
          for (int i = 0; i < I; ++i) lay.nu_idx[at(i, g)] = push_omega("nu_" + tag(i, g));
      } else {
        std::set<std::pair<int, int>> free_nu = {{1, 3}};  // nu_24
        if (rank >= detail::cfa_pattern_rank("5a")) free_nu.insert({2, 0});
        if (rank >= detail::cfa_pattern_rank("5b")) free_nu.insert({2, 1});
        for (int i = 0; i < I; ++i) {
          const int tied = push_omega("nu_" + std::to_string(i + 1));
          for (int g = 0; g < G; ++g) lay.nu_idx[at(i, g)] = tied;
        }
        for (auto [i, g] : free_nu) lay.nu_idx[at(i, g)] = push_omega("nu_" + tag(i, g));
      }

      // loadings: first indicator fixed to 1; remaining tied across groups,
      // lambda_24 freed from pattern 2a on
      for (int i = 1; i < I; ++i) {
        const int tied = push_omega("lambda_" + std::to_string(i + 1));
        for (int g = 0; g < G; ++g) lay.lam_idx[at(i, g)] = tied;
      }
      if (rank >= detail::cfa_pattern_rank("2a") && I > 1 && G > 3)
        lay.lam_idx[at(1, 3)] = push_omega("lambda_" + tag(1, 3));

      // unique variances: free until pattern 3 ties them; sigma2_24 freed at 3a
      if (rank < detail::cfa_pattern_rank("3")) {
        for (int g = 0; g < G; ++g)
          for (int i = 0; i < I; ++i) lay.sig_idx[at(i, g)] = push_omega("sigma2_" + tag(i, g));
      } else {
        for (int i = 0; i < I; ++i) {
          const int tied = push_omega("sigma2_" + std::to_string(i + 1));
          for (int g = 0; g < G; ++g) lay.sig_idx[at(i, g)] = tied;
        }
        if (rank >= detail::cfa_pattern_rank("3a") && I > 1 && G > 3)
          lay.sig_idx[at(1, 3)] = push_omega("sigma2_" + tag(1, 3));
      }

      // factor means: fixed at 0 through pattern 4; alpha_1 always 0; pattern 6
      // also sets alpha_3 = alpha_1 = 0
      if (rank >= detail::cfa_pattern_rank("5")) {
        for (int g = 1; g < G; ++g) {
          if (spec.pattern == "6" && g == 2) continue;
          lay.alpha_idx[static_cast<std::size_t>(g)] = push_psi("alpha_" + std::to_string(g + 1));
        }
      }

      // factor variances: free per group until pattern 4 ties (1,2) and (3,4)
      if (rank < detail::cfa_pattern_rank("4")) {
        for (int g = 0; g < G; ++g) lay.tau_idx[static_cast<std::size_t>(g)] = push_psi("tau2_" + std::to_string(g + 1));
      } else {
        const int t12 = push_psi("tau2_12");
        const int t34 = push_psi("tau2_34");
        for (int g = 0; g < G; ++g) lay.tau_idx[static_cast<std::size_t>(g)] = (g < 2) ? t12 : t34;
      }
      break;
    }
    case Family::vc: {
      lay.sigma2_idx = push_omega("sigma2");
      if (spec.version_b) {
        lay.alpha_omega_idx = push_omega("alpha");
        lay.tau_psi_idx = push_psi("tau2");
      } else {
        lay.alpha_psi_idx = push_psi("alpha");
        lay.tau_psi_idx = push_psi("tau2");
      }
      break;
    }
    case Family::eight_schools: {
      lay.alpha_psi_idx = push_psi("alpha");
      lay.tau_psi_idx = push_psi("tau");
      break;
    }
  }
  return lay;
}

struct ParamPoint {
  Eigen::VectorXd omega, psi, zeta;
};

// ---- structural accessors ----

namespace detail {

inline double cfa_nu(const ModelSpec& s, const Layout& l, const Eigen::VectorXd& omega, int i, int g) {
  return omega[l.nu_idx[static_cast<std::size_t>(i + g * s.n_ind)]];
}
inline double cfa_lambda(const ModelSpec& s, const Layout& l, const Eigen::VectorXd& omega, int i, int g) {
  const int k = l.lam_idx[static_cast<std::size_t>(i + g * s.n_ind)];
  return k < 0 ? 1.0 : omega[k];
}
inline double cfa_sigma2(const ModelSpec& s, const Layout& l, const Eigen::VectorXd& omega, int i, int g) {
  return omega[l.sig_idx[static_cast<std::size_t>(i + g * s.n_ind)]];
}
inline double cfa_alpha(const Layout& l, const Eigen::VectorXd& psi, int g) {
  const int k = l.alpha_idx[static_cast<std::size_t>(g)];
  return k < 0 ? 0.0 : psi[k];
}
inline double cfa_tau2(const Layout& l, const Eigen::VectorXd& psi, int g) {
  return psi[l.tau_idx[static_cast<std::size_t>(g)]];
}

inline double rasch_delta(const ModelSpec& s, const Eigen::VectorXd& omega, int i) {
  if (i < s.n_items - 1) return omega[i];
  double sum = 0.0;
  for (int k = 0; k < s.n_items - 1; ++k) sum += omega[k];
  return -sum;  // delta_I = -sum of the free difficulties
}

inline double es_sd(const ModelSpec& spec, const Cluster& c, int cluster_index) {
  if (std::isfinite(c.known_sd)) return c.known_sd;
  if (cluster_index >= 0 && cluster_index < spec.known_sigma.size()) return spec.known_sigma[cluster_index];
  throw std::invalid_argument("eight-schools: no known unit SD for cluster " + std::to_string(c.id));
}

// standardized-scale coefficients from likelihood-scale ones
inline Eigen::VectorXd rasch_gamma_std(const ModelSpec& s, const Eigen::VectorXd& gamma) {
  if (s.cov_center.size() == 0) return gamma;
  Eigen::VectorXd g = gamma;
  for (int k = 1; k < s.n_cov; ++k) {
    g[k] = gamma[k] * s.cov_scale[k];
    g[0] += gamma[k] * s.cov_center[k];
  }
  return g;
}

inline Eigen::VectorXd rasch_gamma_natural(const ModelSpec& s, const Eigen::VectorXd& gamma_std) {
  if (s.cov_center.size() == 0) return gamma_std;
  Eigen::VectorXd g = gamma_std;
  for (int k = 1; k < s.n_cov; ++k) {
    g[k] = gamma_std[k] / s.cov_scale[k];
    g[0] -= gamma_std[k] * s.cov_center[k] / s.cov_scale[k];
  }
  return g;
}

}  // namespace detail

// ---- conditional likelihood (Eq. 1 factor) ----

// pos indexes the cluster's response vector; the stored unit id selects the
// item (rasch) or indicator (cfa). cluster_index disambiguates fixed SDs.
inline double cond_loglik_unit(const ModelSpec& spec, const Layout& lay, const Cluster& c, int pos,
                               const Eigen::VectorXd& omega, double zeta, int cluster_index = -1) {
  const double y = c.y[pos];
  const int unit = c.units[static_cast<std::size_t>(pos)];
  switch (spec.family) {
    case Family::rasch: {
      if (y != 0.0 && y != 1.0) throw std::invalid_argument("rasch: response must be 0 or 1");
      const double pred = omega.segment(lay.gamma_offset, spec.n_cov).dot(c.x);
      return log_bernoulli_logit(y, pred + zeta - detail::rasch_delta(spec, omega, unit));
    }
    case Family::cfa: {
      const double s2 = detail::cfa_sigma2(spec, lay, omega, unit, c.group);
      if (!(s2 > 0.0)) throw std::domain_error("cfa: nonpositive unique variance");
      const double mu = detail::cfa_nu(spec, lay, omega, unit, c.group) +
                        detail::cfa_lambda(spec, lay, omega, unit, c.group) * zeta;
      return log_normal_pdf(y, mu, s2);
    }
    case Family::vc: {
      const double s2 = omega[lay.sigma2_idx];
      if (!(s2 > 0.0)) throw std::domain_error("vc: nonpositive residual variance");
      const double mu = spec.version_b ? omega[lay.alpha_omega_idx] + zeta : zeta;
      return log_normal_pdf(y, mu, s2);
    }
    case Family::eight_schools: {
      const double sd = detail::es_sd(spec, c, cluster_index);
      return log_normal_pdf(y, zeta, sd * sd);
    }
  }
  return neg_inf;
}

inline double cond_loglik_cluster(const ModelSpec& spec, const Layout& lay, const Cluster& c,
                                  const Eigen::VectorXd& omega, double zeta, int cluster_index = -1) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < c.y.size(); ++i)
    s += cond_loglik_unit(spec, lay, c, static_cast<int>(i), omega, zeta, cluster_index);
  return s;
}

// ---- latent (structural) distribution g(zeta_j | psi) ----

inline double latent_mean(const ModelSpec& spec, const Layout& lay, const Cluster& c,
                          const Eigen::VectorXd& psi) {
  switch (spec.family) {
    case Family::rasch: return 0.0;  // covariates enter the measurement predictor
    case Family::cfa: return detail::cfa_alpha(lay, psi, c.group);
    case Family::vc: return spec.version_b ? 0.0 : psi[lay.alpha_psi_idx];
    case Family::eight_schools: return psi[lay.alpha_psi_idx];
  }
  return 0.0;
}

inline double latent_var(const ModelSpec& spec, const Layout& lay, const Cluster& c,
                         const Eigen::VectorXd& psi) {
  switch (spec.family) {
    case Family::rasch: {
      const double t = psi[lay.tau_psi_idx];
      return t * t;
    }
    case Family::cfa: return detail::cfa_tau2(lay, psi, c.group);
    case Family::vc: return psi[lay.tau_psi_idx];
    case Family::eight_schools: {
      const double t = psi[lay.tau_psi_idx];
      return t * t;
    }
  }
  return 0.0;
}

inline double latent_log_prior(const ModelSpec& spec, const Layout& lay, const Cluster& c,
                               const Eigen::VectorXd& psi, double zeta) {
  return log_normal_pdf(zeta, latent_mean(spec, lay, c, psi), latent_var(spec, lay, c, psi));
}

// ---- closed-form marginal likelihood (Gaussian families) ----

inline double marg_loglik_cluster_closed(const ModelSpec& spec, const Layout& lay, const Cluster& c,
                                         const Eigen::VectorXd& omega, const Eigen::VectorXd& psi,
                                         int cluster_index = -1) {
  const Eigen::Index n = c.y.size();
  switch (spec.family) {
    case Family::rasch:
      throw std::invalid_argument("marginal likelihood has no closed form for the rasch family");
    case Family::cfa: {
      const int g = c.group;
      Eigen::VectorXd mu(n), lam(n), s2(n);
      const double alpha = detail::cfa_alpha(lay, psi, g);
      const double tau2 = detail::cfa_tau2(lay, psi, g);
      if (!(tau2 > 0.0)) throw std::domain_error("cfa: nonpositive factor variance");
      for (Eigen::Index i = 0; i < n; ++i) {
        const int ind = c.units[static_cast<std::size_t>(i)];
        lam[i] = detail::cfa_lambda(spec, lay, omega, ind, g);
        mu[i] = detail::cfa_nu(spec, lay, omega, ind, g) + lam[i] * alpha;
        s2[i] = detail::cfa_sigma2(spec, lay, omega, ind, g);
        if (!(s2[i] > 0.0)) throw std::domain_error("cfa: nonpositive unique variance");
      }
      Eigen::MatrixXd cov = tau2 * lam * lam.transpose();
      cov.diagonal() += s2;
      Eigen::LLT<Eigen::MatrixXd> llt(cov);
      if (llt.info() != Eigen::Success) throw std::domain_error("cfa: implied covariance not positive definite");
      const Eigen::VectorXd r = c.y - mu;
      const Eigen::VectorXd z = llt.matrixL().solve(r);
      double logdet = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
      return -0.5 * (static_cast<double>(n) * log_2pi + logdet + z.squaredNorm());
    }
    case Family::vc: {
      const double s2 = omega[lay.sigma2_idx];
      const double t2 = psi[lay.tau_psi_idx];
      const double alpha = spec.version_b ? omega[lay.alpha_omega_idx] : psi[lay.alpha_psi_idx];
      if (!(s2 > 0.0) || !(t2 >= 0.0)) throw std::domain_error("vc: nonpositive variance");
      const double nn = static_cast<double>(n);
      const Eigen::VectorXd r = c.y.array() - alpha;
      const double logdet = (nn - 1.0) * std::log(s2) + std::log(s2 + nn * t2);
      const double quad = r.squaredNorm() / s2 - t2 * r.sum() * r.sum() / (s2 * (s2 + nn * t2));
      return -0.5 * (nn * log_2pi + logdet + quad);
    }
    case Family::eight_schools: {
      const double sd = detail::es_sd(spec, c, cluster_index);
      const double tau = psi[lay.tau_psi_idx];
      double s = 0.0;
      for (Eigen::Index i = 0; i < n; ++i)
        s += log_normal_pdf(c.y[i], psi[lay.alpha_psi_idx], tau * tau + sd * sd);
      return s;
    }
  }
  return neg_inf;
}

inline bool has_closed_form_marginal(Family f) { return f != Family::rasch; }

// ---- priors ----

// Log prior density of the stored parameterization (variances on the variance
// scale; rasch coefficients evaluated at their standardized-scale values, the
// scale the t1 priors are stated on). Out-of-support values return -inf.
inline double log_priors(const ModelSpec& spec, const Layout& lay, const Eigen::VectorXd& omega,
                         const Eigen::VectorXd& psi) {
  double lp = 0.0;
  switch (spec.family) {
    case Family::rasch: {
      for (int i = 0; i < spec.n_items - 1; ++i) lp += log_normal_pdf(omega[i], 0.0, 9.0);
      const Eigen::VectorXd gs =
          detail::rasch_gamma_std(spec, omega.segment(lay.gamma_offset, spec.n_cov));
      for (int k = 0; k < spec.n_cov; ++k) lp += log_t1_pdf(gs[k], 0.0, 1.0);
      lp += log_exponential_pdf(psi[lay.tau_psi_idx], 0.1);
      break;
    }
    case Family::cfa: {
      const CfaPriors& pr = spec.priors;
      for (int k = 0; k < lay.n_omega; ++k) {
        const std::string& n = lay.omega_names[static_cast<std::size_t>(k)];
        if (n.rfind("nu", 0) == 0)
          lp += log_normal_pdf(omega[k], pr.nu.mean, pr.nu.var);
        else if (n.rfind("lambda", 0) == 0)
          lp += log_normal_pdf(omega[k], pr.lambda.mean, pr.lambda.var);
        else
          lp += log_gamma_precision_as_variance_pdf(omega[k], pr.sigma2.shape, pr.sigma2.rate);
      }
      for (int k = 0; k < lay.n_psi; ++k) {
        const std::string& n = lay.psi_names[static_cast<std::size_t>(k)];
        if (n.rfind("alpha", 0) == 0)
          lp += log_normal_pdf(psi[k], pr.alpha.mean, pr.alpha.var);
        else
          lp += log_gamma_precision_as_variance_pdf(psi[k], pr.tau2.shape, pr.tau2.rate);
      }
      break;
    }
    case Family::vc: {
      const VcPriors& pr = spec.vc_priors;
      lp += log_gamma_precision_as_variance_pdf(omega[lay.sigma2_idx], pr.sigma2.shape, pr.sigma2.rate);
      const double alpha = spec.version_b ? omega[lay.alpha_omega_idx] : psi[lay.alpha_psi_idx];
      lp += log_normal_pdf(alpha, pr.alpha.mean, pr.alpha.var);
      lp += log_gamma_precision_as_variance_pdf(psi[lay.tau_psi_idx], pr.tau2.shape, pr.tau2.rate);
      break;
    }
    case Family::eight_schools: {
      // flat on alpha and on tau > 0
      if (psi[lay.tau_psi_idx] <= 0.0) return neg_inf;
      break;
    }
  }
  return lp;
}

// ---- validation and standardization ----

inline void validate_for(const ModelSpec& spec, const ClusteredDataset& data) {
  data.validate();
  switch (spec.family) {
    case Family::rasch: {
      for (const auto& c : data.clusters) {
        int prev = -1;
        for (Eigen::Index i = 0; i < c.y.size(); ++i) {
          if (c.y[i] != 0.0 && c.y[i] != 1.0)
            throw std::invalid_argument("rasch: non-binary response in cluster " + std::to_string(c.id));
          const int u = c.units[static_cast<std::size_t>(i)];
          if (u <= prev || u >= spec.n_items)
            throw std::invalid_argument("rasch: item indices must be strictly increasing within 1..I");
          prev = u;
        }
        if (c.x.size() != spec.n_cov) throw std::invalid_argument("rasch: covariate count mismatch");
      }
      break;
    }
    case Family::cfa: {
      if (data.n_groups != spec.n_groups) throw std::invalid_argument("cfa: group count mismatch");
      for (const auto& c : data.clusters) {
        int prev = -1;
        for (Eigen::Index i = 0; i < c.y.size(); ++i) {
          const int u = c.units[static_cast<std::size_t>(i)];
          if (u <= prev || u >= spec.n_ind)
            throw std::invalid_argument("cfa: indicator indices must be strictly increasing within 1..I");
          prev = u;
        }
      }
      break;
    }
    case Family::vc: break;
    case Family::eight_schools: {
      for (std::size_t j = 0; j < data.clusters.size(); ++j) {
        const auto& c = data.clusters[j];
        if (c.y.size() != 1) throw std::invalid_argument("eight-schools: one unit per cluster");
        detail::es_sd(spec, c, static_cast<int>(j));
      }
      break;
    }
  }
}

// Continuous covariates -> mean 0, SD 0.5; binary -> mean 0, range 1.
inline void standardize_covariates(ModelSpec& spec, const ClusteredDataset& data) {
  const int K = spec.n_cov;
  spec.cov_center = Eigen::VectorXd::Zero(K);
  spec.cov_scale = Eigen::VectorXd::Ones(K);
  const int J = data.n_clusters();
  if (J < 2) return;
  for (int k = 1; k < K; ++k) {
    Eigen::VectorXd v(J);
    for (int j = 0; j < J; ++j) v[j] = data.clusters[static_cast<std::size_t>(j)].x[k];
    const double mean = v.mean();
    const double mn = v.minCoeff(), mx = v.maxCoeff();
    std::set<double> distinct(v.data(), v.data() + v.size());
    if (mx == mn) continue;  // constant column; leave unscaled
    spec.cov_center[k] = mean;
    if (distinct.size() == 2) {
      spec.cov_scale[k] = mx - mn;
    } else {
      const double sd = std::sqrt((v.array() - mean).square().sum() / (J - 1.0));
      spec.cov_scale[k] = 2.0 * sd;
    }
  }
}

// ---- synthetic data ----

inline ClusteredDataset simulate(const ModelSpec& spec, const Layout& lay, const Eigen::VectorXd& omega,
                                 const Eigen::VectorXd& psi, int J, int n_j, std::uint64_t seed,
                                 const Eigen::MatrixXd& covariates = {}, const std::vector<int>& groups = {}) {
  if (J < 1 || n_j < 1) throw std::invalid_argument("simulate: J and n_j must be >= 1");
  Rng rng(seed);
  ClusteredDataset data;
  const Eigen::VectorXd gamma = spec.family == Family::rasch
                                    ? Eigen::VectorXd(omega.segment(lay.gamma_offset, spec.n_cov))
                                    : Eigen::VectorXd();
  for (int j = 0; j < J; ++j) {
    Cluster c;
    c.id = j + 1;
    c.x = Eigen::VectorXd::Ones(1);
    switch (spec.family) {
      case Family::rasch: {
        c.x = Eigen::VectorXd::Ones(spec.n_cov);
        for (int k = 1; k < spec.n_cov; ++k)
          c.x[k] = covariates.size() > 0 ? covariates(j, k - 1) : rng.normal();
        const double tau = psi[lay.tau_psi_idx];
        const double zeta = rng.normal(0.0, tau);
        const double pred = gamma.dot(c.x);
        c.y.resize(spec.n_items);
        c.units.resize(static_cast<std::size_t>(spec.n_items));
        for (int i = 0; i < spec.n_items; ++i) {
          c.units[static_cast<std::size_t>(i)] = i;
          c.y[i] = rng.bernoulli(inv_logit(pred + zeta - detail::rasch_delta(spec, omega, i))) ? 1.0 : 0.0;
        }
        break;
      }
      case Family::cfa: {
        c.group = groups.empty() ? (j * spec.n_groups) / J : groups[static_cast<std::size_t>(j)];
        const double zeta = rng.normal(detail::cfa_alpha(lay, psi, c.group),
                                       std::sqrt(detail::cfa_tau2(lay, psi, c.group)));
        c.y.resize(spec.n_ind);
        c.units.resize(static_cast<std::size_t>(spec.n_ind));
        for (int i = 0; i < spec.n_ind; ++i) {
          c.units[static_cast<std::size_t>(i)] = i;
          c.y[i] = rng.normal(detail::cfa_nu(spec, lay, omega, i, c.group) +
                                  detail::cfa_lambda(spec, lay, omega, i, c.group) * zeta,
                              std::sqrt(detail::cfa_sigma2(spec, lay, omega, i, c.group)));
        }
        break;
      }
      case Family::vc: {
        const double alpha = spec.version_b ? omega[lay.alpha_omega_idx] : psi[lay.alpha_psi_idx];
        const double tau2 = psi[lay.tau_psi_idx];
        const double zeta = spec.version_b ? rng.normal(0.0, std::sqrt(tau2)) : rng.normal(alpha, std::sqrt(tau2));
        const double sd = std::sqrt(omega[lay.sigma2_idx]);
        const double mean = spec.version_b ? alpha + zeta : zeta;
        c.y.resize(n_j);
        c.units.resize(static_cast<std::size_t>(n_j));
        for (int i = 0; i < n_j; ++i) {
          c.units[static_cast<std::size_t>(i)] = i;
          c.y[i] = rng.normal(mean, sd);
        }
        break;
      }
      case Family::eight_schools: {
        if (spec.known_sigma.size() != J) throw std::invalid_argument("eight-schools: known_sigma must have length J");
        c.known_sd = spec.known_sigma[j];
        const double zeta = rng.normal(psi[lay.alpha_psi_idx], psi[lay.tau_psi_idx]);
        c.y = Eigen::VectorXd::Constant(1, rng.normal(zeta, c.known_sd));
        c.units = {0};
        break;
      }
    }
    data.clusters.push_back(std::move(c));
  }
  if (spec.family == Family::cfa) {
    data.has_groups = true;
    data.n_groups = spec.n_groups;
  }
  validate_for(spec, data);
  return data;
}

}  // namespace latic
