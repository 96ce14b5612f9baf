#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "latic/dataset.hpp"
#include "latic/diagnostics.hpp"
#include "latic/draws.hpp"
#include "latic/model.hpp"
#include "latic/rng.hpp"
#include "latic/util.hpp"

namespace latic {

// multipliers on the family-informed initial proposal scales
struct ProposalScales {
  double location = 1.0, log_scale = 1.0, zeta = 1.0;
};

struct ChainConfig {
  int n_chains = 5;
  int n_warmup = 500;
  int n_keep = 2000;
  std::uint64_t seed = 1;
  ProposalScales scales;
  double target_accept = 0.44;
  double rhat_threshold = 1.05;
  int max_extensions = 0;               // extend-and-recheck rounds of n_keep each when the gate fails
  std::map<std::string, double> fixed;  // pin named omega/psi entries; the sampler skips them
};

struct RhatEntry {
  std::string name;
  double value = 1.0;
};

struct FitResult {
  DrawMatrix draws;
  bool converged = true;
  int extensions = 0;
  double max_rhat = std::numeric_limits<double>::quiet_NaN();
  std::vector<RhatEntry> rhat;          // omega and psi entries
  std::vector<std::string> site_names;  // Metropolis sites actually sampled
  Eigen::VectorXd accept_rate;          // per site, retained phase, pooled over chains
};

namespace detail {

// Scalar random-walk sites with Robbins-Monro scale adaptation during warm-up
// only; scales freeze afterward so the retained phase is a fixed kernel.
class MhBank {
 public:
  explicit MhBank(double target) : target_(target) {}

  int add(const std::string& name, double init_scale) {
    names_.push_back(name);
    log_scale_.push_back(std::log(init_scale));
    proposals_.push_back(0);
    accepts_.push_back(0);
    return static_cast<int>(names_.size()) - 1;
  }

  double propose(int k, double x, Rng& rng) const {
    return x + std::exp(log_scale_[static_cast<std::size_t>(k)]) * rng.normal();
  }

  bool decide(int k, double log_ratio, Rng& rng, bool warmup, long t) {
    const bool acc = log_ratio >= 0.0 || std::log(rng.uniform()) < log_ratio;
    if (warmup) {
      const double eta = 2.0 * std::pow(static_cast<double>(t), -0.7);
      auto& ls = log_scale_[static_cast<std::size_t>(k)];
      ls = std::clamp(ls + eta * ((acc ? 1.0 : 0.0) - target_), -8.0, 5.0);
    } else {
      ++proposals_[static_cast<std::size_t>(k)];
      if (acc) ++accepts_[static_cast<std::size_t>(k)];
    }
    return acc;
  }

  const std::vector<std::string>& names() const { return names_; }
  const std::vector<long>& proposals() const { return proposals_; }
  const std::vector<long>& accepts() const { return accepts_; }

 private:
  double target_;
  std::vector<std::string> names_;
  std::vector<double> log_scale_;
  std::vector<long> proposals_, accepts_;
};

inline std::optional<double> pinned_value(const ChainConfig& cfg, const std::string& name) {
  auto it = cfg.fixed.find(name);
  if (it == cfg.fixed.end()) return std::nullopt;
  return it->second;
}

class Chain {
 public:
  explicit Chain(double target) : mh_(target) {}
  virtual ~Chain() = default;
  virtual void init(Rng& rng) = 0;
  virtual void sweep(Rng& rng, bool warmup, long t) = 0;
  virtual void record(double* row) const = 0;  // n_omega + n_psi + J natural-scale values
  const MhBank& bank() const { return mh_; }

 protected:
  MhBank mh_;
};

// ---- latent regression Rasch ----
//
// Caches the per-unit Bernoulli log-likelihood matrix U (J x I, masked by the
// observation pattern) with row/column sums, so each scalar update touches
// only the terms its parameter enters. Regression coefficients are sampled on
// the standardized covariate scale (where their priors live) and recorded on
// the natural scale.
class RaschChain : public Chain {
 public:
  RaschChain(const ModelSpec& spec, const Layout& lay, const ClusteredDataset& data,
             const ChainConfig& cfg)
      : Chain(cfg.target_accept), spec_(spec), lay_(lay) {
    J_ = data.n_clusters();
    I_ = spec.n_items;
    K_ = spec.n_cov;
    Y_.setZero(J_, I_);
    W_.setZero(J_, I_);
    xstd_.resize(J_, K_);
    for (int j = 0; j < J_; ++j) {
      const Cluster& c = data.clusters[static_cast<std::size_t>(j)];
      for (Eigen::Index p = 0; p < c.y.size(); ++p) {
        const int i = c.units[static_cast<std::size_t>(p)];
        Y_(j, i) = c.y[p];
        W_(j, i) = 1.0;
      }
      xstd_(j, 0) = 1.0;
      const bool standardized = spec.cov_center.size() == K_;
      for (int k = 1; k < K_; ++k)
        xstd_(j, k) = standardized ? (c.x[k] - spec.cov_center[k]) / spec.cov_scale[k] : c.x[k];
    }
    sgn_ = 2.0 * Y_.array() - 1.0;
    n_obs_ = W_.sum();

    for (const auto& [name, v] : cfg.fixed) {
      if (name.rfind("gamma", 0) == 0)
        throw std::invalid_argument("rasch: pinning regression coefficients is not supported");
      if (name == "tau" && !(v > 0.0))
        throw std::invalid_argument("rasch: pinned tau must be positive");
    }
    delta_site_.assign(static_cast<std::size_t>(I_ - 1), -1);
    for (int i = 0; i < I_ - 1; ++i)
      if (!pinned_value(cfg, lay.omega_names[static_cast<std::size_t>(i)]))
        delta_site_[static_cast<std::size_t>(i)] =
            mh_.add(lay.omega_names[static_cast<std::size_t>(i)], 0.25 * cfg.scales.location);
    gamma_site_.assign(static_cast<std::size_t>(K_), -1);
    for (int k = 0; k < K_; ++k)
      gamma_site_[static_cast<std::size_t>(k)] =
          mh_.add(lay.omega_names[static_cast<std::size_t>(lay.gamma_offset + k)], 0.1 * cfg.scales.location);
    pin_tau_ = pinned_value(cfg, "tau");
    if (!pin_tau_) tau_site_ = mh_.add("tau", 0.3 * cfg.scales.log_scale);
    zeta_site_.resize(static_cast<std::size_t>(J_));
    for (int j = 0; j < J_; ++j)
      zeta_site_[static_cast<std::size_t>(j)] = mh_.add("zeta_" + std::to_string(j + 1), 0.8 * cfg.scales.zeta);
    for (const auto& [name, v] : cfg.fixed)
      if (name.rfind("delta", 0) == 0) pin_delta_[name] = v;
  }

  void init(Rng& rng) override {
    auto clamp_p = [](double p) { return std::clamp(p, 0.02, 0.98); };
    auto logit = [&](double p) { p = clamp_p(p); return std::log(p / (1.0 - p)); };

    delta_.resize(I_ - 1);
    Eigen::VectorXd item_logit(I_);
    for (int i = 0; i < I_; ++i) {
      const double n = W_.col(i).sum();
      item_logit[i] = n > 0 ? logit(Y_.col(i).sum() / n) : 0.0;
    }
    const double center = item_logit.mean();
    for (int i = 0; i < I_ - 1; ++i) {
      delta_[i] = -(item_logit[i] - center) + 0.3 * rng.normal();
      auto it = pin_delta_.find(lay_.omega_names[static_cast<std::size_t>(i)]);
      if (it != pin_delta_.end()) delta_[i] = it->second;
    }

    const double overall = logit(Y_.sum() / n_obs_);
    gstar_ = Eigen::VectorXd::Zero(K_);
    gstar_[0] = overall + 0.3 * rng.normal();
    for (int k = 1; k < K_; ++k) gstar_[k] = 0.3 * rng.normal();

    log_tau_ = pin_tau_ ? std::log(*pin_tau_) : 0.25 * rng.normal();

    zeta_.resize(J_);
    for (int j = 0; j < J_; ++j) {
      const double n = W_.row(j).sum();
      const double pj = n > 0 ? Y_.row(j).sum() / n : 0.5;
      zeta_[j] = 0.5 * (logit(pj) - overall) + 0.3 * rng.normal();
    }
    rebuild();
  }

  void sweep(Rng& rng, bool warmup, long t) override {
    const double tau = std::exp(log_tau_);
    double tau2 = tau * tau;
    sum_z2_ = zeta_.squaredNorm();

    // latent abilities
    Eigen::VectorXd row_new(I_);
    for (int j = 0; j < J_; ++j) {
      const int k = zeta_site_[static_cast<std::size_t>(j)];
      const double z = zeta_[j];
      const double zn = mh_.propose(k, z, rng);
      row_eval(j, pred_[j] + zn, row_new);
      const double lr = row_new.sum() - row_sum_[j] - (zn * zn - z * z) / (2.0 * tau2);
      if (mh_.decide(k, lr, rng, warmup, t)) {
        for (int i = 0; i < I_; ++i) {
          const double d = row_new[i] - U_(j, i);
          U_(j, i) = row_new[i];
          col_sum_[i] += d;
        }
        row_sum_[j] = row_new.sum();
        pz_[j] = pred_[j] + zn;
        sum_z2_ += zn * zn - z * z;
        zeta_[j] = zn;
      }
    }
    total_ = row_sum_.sum();

    // item difficulties under the sum-to-zero constraint: moving a free delta
    // also moves the last item's difficulty
    Eigen::VectorXd col_a(J_), col_b(J_);
    const int last = I_ - 1;
    for (int i = 0; i < I_ - 1; ++i) {
      const int k = delta_site_[static_cast<std::size_t>(i)];
      if (k < 0) continue;
      const double d = delta_[i];
      const double dn = mh_.propose(k, d, rng);
      const double dlast_n = delta_full_[last] - (dn - d);
      col_eval(i, dn, col_a);
      col_eval(last, dlast_n, col_b);
      const double lr = col_a.sum() - col_sum_[i] + col_b.sum() - col_sum_[last] +
                        (d * d - dn * dn) / 18.0;  // N(0, 9) prior on the free difficulties
      if (mh_.decide(k, lr, rng, warmup, t)) {
        apply_col(i, col_a);
        apply_col(last, col_b);
        delta_[i] = dn;
        delta_full_[i] = dn;
        delta_full_[last] = dlast_n;
        total_ = row_sum_.sum();
      }
    }

    // regression coefficients on the standardized scale, t1 priors
    for (int k = 0; k < K_; ++k) {
      const int site = gamma_site_[static_cast<std::size_t>(k)];
      const double g = gstar_[k];
      const double gn = mh_.propose(site, g, rng);
      pred_prop_ = pred_ + (gn - g) * xstd_.col(k);
      pz_prop_ = pred_prop_ + zeta_;
      full_eval(pz_prop_, U_prop_);
      const double total_new = U_prop_.sum();
      const double lr = total_new - total_ + log_t1_pdf(gn, 0.0, 1.0) - log_t1_pdf(g, 0.0, 1.0);
      if (mh_.decide(site, lr, rng, warmup, t)) {
        gstar_[k] = gn;
        pred_.swap(pred_prop_);
        pz_.swap(pz_prop_);
        U_.swap(U_prop_);
        row_sum_ = U_.rowwise().sum();
        col_sum_ = U_.colwise().sum();
        total_ = total_new;
      }
    }

    // ability scale: random walk on log tau with Exp(0.1) prior and Jacobian
    if (!pin_tau_) {
      const double x = log_tau_;
      const double xn = mh_.propose(tau_site_, x, rng);
      const double tn = std::exp(xn);
      const double lr = -static_cast<double>(J_) * (xn - x) - sum_z2_ / 2.0 * (1.0 / (tn * tn) - 1.0 / tau2) -
                        0.1 * (tn - tau) + (xn - x);
      if (mh_.decide(tau_site_, lr, rng, warmup, t)) log_tau_ = xn;
    }
  }

  void record(double* row) const override {
    for (int i = 0; i < I_ - 1; ++i) row[i] = delta_[i];
    const Eigen::VectorXd g = rasch_gamma_natural(spec_, gstar_);
    for (int k = 0; k < K_; ++k) row[lay_.gamma_offset + k] = g[k];
    row[lay_.n_omega] = std::exp(log_tau_);
    for (int j = 0; j < J_; ++j) row[lay_.n_omega + 1 + j] = zeta_[j];
  }

 private:
  static double loglogit(double signed_eta) {
    return std::min(signed_eta, 0.0) - std::log1p(std::exp(-std::abs(signed_eta)));
  }

  void row_eval(int j, double pzj, Eigen::VectorXd& out) const {
    for (int i = 0; i < I_; ++i)
      out[i] = W_(j, i) != 0.0 ? loglogit(sgn_(j, i) * (pzj - delta_full_[i])) : 0.0;
  }

  void col_eval(int i, double di, Eigen::VectorXd& out) const {
    for (int j = 0; j < J_; ++j)
      out[j] = W_(j, i) != 0.0 ? loglogit(sgn_(j, i) * (pz_[j] - di)) : 0.0;
  }

  void full_eval(const Eigen::VectorXd& pz, Eigen::MatrixXd& out) {
    eta_ = (-delta_full_).transpose().replicate(J_, 1);
    eta_.colwise() += pz;
    eta_.array() *= sgn_.array();
    out = (eta_.array().min(0.0) - (-eta_.array().abs()).exp().log1p()).matrix();
    out.array() *= W_.array();  // masked entries are finite, so the product zeroes them
  }

  void apply_col(int i, const Eigen::VectorXd& col) {
    for (int j = 0; j < J_; ++j) {
      row_sum_[j] += col[j] - U_(j, i);
      U_(j, i) = col[j];
    }
    col_sum_[i] = col.sum();
  }

  void rebuild() {
    delta_full_.resize(I_);
    for (int i = 0; i < I_ - 1; ++i) delta_full_[i] = delta_[i];
    delta_full_[I_ - 1] = -delta_.sum();
    pred_ = xstd_ * gstar_;
    pz_ = pred_ + zeta_;
    U_.resize(J_, I_);
    U_prop_.resize(J_, I_);
    full_eval(pz_, U_);
    row_sum_ = U_.rowwise().sum();
    col_sum_ = U_.colwise().sum();
    total_ = U_.sum();
    sum_z2_ = zeta_.squaredNorm();
  }

  ModelSpec spec_;
  Layout lay_;
  int J_ = 0, I_ = 0, K_ = 0;
  Eigen::MatrixXd Y_, W_, sgn_, xstd_;
  double n_obs_ = 0;

  Eigen::VectorXd delta_, delta_full_, gstar_, zeta_;
  double log_tau_ = 0.0;
  std::optional<double> pin_tau_;
  std::map<std::string, double> pin_delta_;

  Eigen::MatrixXd U_, U_prop_, eta_;
  Eigen::VectorXd pred_, pred_prop_, pz_, pz_prop_, row_sum_, col_sum_;
  double total_ = 0.0, sum_z2_ = 0.0;

  std::vector<int> delta_site_, gamma_site_, zeta_site_;
  int tau_site_ = -1;
};

// ---- multiple-group one-factor CFA ----
//
// Normal likelihood admits sufficient statistics per (indicator, group) cell,
// so measurement-parameter updates cost O(cells) instead of O(clusters). The
// cell statistics involving zeta are rebuilt once per sweep after the latent
// block moves; variances walk on the log scale.
class CfaChain : public Chain {
 public:
  CfaChain(const ModelSpec& spec, const Layout& lay, const ClusteredDataset& data, const ChainConfig& cfg)
      : Chain(cfg.target_accept), spec_(spec), lay_(lay), data_(&data) {
    I_ = spec.n_ind;
    G_ = spec.n_groups;
    J_ = data.n_clusters();
    const std::size_t C = static_cast<std::size_t>(I_ * G_);
    cell_n_.assign(C, 0.0);
    cell_sy_.assign(C, 0.0);
    cell_syy_.assign(C, 0.0);
    cell_sz_.assign(C, 0.0);
    cell_szz_.assign(C, 0.0);
    cell_syz_.assign(C, 0.0);
    grp_n_.assign(static_cast<std::size_t>(G_), 0.0);
    for (int j = 0; j < J_; ++j) {
      const Cluster& c = data.clusters[static_cast<std::size_t>(j)];
      grp_n_[static_cast<std::size_t>(c.group)] += 1.0;
      for (Eigen::Index p = 0; p < c.y.size(); ++p) {
        const std::size_t cell = static_cast<std::size_t>(c.units[static_cast<std::size_t>(p)] + c.group * I_);
        cell_n_[cell] += 1.0;
        cell_sy_[cell] += c.y[p];
        cell_syy_[cell] += c.y[p] * c.y[p];
      }
    }

    // one site per free parameter, honoring pins
    omega_ = Eigen::VectorXd::Zero(lay.n_omega);
    psi_ = Eigen::VectorXd::Zero(lay.n_psi);
    omega_site_.assign(static_cast<std::size_t>(lay.n_omega), -1);
    psi_site_.assign(static_cast<std::size_t>(lay.n_psi), -1);
    const double vbar = init_vbar();
    for (int k = 0; k < lay.n_omega; ++k) {
      const std::string& n = lay.omega_names[static_cast<std::size_t>(k)];
      if (auto p = pinned_value(cfg, n)) {
        if (n.rfind("sigma2", 0) == 0 && !(*p > 0.0))
          throw std::invalid_argument("cfa: pinned unique variance must be positive");
        pin_omega_[k] = *p;
        continue;
      }
      const double base = n.rfind("sigma2", 0) == 0 ? 0.3 * cfg.scales.log_scale
                                                    : 0.2 * std::sqrt(vbar) * cfg.scales.location;
      omega_site_[static_cast<std::size_t>(k)] = mh_.add(n, base);
    }
    for (int k = 0; k < lay.n_psi; ++k) {
      const std::string& n = lay.psi_names[static_cast<std::size_t>(k)];
      if (auto p = pinned_value(cfg, n)) {
        if (n.rfind("tau2", 0) == 0 && !(*p > 0.0))
          throw std::invalid_argument("cfa: pinned factor variance must be positive");
        pin_psi_[k] = *p;
        continue;
      }
      const double base = n.rfind("tau2", 0) == 0 ? 0.3 * cfg.scales.log_scale
                                                  : 0.2 * std::sqrt(vbar) * cfg.scales.location;
      psi_site_[static_cast<std::size_t>(k)] = mh_.add(n, base);
    }
    zeta_site_.resize(static_cast<std::size_t>(J_));
    for (int j = 0; j < J_; ++j)
      zeta_site_[static_cast<std::size_t>(j)] =
          mh_.add("zeta_" + std::to_string(j + 1), 0.5 * std::sqrt(vbar) * cfg.scales.zeta);

    // inverse maps: which cells a measurement site touches, which groups a
    // structural site touches
    cells_of_.assign(static_cast<std::size_t>(lay.n_omega), {});
    for (int g = 0; g < G_; ++g)
      for (int i = 0; i < I_; ++i) {
        const int cell = i + g * I_;
        if (lay.nu_idx[static_cast<std::size_t>(cell)] >= 0)
          cells_of_[static_cast<std::size_t>(lay.nu_idx[static_cast<std::size_t>(cell)])].push_back(cell);
        if (lay.lam_idx[static_cast<std::size_t>(cell)] >= 0)
          cells_of_[static_cast<std::size_t>(lay.lam_idx[static_cast<std::size_t>(cell)])].push_back(cell);
        if (lay.sig_idx[static_cast<std::size_t>(cell)] >= 0)
          cells_of_[static_cast<std::size_t>(lay.sig_idx[static_cast<std::size_t>(cell)])].push_back(cell);
      }
    groups_of_.assign(static_cast<std::size_t>(lay.n_psi), {});
    for (int g = 0; g < G_; ++g) {
      if (lay.alpha_idx[static_cast<std::size_t>(g)] >= 0)
        groups_of_[static_cast<std::size_t>(lay.alpha_idx[static_cast<std::size_t>(g)])].push_back(g);
      groups_of_[static_cast<std::size_t>(lay.tau_idx[static_cast<std::size_t>(g)])].push_back(g);
    }
  }

  void init(Rng& rng) override {
    // data-informed centers with chain-specific jitter
    const double vbar = init_vbar();
    for (int k = 0; k < lay_.n_omega; ++k) {
      const std::string& n = lay_.omega_names[static_cast<std::size_t>(k)];
      double m = 0.0, v = 0.0, cnt = 0.0;
      for (int cell : cells_of_[static_cast<std::size_t>(k)]) {
        const std::size_t c = static_cast<std::size_t>(cell);
        if (cell_n_[c] < 2) continue;
        const double mean = cell_sy_[c] / cell_n_[c];
        m += mean;
        v += (cell_syy_[c] - cell_n_[c] * mean * mean) / (cell_n_[c] - 1.0);
        cnt += 1.0;
      }
      m = cnt > 0 ? m / cnt : 0.0;
      v = cnt > 0 ? std::max(v / cnt, 1e-3) : vbar;
      if (n.rfind("nu", 0) == 0)
        omega_[k] = m + 0.2 * std::sqrt(v) * rng.normal();
      else if (n.rfind("lambda", 0) == 0)
        omega_[k] = 1.0 + 0.3 * rng.normal();
      else
        omega_[k] = 0.5 * v * std::exp(0.4 * rng.normal());
      if (auto it = pin_omega_.find(k); it != pin_omega_.end()) omega_[k] = it->second;
    }
    const double tbar = between_var();
    for (int k = 0; k < lay_.n_psi; ++k) {
      const std::string& n = lay_.psi_names[static_cast<std::size_t>(k)];
      psi_[k] = n.rfind("tau2", 0) == 0 ? tbar * std::exp(0.4 * rng.normal()) : 0.3 * rng.normal();
      if (auto it = pin_psi_.find(k); it != pin_psi_.end()) psi_[k] = it->second;
    }
    zeta_.resize(J_);
    for (int j = 0; j < J_; ++j) {
      const Cluster& c = data_->clusters[static_cast<std::size_t>(j)];
      double dev = 0.0;
      for (Eigen::Index p = 0; p < c.y.size(); ++p) {
        const std::size_t cell = static_cast<std::size_t>(c.units[static_cast<std::size_t>(p)] + c.group * I_);
        dev += c.y[p] - cell_sy_[cell] / std::max(cell_n_[cell], 1.0);
      }
      zeta_[j] = dev / static_cast<double>(c.y.size()) + 0.3 * std::sqrt(tbar) * rng.normal();
    }
  }

  void sweep(Rng& rng, bool warmup, long t) override {
    // latent factors first, then rebuild the zeta-dependent cell statistics
    for (int j = 0; j < J_; ++j) {
      const Cluster& c = data_->clusters[static_cast<std::size_t>(j)];
      const int k = zeta_site_[static_cast<std::size_t>(j)];
      const double z = zeta_[j];
      const double zn = mh_.propose(k, z, rng);
      double lr = 0.0;
      for (Eigen::Index p = 0; p < c.y.size(); ++p) {
        const int i = c.units[static_cast<std::size_t>(p)];
        const double lam = cfa_lambda(spec_, lay_, omega_, i, c.group);
        const double nu = cfa_nu(spec_, lay_, omega_, i, c.group);
        const double s2 = cfa_sigma2(spec_, lay_, omega_, i, c.group);
        const double rn = c.y[p] - nu - lam * zn;
        const double ro = c.y[p] - nu - lam * z;
        lr -= (rn * rn - ro * ro) / (2.0 * s2);
      }
      const double a = cfa_alpha(lay_, psi_, c.group);
      const double t2 = cfa_tau2(lay_, psi_, c.group);
      lr -= ((zn - a) * (zn - a) - (z - a) * (z - a)) / (2.0 * t2);
      if (mh_.decide(k, lr, rng, warmup, t)) zeta_[j] = zn;
    }
    rebuild_zeta_stats();

    const CfaPriors& pr = spec_.priors;
    for (int k = 0; k < lay_.n_omega; ++k) {
      const int site = omega_site_[static_cast<std::size_t>(k)];
      if (site < 0) continue;
      const std::string& n = lay_.omega_names[static_cast<std::size_t>(k)];
      const double x = omega_[k];
      if (n.rfind("nu", 0) == 0) {
        const double xn = mh_.propose(site, x, rng);
        double lr = log_normal_pdf(xn, pr.nu.mean, pr.nu.var) - log_normal_pdf(x, pr.nu.mean, pr.nu.var);
        for (int cell : cells_of_[static_cast<std::size_t>(k)]) {
          const std::size_t c = static_cast<std::size_t>(cell);
          const int i = cell % I_, g = cell / I_;
          const double lam = cfa_lambda(spec_, lay_, omega_, i, g);
          const double s2 = cfa_sigma2(spec_, lay_, omega_, i, g);
          const double dq = -2.0 * (xn - x) * cell_sy_[c] + cell_n_[c] * (xn * xn - x * x) +
                            2.0 * (xn - x) * lam * cell_sz_[c];
          lr -= dq / (2.0 * s2);
        }
        if (mh_.decide(site, lr, rng, warmup, t)) omega_[k] = xn;
      } else if (n.rfind("lambda", 0) == 0) {
        const double xn = mh_.propose(site, x, rng);
        double lr = log_normal_pdf(xn, pr.lambda.mean, pr.lambda.var) -
                    log_normal_pdf(x, pr.lambda.mean, pr.lambda.var);
        for (int cell : cells_of_[static_cast<std::size_t>(k)]) {
          const std::size_t c = static_cast<std::size_t>(cell);
          const int i = cell % I_, g = cell / I_;
          const double nu = cfa_nu(spec_, lay_, omega_, i, g);
          const double s2 = cfa_sigma2(spec_, lay_, omega_, i, g);
          const double dq = -2.0 * (xn - x) * cell_syz_[c] + 2.0 * nu * (xn - x) * cell_sz_[c] +
                            (xn * xn - x * x) * cell_szz_[c];
          lr -= dq / (2.0 * s2);
        }
        if (mh_.decide(site, lr, rng, warmup, t)) omega_[k] = xn;
      } else {  // unique variance on the log scale
        const double lx = std::log(x);
        const double lxn = mh_.propose(site, lx, rng);
        const double xn = std::exp(lxn);
        double lr = log_gamma_precision_as_variance_pdf(xn, pr.sigma2.shape, pr.sigma2.rate) -
                    log_gamma_precision_as_variance_pdf(x, pr.sigma2.shape, pr.sigma2.rate) + (lxn - lx);
        for (int cell : cells_of_[static_cast<std::size_t>(k)]) {
          const std::size_t c = static_cast<std::size_t>(cell);
          const int i = cell % I_, g = cell / I_;
          const double nu = cfa_nu(spec_, lay_, omega_, i, g);
          const double lam = cfa_lambda(spec_, lay_, omega_, i, g);
          const double q = cell_syy_[c] - 2.0 * nu * cell_sy_[c] - 2.0 * lam * cell_syz_[c] +
                           cell_n_[c] * nu * nu + 2.0 * nu * lam * cell_sz_[c] + lam * lam * cell_szz_[c];
          lr += -cell_n_[c] / 2.0 * (lxn - lx) - q / 2.0 * (1.0 / xn - 1.0 / x);
        }
        if (mh_.decide(site, lr, rng, warmup, t)) omega_[k] = xn;
      }
    }

    for (int k = 0; k < lay_.n_psi; ++k) {
      const int site = psi_site_[static_cast<std::size_t>(k)];
      if (site < 0) continue;
      const std::string& n = lay_.psi_names[static_cast<std::size_t>(k)];
      const double x = psi_[k];
      if (n.rfind("alpha", 0) == 0) {
        const double xn = mh_.propose(site, x, rng);
        double lr = log_normal_pdf(xn, pr.alpha.mean, pr.alpha.var) - log_normal_pdf(x, pr.alpha.mean, pr.alpha.var);
        for (int g : groups_of_[static_cast<std::size_t>(k)]) {
          const std::size_t gg = static_cast<std::size_t>(g);
          const double t2 = cfa_tau2(lay_, psi_, g);
          const double dq = -2.0 * (xn - x) * grp_sz_[gg] + grp_n_[gg] * (xn * xn - x * x);
          lr -= dq / (2.0 * t2);
        }
        if (mh_.decide(site, lr, rng, warmup, t)) psi_[k] = xn;
      } else {
        const double lx = std::log(x);
        const double lxn = mh_.propose(site, lx, rng);
        const double xn = std::exp(lxn);
        double lr = log_gamma_precision_as_variance_pdf(xn, pr.tau2.shape, pr.tau2.rate) -
                    log_gamma_precision_as_variance_pdf(x, pr.tau2.shape, pr.tau2.rate) + (lxn - lx);
        for (int g : groups_of_[static_cast<std::size_t>(k)]) {
          const std::size_t gg = static_cast<std::size_t>(g);
          const double a = cfa_alpha(lay_, psi_, g);
          const double q = grp_szz_[gg] - 2.0 * a * grp_sz_[gg] + grp_n_[gg] * a * a;
          lr += -grp_n_[gg] / 2.0 * (lxn - lx) - q / 2.0 * (1.0 / xn - 1.0 / x);
        }
        if (mh_.decide(site, lr, rng, warmup, t)) psi_[k] = xn;
      }
    }
  }

  void record(double* row) const override {
    for (int k = 0; k < lay_.n_omega; ++k) row[k] = omega_[k];
    for (int k = 0; k < lay_.n_psi; ++k) row[lay_.n_omega + k] = psi_[k];
    for (int j = 0; j < J_; ++j) row[lay_.n_omega + lay_.n_psi + j] = zeta_[j];
  }

 private:
  double init_vbar() const {
    double v = 0.0, cnt = 0.0;
    for (std::size_t c = 0; c < cell_n_.size(); ++c) {
      if (cell_n_[c] < 2) continue;
      const double mean = cell_sy_[c] / cell_n_[c];
      v += (cell_syy_[c] - cell_n_[c] * mean * mean) / (cell_n_[c] - 1.0);
      cnt += 1.0;
    }
    return cnt > 0 ? std::max(v / cnt, 1e-3) : 1.0;
  }

  double between_var() const {
    Eigen::VectorXd m(J_);
    for (int j = 0; j < J_; ++j) m[j] = data_->clusters[static_cast<std::size_t>(j)].y.mean();
    const double mean = m.mean();
    return std::max((m.array() - mean).square().sum() / std::max(J_ - 1, 1), 0.05);
  }

  void rebuild_zeta_stats() {
    std::fill(cell_sz_.begin(), cell_sz_.end(), 0.0);
    std::fill(cell_szz_.begin(), cell_szz_.end(), 0.0);
    std::fill(cell_syz_.begin(), cell_syz_.end(), 0.0);
    grp_sz_.assign(static_cast<std::size_t>(G_), 0.0);
    grp_szz_.assign(static_cast<std::size_t>(G_), 0.0);
    for (int j = 0; j < J_; ++j) {
      const Cluster& c = data_->clusters[static_cast<std::size_t>(j)];
      const double z = zeta_[j];
      grp_sz_[static_cast<std::size_t>(c.group)] += z;
      grp_szz_[static_cast<std::size_t>(c.group)] += z * z;
      for (Eigen::Index p = 0; p < c.y.size(); ++p) {
        const std::size_t cell = static_cast<std::size_t>(c.units[static_cast<std::size_t>(p)] + c.group * I_);
        cell_sz_[cell] += z;
        cell_szz_[cell] += z * z;
        cell_syz_[cell] += c.y[p] * z;
      }
    }
  }

  ModelSpec spec_;
  Layout lay_;
  const ClusteredDataset* data_;
  int I_ = 0, G_ = 0, J_ = 0;

  std::vector<double> cell_n_, cell_sy_, cell_syy_, cell_sz_, cell_szz_, cell_syz_;
  std::vector<double> grp_n_, grp_sz_, grp_szz_;

  Eigen::VectorXd omega_, psi_, zeta_;
  std::map<int, double> pin_omega_, pin_psi_;
  std::vector<int> omega_site_, psi_site_, zeta_site_;
  std::vector<std::vector<int>> cells_of_;
  std::vector<std::vector<int>> groups_of_;
};

// ---- normal variance components (hierarchical centerings A and B) ----
class VcChain : public Chain {
 public:
  VcChain(const ModelSpec& spec, const Layout& lay, const ClusteredDataset& data, const ChainConfig& cfg)
      : Chain(cfg.target_accept), spec_(spec), lay_(lay) {
    J_ = data.n_clusters();
    n_.resize(J_);
    sy_.resize(J_);
    syy_.resize(J_);
    double total_n = 0.0, total_sy = 0.0;
    for (int j = 0; j < J_; ++j) {
      const Cluster& c = data.clusters[static_cast<std::size_t>(j)];
      n_[j] = static_cast<double>(c.y.size());
      sy_[j] = c.y.sum();
      syy_[j] = c.y.squaredNorm();
      total_n += n_[j];
      total_sy += sy_[j];
    }
    n_total_ = total_n;
    grand_ = total_sy / total_n;

    double within = 0.0, wcnt = 0.0, between = 0.0;
    Eigen::VectorXd means(J_);
    for (int j = 0; j < J_; ++j) {
      means[j] = sy_[j] / n_[j];
      if (n_[j] > 1) {
        within += (syy_[j] - n_[j] * means[j] * means[j]) / (n_[j] - 1.0);
        wcnt += 1.0;
      }
    }
    within_ = wcnt > 0 ? std::max(within / wcnt, 1e-4) : 1.0;
    between = J_ > 1 ? (means.array() - means.mean()).square().sum() / (J_ - 1.0) : 1.0;
    between_ = std::max(between, 1e-4);
    cluster_mean_ = means;

    pin_sigma2_ = pinned_value(cfg, "sigma2");
    if (pin_sigma2_ && !(*pin_sigma2_ > 0.0))
      throw std::invalid_argument("vc: pinned residual variance must be positive");
    pin_alpha_ = pinned_value(cfg, "alpha");
    pin_tau2_ = pinned_value(cfg, "tau2");
    if (pin_tau2_ && *pin_tau2_ == 0.0 && !spec.version_b)
      throw std::invalid_argument("vc: factor variance can be pinned at zero only with a zero-mean latent (version B)");
    if (pin_tau2_ && *pin_tau2_ < 0.0) throw std::invalid_argument("vc: pinned factor variance must be >= 0");
    latent_pinned_ = pin_tau2_ && *pin_tau2_ == 0.0;

    if (!pin_sigma2_) sigma2_site_ = mh_.add("sigma2", 0.3 * cfg.scales.log_scale);
    if (!pin_alpha_)
      alpha_site_ = mh_.add("alpha", 0.5 * std::sqrt(between_ / J_ + within_ / total_n) * 3.0 * cfg.scales.location);
    if (!pin_tau2_) tau2_site_ = mh_.add("tau2", 0.4 * cfg.scales.log_scale);
    if (!latent_pinned_) {
      zeta_site_.resize(static_cast<std::size_t>(J_));
      for (int j = 0; j < J_; ++j)
        zeta_site_[static_cast<std::size_t>(j)] =
            mh_.add("zeta_" + std::to_string(j + 1), std::sqrt(within_ / std::max(n_.mean(), 1.0)) * cfg.scales.zeta);
    }
  }

  void init(Rng& rng) override {
    alpha_ = pin_alpha_ ? *pin_alpha_ : grand_ + 0.5 * std::sqrt(between_) * rng.normal();
    sigma2_ = pin_sigma2_ ? *pin_sigma2_ : within_ * std::exp(0.3 * rng.normal());
    tau2_ = pin_tau2_ ? *pin_tau2_ : between_ * std::exp(0.3 * rng.normal());
    zeta_.resize(J_);
    for (int j = 0; j < J_; ++j) {
      if (latent_pinned_) {
        zeta_[j] = 0.0;
      } else if (spec_.version_b) {
        zeta_[j] = cluster_mean_[j] - alpha_ + 0.3 * std::sqrt(between_) * rng.normal();
      } else {
        zeta_[j] = cluster_mean_[j] + 0.3 * std::sqrt(between_) * rng.normal();
      }
    }
  }

  void sweep(Rng& rng, bool warmup, long t) override {
    const bool B = spec_.version_b;

    if (!latent_pinned_) {
      for (int j = 0; j < J_; ++j) {
        const int k = zeta_site_[static_cast<std::size_t>(j)];
        const double z = zeta_[j];
        const double zn = mh_.propose(k, z, rng);
        const double mo = B ? alpha_ + z : z;
        const double mn = B ? alpha_ + zn : zn;
        const double pm = B ? 0.0 : alpha_;
        double lr = -(ssq(j, mn) - ssq(j, mo)) / (2.0 * sigma2_) -
                    ((zn - pm) * (zn - pm) - (z - pm) * (z - pm)) / (2.0 * tau2_);
        if (mh_.decide(k, lr, rng, warmup, t)) zeta_[j] = zn;
      }
    }

    if (sigma2_site_ >= 0) {
      double S = 0.0;
      for (int j = 0; j < J_; ++j) S += ssq(j, B ? alpha_ + zeta_[j] : zeta_[j]);
      const double lx = std::log(sigma2_);
      const double lxn = mh_.propose(sigma2_site_, lx, rng);
      const double xn = std::exp(lxn);
      const double lr = log_gamma_precision_as_variance_pdf(xn, spec_.vc_priors.sigma2.shape, spec_.vc_priors.sigma2.rate) -
                        log_gamma_precision_as_variance_pdf(sigma2_, spec_.vc_priors.sigma2.shape, spec_.vc_priors.sigma2.rate) +
                        (lxn - lx) - n_total_ / 2.0 * (lxn - lx) - S / 2.0 * (1.0 / xn - 1.0 / sigma2_);
      if (mh_.decide(sigma2_site_, lr, rng, warmup, t)) sigma2_ = xn;
    }

    if (alpha_site_ >= 0) {
      const double a = alpha_;
      const double an = mh_.propose(alpha_site_, a, rng);
      double lr = log_normal_pdf(an, spec_.vc_priors.alpha.mean, spec_.vc_priors.alpha.var) -
                  log_normal_pdf(a, spec_.vc_priors.alpha.mean, spec_.vc_priors.alpha.var);
      if (B) {
        for (int j = 0; j < J_; ++j) lr -= (ssq(j, an + zeta_[j]) - ssq(j, a + zeta_[j])) / (2.0 * sigma2_);
      } else {
        double dq = 0.0;
        for (int j = 0; j < J_; ++j)
          dq += (zeta_[j] - an) * (zeta_[j] - an) - (zeta_[j] - a) * (zeta_[j] - a);
        lr -= dq / (2.0 * tau2_);
      }
      if (mh_.decide(alpha_site_, lr, rng, warmup, t)) alpha_ = an;
    }

    if (tau2_site_ >= 0) {
      const double pm = B ? 0.0 : alpha_;
      double q = 0.0;
      for (int j = 0; j < J_; ++j) q += (zeta_[j] - pm) * (zeta_[j] - pm);
      const double lx = std::log(tau2_);
      const double lxn = mh_.propose(tau2_site_, lx, rng);
      const double xn = std::exp(lxn);
      const double lr = log_gamma_precision_as_variance_pdf(xn, spec_.vc_priors.tau2.shape, spec_.vc_priors.tau2.rate) -
                        log_gamma_precision_as_variance_pdf(tau2_, spec_.vc_priors.tau2.shape, spec_.vc_priors.tau2.rate) +
                        (lxn - lx) - static_cast<double>(J_) / 2.0 * (lxn - lx) - q / 2.0 * (1.0 / xn - 1.0 / tau2_);
      if (mh_.decide(tau2_site_, lr, rng, warmup, t)) tau2_ = xn;
    }
  }

  void record(double* row) const override {
    row[lay_.sigma2_idx] = sigma2_;
    if (spec_.version_b) {
      row[lay_.alpha_omega_idx] = alpha_;
      row[lay_.n_omega + lay_.tau_psi_idx] = tau2_;
    } else {
      row[lay_.n_omega + lay_.alpha_psi_idx] = alpha_;
      row[lay_.n_omega + lay_.tau_psi_idx] = tau2_;
    }
    for (int j = 0; j < J_; ++j) row[lay_.n_omega + lay_.n_psi + j] = zeta_[j];
  }

 private:
  double ssq(int j, double mu) const { return syy_[j] - 2.0 * mu * sy_[j] + n_[j] * mu * mu; }

  ModelSpec spec_;
  Layout lay_;
  int J_ = 0;
  Eigen::VectorXd n_, sy_, syy_, cluster_mean_;
  double n_total_ = 0.0, grand_ = 0.0, within_ = 1.0, between_ = 1.0;

  double sigma2_ = 1.0, alpha_ = 0.0, tau2_ = 1.0;
  Eigen::VectorXd zeta_;
  std::optional<double> pin_sigma2_, pin_alpha_, pin_tau2_;
  bool latent_pinned_ = false;
  int sigma2_site_ = -1, alpha_site_ = -1, tau2_site_ = -1;
  std::vector<int> zeta_site_;
};

// ---- eight schools (known unit SDs, flat priors on alpha and tau) ----
class EsChain : public Chain {
 public:
  EsChain(const ModelSpec& spec, const Layout& lay, const ClusteredDataset& data, const ChainConfig& cfg)
      : Chain(cfg.target_accept), lay_(lay) {
    J_ = data.n_clusters();
    y_.resize(J_);
    s2_.resize(J_);
    for (int j = 0; j < J_; ++j) {
      const Cluster& c = data.clusters[static_cast<std::size_t>(j)];
      y_[j] = c.y[0];
      const double sd = es_sd(spec, c, j);
      s2_[j] = sd * sd;
    }
    ybar_ = y_.mean();
    ysd_ = std::max(std::sqrt((y_.array() - ybar_).square().sum() / std::max(J_ - 1, 1)), 1e-3);

    pin_alpha_ = pinned_value(cfg, "alpha");
    pin_tau_ = pinned_value(cfg, "tau");
    if (pin_tau_ && !(*pin_tau_ > 0.0)) throw std::invalid_argument("eight-schools: pinned tau must be positive");
    if (!pin_alpha_) alpha_site_ = mh_.add("alpha", 0.6 * ysd_ / std::sqrt(static_cast<double>(J_)) * 3.0 * cfg.scales.location);
    if (!pin_tau_) tau_site_ = mh_.add("tau", 0.4 * cfg.scales.log_scale);
    zeta_site_.resize(static_cast<std::size_t>(J_));
    for (int j = 0; j < J_; ++j)
      zeta_site_[static_cast<std::size_t>(j)] =
          mh_.add("zeta_" + std::to_string(j + 1), 0.8 * std::sqrt(s2_[j]) * cfg.scales.zeta);
  }

  void init(Rng& rng) override {
    alpha_ = pin_alpha_ ? *pin_alpha_ : ybar_ + 0.3 * ysd_ * rng.normal();
    log_tau_ = pin_tau_ ? std::log(*pin_tau_) : std::log(ysd_) + 0.3 * rng.normal();
    zeta_.resize(J_);
    for (int j = 0; j < J_; ++j) zeta_[j] = 0.5 * (y_[j] + alpha_) + 0.2 * std::sqrt(s2_[j]) * rng.normal();
  }

  void sweep(Rng& rng, bool warmup, long t) override {
    const double tau2 = std::exp(2.0 * log_tau_);
    for (int j = 0; j < J_; ++j) {
      const int k = zeta_site_[static_cast<std::size_t>(j)];
      const double z = zeta_[j];
      const double zn = mh_.propose(k, z, rng);
      const double lr = -((y_[j] - zn) * (y_[j] - zn) - (y_[j] - z) * (y_[j] - z)) / (2.0 * s2_[j]) -
                        ((zn - alpha_) * (zn - alpha_) - (z - alpha_) * (z - alpha_)) / (2.0 * tau2);
      if (mh_.decide(k, lr, rng, warmup, t)) zeta_[j] = zn;
    }

    if (alpha_site_ >= 0) {
      const double a = alpha_;
      const double an = mh_.propose(alpha_site_, a, rng);
      double dq = 0.0;
      for (int j = 0; j < J_; ++j) dq += (zeta_[j] - an) * (zeta_[j] - an) - (zeta_[j] - a) * (zeta_[j] - a);
      if (mh_.decide(alpha_site_, -dq / (2.0 * tau2), rng, warmup, t)) alpha_ = an;
    }

    if (tau_site_ >= 0) {
      double q = 0.0;
      for (int j = 0; j < J_; ++j) q += (zeta_[j] - alpha_) * (zeta_[j] - alpha_);
      const double x = log_tau_;
      const double xn = mh_.propose(tau_site_, x, rng);
      const double t2n = std::exp(2.0 * xn);
      // flat prior on tau; Jacobian of the log transform
      const double lr = -static_cast<double>(J_) * (xn - x) - q / 2.0 * (1.0 / t2n - 1.0 / tau2) + (xn - x);
      if (mh_.decide(tau_site_, lr, rng, warmup, t)) log_tau_ = xn;
    }
  }

  void record(double* row) const override {
    row[lay_.alpha_psi_idx] = alpha_;
    row[lay_.tau_psi_idx] = std::exp(log_tau_);
    for (int j = 0; j < J_; ++j) row[lay_.n_psi + j] = zeta_[j];
  }

 private:
  Layout lay_;
  int J_ = 0;
  Eigen::VectorXd y_, s2_;
  double ybar_ = 0.0, ysd_ = 1.0;

  double alpha_ = 0.0, log_tau_ = 0.0;
  Eigen::VectorXd zeta_;
  std::optional<double> pin_alpha_, pin_tau_;
  int alpha_site_ = -1, tau_site_ = -1;
  std::vector<int> zeta_site_;
};

inline std::unique_ptr<Chain> make_chain(const ModelSpec& spec, const Layout& lay,
                                         const ClusteredDataset& data, const ChainConfig& cfg) {
  switch (spec.family) {
    case Family::rasch: return std::make_unique<RaschChain>(spec, lay, data, cfg);
    case Family::cfa: return std::make_unique<CfaChain>(spec, lay, data, cfg);
    case Family::vc: return std::make_unique<VcChain>(spec, lay, data, cfg);
    case Family::eight_schools: return std::make_unique<EsChain>(spec, lay, data, cfg);
  }
  throw std::logic_error("unknown family");
}

}  // namespace detail

// Metropolis-within-Gibbs over scalar sites. Deterministic given the seed;
// chain c uses its own generator seeded with seed + c. When the R-hat gate
// fails and extensions remain, every chain is prolonged by n_keep draws and
// the gate re-checked; a fit that never passes comes back with
// converged = false and all draws retained for inspection.
inline FitResult run_mcmc(const ModelSpec& spec, const ClusteredDataset& data, const ChainConfig& cfg) {
  if (cfg.n_chains < 1) throw std::invalid_argument("run_mcmc: need at least one chain");
  if (cfg.n_keep < 1) throw std::invalid_argument("run_mcmc: n_keep must be >= 1");
  if (cfg.n_warmup < 0) throw std::invalid_argument("run_mcmc: n_warmup must be >= 0");
  if (!(cfg.scales.location > 0.0) || !(cfg.scales.log_scale > 0.0) || !(cfg.scales.zeta > 0.0))
    throw std::invalid_argument("run_mcmc: proposal scale multipliers must be positive");
  if (!(cfg.target_accept > 0.0 && cfg.target_accept < 1.0))
    throw std::invalid_argument("run_mcmc: target acceptance must lie in (0, 1)");
  validate_for(spec, data);
  const Layout lay = make_layout(spec);
  for (const auto& [name, v] : cfg.fixed) {
    const bool known = std::find(lay.omega_names.begin(), lay.omega_names.end(), name) != lay.omega_names.end() ||
                       std::find(lay.psi_names.begin(), lay.psi_names.end(), name) != lay.psi_names.end();
    if (!known) throw std::invalid_argument("run_mcmc: cannot pin unknown parameter '" + name + "'");
    (void)v;
  }

  const int J = data.n_clusters();
  const int cols = lay.n_omega + lay.n_psi + J;

  struct PerChain {
    std::unique_ptr<detail::Chain> chain;
    Rng rng;
    Eigen::MatrixXd rows;
  };
  std::vector<PerChain> chains;
  chains.reserve(static_cast<std::size_t>(cfg.n_chains));
  for (int c = 0; c < cfg.n_chains; ++c)
    chains.push_back({detail::make_chain(spec, lay, data, cfg), Rng(cfg.seed + static_cast<std::uint64_t>(c)),
                      Eigen::MatrixXd()});

  Eigen::RowVectorXd buf(cols);
  auto run_block = [&](PerChain& pc, int n_new) {
    const Eigen::Index start = pc.rows.rows();
    pc.rows.conservativeResize(start + n_new, cols);
    for (int t = 0; t < n_new; ++t) {
      pc.chain->sweep(pc.rng, false, t + 1);
      pc.chain->record(buf.data());
      pc.rows.row(start + t) = buf;
    }
  };

  for (auto& pc : chains) {
    pc.chain->init(pc.rng);
    for (int t = 1; t <= cfg.n_warmup; ++t) pc.chain->sweep(pc.rng, true, t);
    run_block(pc, cfg.n_keep);
  }

  FitResult out;
  auto gate = [&]() {
    out.rhat.clear();
    out.max_rhat = std::numeric_limits<double>::quiet_NaN();
    if (cfg.n_chains < 2 || chains[0].rows.rows() < 10) return true;  // gate needs >= 2 chains of >= 10
    double worst = 1.0;
    for (int k = 0; k < lay.n_omega + lay.n_psi; ++k) {
      std::vector<Eigen::VectorXd> per_chain;
      per_chain.reserve(chains.size());
      for (const auto& pc : chains) per_chain.emplace_back(pc.rows.col(k));
      const double r = gelman_rubin(per_chain);
      const std::string name = k < lay.n_omega ? lay.omega_names[static_cast<std::size_t>(k)]
                                               : lay.psi_names[static_cast<std::size_t>(k - lay.n_omega)];
      out.rhat.push_back({name, r});
      worst = std::max(worst, r);
    }
    out.max_rhat = worst;
    return worst <= cfg.rhat_threshold;
  };

  bool ok = gate();
  while (!ok && out.extensions < cfg.max_extensions) {
    for (auto& pc : chains) run_block(pc, cfg.n_keep);
    ++out.extensions;
    ok = gate();
  }
  out.converged = ok;

  DrawMatrix d;
  d.n_chains = cfg.n_chains;
  d.n_iter = static_cast<int>(chains[0].rows.rows());
  d.omega_dim = lay.n_omega;
  d.psi_dim = lay.n_psi;
  d.zeta_dim = J;
  d.names = draw_column_names(lay, J);
  d.data.resize(static_cast<Eigen::Index>(d.total()), cols);
  for (int c = 0; c < cfg.n_chains; ++c)
    d.data.middleRows(static_cast<Eigen::Index>(c) * d.n_iter, d.n_iter) = chains[c].rows;
  out.draws = std::move(d);

  out.site_names = chains[0].chain->bank().names();
  const std::size_t n_sites = out.site_names.size();
  out.accept_rate.resize(static_cast<Eigen::Index>(n_sites));
  for (std::size_t k = 0; k < n_sites; ++k) {
    long props = 0, accs = 0;
    for (const auto& pc : chains) {
      props += pc.chain->bank().proposals()[k];
      accs += pc.chain->bank().accepts()[k];
    }
    out.accept_rate[static_cast<Eigen::Index>(k)] =
        props > 0 ? static_cast<double>(accs) / static_cast<double>(props) : 0.0;
  }
  return out;
}

}  // namespace latic
