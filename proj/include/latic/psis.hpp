#pragma once

// Pareto-smoothed importance sampling LOO.  Per point, the importance ratios
// are the reciprocals of the pointwise likelihoods; the largest
// ceil(min(0.2 S, 3 sqrt(S))) ratios are replaced by quantiles of a
// generalized Pareto distribution fitted by probability-weighted moments,
// capped at the raw maximum.  Ratios are carried on a scale where the
// largest is exactly 1, which cancels in the normalized weights.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "latic/criteria.hpp"
#include "latic/pointwise.hpp"
#include "latic/util.hpp"

namespace latic {

struct GpdFit {
  double xi = std::numeric_limits<double>::quiet_NaN();
  double sigma = std::numeric_limits<double>::quiet_NaN();
  bool ok = false;
};

// Hosking-Wallis probability-weighted-moments fit of GPD(xi, sigma) to
// exceedances x >= 0
inline GpdFit gpd_fit_pwm(std::vector<double> x) {
  GpdFit fit;
  const std::size_t n = x.size();
  if (n < 5) return fit;
  std::sort(x.begin(), x.end());
  double a0 = 0.0, a1 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    a0 += x[i];
    a1 += x[i] * (static_cast<double>(n - 1 - i) / static_cast<double>(n - 1));
  }
  a0 /= static_cast<double>(n);
  a1 /= static_cast<double>(n);
  const double denom = a0 - 2.0 * a1;
  if (!(a0 > 0.0) || denom == 0.0) return fit;
  fit.xi = (a0 - 4.0 * a1) / denom;
  fit.sigma = a0 * (1.0 - fit.xi);
  fit.ok = fit.sigma > 0.0 && std::isfinite(fit.xi);
  return fit;
}

inline double gpd_quantile(double p, double xi, double sigma) {
  if (std::abs(xi) < 1e-12) return -sigma * std::log1p(-p);
  return sigma * (std::pow(1.0 - p, -xi) - 1.0) / xi;
}

struct PsisWeights {
  Eigen::VectorXd w;  // unnormalized smoothed ratios
  double k_hat = std::numeric_limits<double>::quiet_NaN();
};

// raw ratios in, smoothed ratios out; tail size per the published recipe
inline PsisWeights psis_smooth(const Eigen::VectorXd& ratios) {
  const int S = static_cast<int>(ratios.size());
  PsisWeights out;
  out.w = ratios;
  const int M = static_cast<int>(
      std::ceil(std::min(0.2 * S, 3.0 * std::sqrt(static_cast<double>(S)))));
  if (M < 5 || M >= S) return out;

  std::vector<int> order(static_cast<std::size_t>(S));
  for (int s = 0; s < S; ++s) order[static_cast<std::size_t>(s)] = s;
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return ratios[a] < ratios[b]; });

  const double u = ratios[order[static_cast<std::size_t>(S - M - 1)]];  // tail threshold
  const double raw_max = ratios[order[static_cast<std::size_t>(S - 1)]];
  std::vector<double> exceed(static_cast<std::size_t>(M));
  for (int i = 0; i < M; ++i)
    exceed[static_cast<std::size_t>(i)] = ratios[order[static_cast<std::size_t>(S - M + i)]] - u;

  const GpdFit fit = gpd_fit_pwm(exceed);
  if (!fit.ok) return out;
  out.k_hat = fit.xi;

  for (int i = 0; i < M; ++i) {
    const double p = (static_cast<double>(i) + 0.5) / static_cast<double>(M);
    const double smoothed = u + gpd_quantile(p, fit.xi, fit.sigma);
    out.w[order[static_cast<std::size_t>(S - M + i)]] = std::min(smoothed, raw_max);
  }
  return out;
}

inline CriterionResult psis_loo(const PointwiseLogLik& pw) {
  const int S = pw.n_draws();
  if (S < 2) throw std::invalid_argument("psis-loo: need at least 2 draws");
  detail::require_all_finite(pw, "psis-loo");

  const int P = pw.n_points();
  Eigen::VectorXd contrib(P), k_hat(P), mcerr2(P);
  int n_warn = 0;
  double k_max = -std::numeric_limits<double>::infinity();
  Eigen::VectorXd ratios(S), lw(S), h(S);
  for (int p = 0; p < P; ++p) {
    const auto l = pw.L.col(p);
    const double lmin = l.minCoeff();
    // log ratio = -L + c with c = min L, so the largest ratio is exactly 1
    ratios = (lmin - l.array()).exp();
    if (!ratios.allFinite())
      throw std::runtime_error("psis-loo: non-finite importance ratio at point " +
                               pw.labels[static_cast<std::size_t>(p)]);
    const PsisWeights ps = psis_smooth(ratios);
    k_hat[p] = ps.k_hat;
    if (std::isfinite(ps.k_hat)) {
      k_max = std::max(k_max, ps.k_hat);
      if (ps.k_hat > 0.7) ++n_warn;
    }

    lw = ps.w.array().log();
    const double log_norm = log_sum_exp(lw);
    const double elpd = log_sum_exp(lw + l) - log_norm;
    contrib[p] = -2.0 * elpd;

    // delta-method error of -2 log(weighted mean), ESS-inflated; computed on
    // the mu-relative scale so the density magnitude cancels
    h = (lw.array() - log_norm).exp();  // normalized weights
    double rel_var = 0.0;
    for (int s = 0; s < S; ++s) {
      const double d = h[s] * std::expm1(std::min(l[s] - elpd, 700.0));
      rel_var += d * d;
    }
    const double s_eff = detail::s_eff_or_S(l, pw.n_chains);
    mcerr2[p] = 4.0 * rel_var * static_cast<double>(S) / s_eff;
  }

  CriterionResult r;
  r.name = "psis-loo";
  r.mode = pw.mode;
  r.value = stable_sum(contrib);
  r.pointwise = contrib;
  r.point_labels = pw.labels;
  r.pareto_k = k_hat;

  // p_eff analog: lppd minus the PSIS elpd
  Eigen::VectorXd lppd_p(P);
  for (int p = 0; p < P; ++p) lppd_p[p] = log_mean_exp(pw.L.col(p));
  r.p_eff = stable_sum(lppd_p) + 0.5 * r.value;  // lppd - elpd_loo

  r.mcerr_value = std::sqrt(stable_sum(mcerr2));
  r.mcerr_p = 0.5 * r.mcerr_value;
  r.diagnostics["k_max"] = k_max;
  r.diagnostics["n_k_gt_0.7"] = n_warn;
  if (n_warn > 0) r.flags.push_back("pareto-k-gt-0.7");
  return r;
}

}  // namespace latic
