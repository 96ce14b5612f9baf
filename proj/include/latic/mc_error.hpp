#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

#include "latic/diagnostics.hpp"
#include "latic/util.hpp"

namespace latic {

struct McErrorReport {
  double estimate = 0.0;
  double mcerr = 0.0;
  double S = 0.0;
  double S_eff = 0.0;
};

// MCerr^2(mean) = sample-variance / S_eff
inline McErrorReport mcerr_mean(const Eigen::Ref<const Eigen::VectorXd>& series, double s_eff) {
  if (series.size() < 2) throw std::invalid_argument("mcerr_mean: need S >= 2");
  if (!(s_eff > 0.0)) throw std::invalid_argument("mcerr_mean: S_eff must be positive");
  McErrorReport r;
  r.S = static_cast<double>(series.size());
  r.S_eff = s_eff;
  r.estimate = stable_mean(series);
  r.mcerr = std::sqrt(stable_variance(series, r.estimate) / s_eff);
  return r;
}

// v = mean T_s with T_s = S/(S-1) (g_s - gbar)^2; MCerr^2(v) = sum (T_s - v)^2 / (S_eff S)
inline McErrorReport mcerr_variance(const Eigen::Ref<const Eigen::VectorXd>& series, double s_eff) {
  const Eigen::Index S = series.size();
  if (S < 3) throw std::invalid_argument("mcerr_variance: need S >= 3");
  if (!(s_eff > 0.0)) throw std::invalid_argument("mcerr_variance: S_eff must be positive");
  const double mean = stable_mean(series);
  const double Sd = static_cast<double>(S);
  std::vector<double> T(static_cast<std::size_t>(S));
  for (Eigen::Index s = 0; s < S; ++s) {
    const double d = series[s] - mean;
    T[static_cast<std::size_t>(s)] = Sd / (Sd - 1.0) * d * d;
  }
  McErrorReport r;
  r.S = Sd;
  r.S_eff = s_eff;
  r.estimate = stable_sum(T) / Sd;
  std::vector<double> dev(static_cast<std::size_t>(S));
  for (Eigen::Index s = 0; s < S; ++s) {
    const double d = T[static_cast<std::size_t>(s)] - r.estimate;
    dev[static_cast<std::size_t>(s)] = d * d;
  }
  r.mcerr = std::sqrt(stable_sum(dev) / (s_eff * Sd));
  return r;
}

// Spiegelhalter p_D: the deviance-series mean dominates, so its MC error is used
inline McErrorReport mcerr_p_spiegelhalter(const Eigen::Ref<const Eigen::VectorXd>& deviance_series,
                                           double s_eff) {
  return mcerr_mean(deviance_series, s_eff);
}

// Plummer p_D: per-pair half-sums of the log ratios form the series
inline McErrorReport mcerr_p_plummer(const Eigen::Ref<const Eigen::VectorXd>& pair_series, double s_eff) {
  return mcerr_mean(pair_series, s_eff);
}

// p_W = sum of pointwise variances; independent contributions, so the error
// variances add. Columns of L are points, rows draws.
inline McErrorReport mcerr_p_waic(const Eigen::Ref<const Eigen::MatrixXd>& L,
                                  const Eigen::Ref<const Eigen::VectorXd>& s_eff_per_point) {
  if (L.cols() != s_eff_per_point.size())
    throw std::invalid_argument("mcerr_p_waic: one S_eff per point required");
  std::vector<double> v(static_cast<std::size_t>(L.cols())), e2(static_cast<std::size_t>(L.cols()));
  double s_eff_min = std::numeric_limits<double>::infinity();
  for (Eigen::Index p = 0; p < L.cols(); ++p) {
    const McErrorReport r = mcerr_variance(L.col(p), s_eff_per_point[p]);
    v[static_cast<std::size_t>(p)] = r.estimate;
    e2[static_cast<std::size_t>(p)] = r.mcerr * r.mcerr;
    s_eff_min = std::min(s_eff_min, s_eff_per_point[p]);
  }
  McErrorReport out;
  out.S = static_cast<double>(L.rows());
  out.S_eff = s_eff_min;
  out.estimate = stable_sum(std::move(v));
  out.mcerr = std::sqrt(stable_sum(std::move(e2)));
  return out;
}

}  // namespace latic
