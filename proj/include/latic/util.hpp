#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace latic {

inline constexpr double neg_inf = -std::numeric_limits<double>::infinity();
inline constexpr double log_2pi = 1.8378770664093454836;

// Sum after sorting by value: the result is bitwise invariant under any
// permutation of the inputs, which downstream reductions rely on.
inline double stable_sum(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

inline double stable_sum(const Eigen::Ref<const Eigen::VectorXd>& v) {
  return stable_sum(std::vector<double>(v.data(), v.data() + v.size()));
}

// log(sum exp(x)) with max shift; -inf inputs are legal
inline double log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& x) {
  const double mx = x.maxCoeff();
  if (!std::isfinite(mx)) return mx;
  std::vector<double> terms(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) terms[i] = std::exp(x[i] - mx);
  return mx + std::log(stable_sum(std::move(terms)));
}

inline double log_mean_exp(const Eigen::Ref<const Eigen::VectorXd>& x) {
  return log_sum_exp(x) - std::log(static_cast<double>(x.size()));
}

// permutation-invariant mean and S-1 variance
inline double stable_mean(const Eigen::Ref<const Eigen::VectorXd>& v) {
  return stable_sum(v) / static_cast<double>(v.size());
}

inline double stable_variance(const Eigen::Ref<const Eigen::VectorXd>& v, double mean) {
  std::vector<double> sq(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double d = v[i] - mean;
    sq[static_cast<std::size_t>(i)] = d * d;
  }
  return stable_sum(std::move(sq)) / static_cast<double>(v.size() - 1);
}

inline double stable_variance(const Eigen::Ref<const Eigen::VectorXd>& v) {
  return stable_variance(v, stable_mean(v));
}

// ---- log densities ----

inline double log_normal_pdf(double x, double mean, double var) {
  if (!(var > 0.0)) throw std::domain_error("log_normal_pdf: variance must be positive");
  const double r = x - mean;
  return -0.5 * (log_2pi + std::log(var)) - r * r / (2.0 * var);
}

// log Bernoulli(logit^-1(eta)) pmf; y in {0,1}
inline double log_bernoulli_logit(double y, double eta) {
  const double signed_eta = (y > 0.5) ? eta : -eta;
  // log sigma(z) = -log1p(exp(-z)), split for large |z|
  if (signed_eta > 0.0) return -std::log1p(std::exp(-signed_eta));
  return signed_eta - std::log1p(std::exp(signed_eta));
}

inline double log_t1_pdf(double x, double loc, double scale) {
  // Cauchy(loc, scale)
  const double z = (x - loc) / scale;
  return -std::log(std::numbers::pi * scale * (1.0 + z * z));
}

inline double log_exponential_pdf(double x, double rate) {
  if (x < 0.0) return neg_inf;
  return std::log(rate) - rate * x;
}

// shape/rate convention
inline double log_gamma_pdf(double x, double shape, double rate) {
  if (x <= 0.0) return neg_inf;
  return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) - rate * x;
}

// density of variance v when the precision 1/v has a Gamma(shape, rate) prior
inline double log_gamma_precision_as_variance_pdf(double v, double shape, double rate) {
  if (v <= 0.0) return neg_inf;
  return log_gamma_pdf(1.0 / v, shape, rate) - 2.0 * std::log(v);
}

inline double inv_logit(double eta) {
  if (eta >= 0.0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

}  // namespace latic
