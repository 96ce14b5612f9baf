#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace latic {

// Classic potential scale reduction factor over whole chains. Degenerate
// cases: identical chains (B = 0) give exactly 1; distinct constant chains
// give +inf.
inline double gelman_rubin(const std::vector<Eigen::VectorXd>& chains) {
  const std::size_t m = chains.size();
  if (m < 2) throw std::invalid_argument("gelman_rubin: need at least 2 chains");
  const Eigen::Index n = chains[0].size();
  if (n < 10) throw std::invalid_argument("gelman_rubin: chains must have length >= 10");
  for (const auto& c : chains)
    if (c.size() != n) throw std::invalid_argument("gelman_rubin: chains must have equal lengths");

  double grand = 0.0;
  std::vector<double> means(m);
  for (std::size_t c = 0; c < m; ++c) {
    means[c] = chains[c].mean();
    grand += means[c];
  }
  grand /= static_cast<double>(m);

  double B = 0.0;  // n * between-chain variance of means
  double W = 0.0;
  for (std::size_t c = 0; c < m; ++c) {
    B += (means[c] - grand) * (means[c] - grand);
    W += (chains[c].array() - means[c]).square().sum() / static_cast<double>(n - 1);
  }
  B *= static_cast<double>(n) / static_cast<double>(m - 1);
  W /= static_cast<double>(m);

  if (B == 0.0) return 1.0;
  if (W == 0.0) return std::numeric_limits<double>::infinity();
  const double nn = static_cast<double>(n);
  return std::sqrt(((nn - 1.0) / nn * W + B / nn) / W);
}

// Effective sample size of the pooled draws: per-chain autocovariances about
// the pooled mean, averaged across chains, truncated by Geyer's initial
// positive sequence. Constant series return S by convention.
inline double effective_sample_size(const std::vector<Eigen::VectorXd>& chains) {
  if (chains.empty()) throw std::invalid_argument("effective_sample_size: no chains");
  const Eigen::Index n = chains[0].size();
  std::size_t m = chains.size();
  for (const auto& c : chains)
    if (c.size() != n) throw std::invalid_argument("effective_sample_size: chains must have equal lengths");
  const double S = static_cast<double>(n) * static_cast<double>(m);
  if (S < 10) throw std::invalid_argument("effective_sample_size: need at least 10 draws");

  double pooled = 0.0;
  for (const auto& c : chains) pooled += c.sum();
  pooled /= S;

  auto autocov = [&](Eigen::Index t) {
    double acc = 0.0;
    for (const auto& c : chains) {
      double s = 0.0;
      for (Eigen::Index i = 0; i + t < n; ++i) s += (c[i] - pooled) * (c[i + t] - pooled);
      acc += s / static_cast<double>(n);
    }
    return acc / static_cast<double>(m);
  };

  const double c0 = autocov(0);
  if (c0 == 0.0) return S;  // constant series

  double iact = c0;  // c0 + 2 sum_{t>=1} c_t, accumulated in Geyer pairs
  for (Eigen::Index t = 1; t + 1 < n; t += 2) {
    const double pair = autocov(t) + autocov(t + 1);
    if (pair <= 0.0) break;
    iact += 2.0 * pair;
  }
  const double s_eff = S * c0 / iact;
  return std::min(s_eff, S);
}

inline double effective_sample_size(const Eigen::Ref<const Eigen::VectorXd>& pooled, int n_chains) {
  const Eigen::Index n = pooled.size() / n_chains;
  std::vector<Eigen::VectorXd> chains;
  chains.reserve(static_cast<std::size_t>(n_chains));
  for (int c = 0; c < n_chains; ++c) chains.emplace_back(pooled.segment(c * n, n));
  return effective_sample_size(chains);
}

}  // namespace latic
