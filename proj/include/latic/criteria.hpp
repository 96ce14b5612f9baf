#pragma once

// Predictive criteria over pointwise log-likelihood matrices: DIC with the
// Spiegelhalter (deviance-based) penalty, WAIC, and the model-comparison
// report.  The Plummer penalty lives in plummer.hpp, PSIS-LOO in psis.hpp,
// exact cross-validation in loo_exact.hpp.

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "latic/diagnostics.hpp"
#include "latic/mc_error.hpp"
#include "latic/pointwise.hpp"
#include "latic/util.hpp"

namespace latic {

struct CriterionResult {
  std::string model = "model";
  std::string name;
  PredMode mode = PredMode::conditional_unit;
  std::string fold;  // exact-loo only: "unit" or "cluster"
  double value = std::numeric_limits<double>::quiet_NaN();
  double p_eff = std::numeric_limits<double>::quiet_NaN();
  double mcerr_value = std::numeric_limits<double>::quiet_NaN();
  double mcerr_p = std::numeric_limits<double>::quiet_NaN();
  Eigen::VectorXd pointwise;                // per-point contributions (sum = value)
  std::vector<std::string> point_labels;
  Eigen::VectorXd pareto_k;                 // psis-loo only: per-point tail index
  std::map<std::string, double> diagnostics;
  std::vector<std::string> flags;
};

namespace detail {

// support violations upstream surface as -inf/NaN entries; abort loudly
inline void require_all_finite(const PointwiseLogLik& pw, const std::string& what) {
  for (Eigen::Index p = 0; p < pw.L.cols(); ++p)
    if (!pw.L.col(p).allFinite()) {
      const std::string label = static_cast<std::size_t>(p) < pw.labels.size()
                                    ? pw.labels[static_cast<std::size_t>(p)]
                                    : std::to_string(p);
      throw std::runtime_error(what + ": non-finite log-likelihood at point " + label);
    }
}

inline double s_eff_or_S(const Eigen::VectorXd& series, int n_chains) {
  const double S = static_cast<double>(series.size());
  if (series.size() < 10 || series.size() % std::max(n_chains, 1) != 0) return S;
  return effective_sample_size(series, std::max(n_chains, 1));
}

inline void check_dic_identity(double plugin, double mean_dev, double p) {
  const double a = plugin + 2.0 * p;
  const double b = mean_dev + p;
  const double scale = std::max({1.0, std::abs(a), std::abs(b)});
  if (std::abs(a - b) > 1e-8 * scale)
    throw std::logic_error("DIC identity violated: plugin + 2p != mean deviance + p");
}

}  // namespace detail

// ---- DIC, Spiegelhalter penalty ----

// core arithmetic on a deviance series; plugin = -2 log f(y | posterior means)
inline CriterionResult dic_from_deviance(PredMode mode, const Eigen::VectorXd& deviance,
                                         double plugin_deviance, int n_chains) {
  if (deviance.size() < 2) throw std::invalid_argument("dic: need at least 2 draws");
  if (!deviance.allFinite() || !std::isfinite(plugin_deviance))
    throw std::runtime_error("dic: non-finite deviance");

  const double s_eff = detail::s_eff_or_S(deviance, n_chains);
  const McErrorReport rep = mcerr_p_spiegelhalter(deviance, s_eff);
  const double mean_dev = rep.estimate;
  const double p = mean_dev - plugin_deviance;
  detail::check_dic_identity(plugin_deviance, mean_dev, p);

  CriterionResult r;
  r.name = "dic-spiegelhalter";
  r.mode = mode;
  r.value = plugin_deviance + 2.0 * p;
  r.p_eff = p;
  r.mcerr_p = rep.mcerr;
  r.mcerr_value = 2.0 * rep.mcerr;  // plug-in deviance error ignored by convention
  r.diagnostics["plugin_deviance"] = plugin_deviance;
  r.diagnostics["mean_deviance"] = mean_dev;
  r.diagnostics["S_eff"] = s_eff;
  return r;
}

inline CriterionResult dic_spiegelhalter(const PointwiseLogLik& pw, double plugin_deviance) {
  detail::require_all_finite(pw, "dic");
  return dic_from_deviance(pw.mode, deviance_series(pw), plugin_deviance, pw.n_chains);
}

// ---- WAIC ----

inline CriterionResult waic(const PointwiseLogLik& pw) {
  const int S = pw.n_draws();
  if (S < 2) throw std::invalid_argument("waic: need at least 2 draws");
  detail::require_all_finite(pw, "waic");

  const int P = pw.n_points();
  Eigen::VectorXd lppd_p(P), var_p(P), s_eff(P);
  int n_violations = 0;
  for (int p = 0; p < P; ++p) {
    lppd_p[p] = log_mean_exp(pw.L.col(p));
    var_p[p] = stable_variance(pw.L.col(p));
    s_eff[p] = detail::s_eff_or_S(pw.L.col(p), pw.n_chains);
    if (var_p[p] > 0.4) ++n_violations;
  }
  const double lppd = stable_sum(lppd_p);
  const double p_w = stable_sum(var_p);

  CriterionResult r;
  r.name = "waic";
  r.mode = pw.mode;
  r.value = -2.0 * lppd + 2.0 * p_w;
  r.p_eff = p_w;
  r.pointwise = -2.0 * (lppd_p - var_p);
  r.point_labels = pw.labels;
  r.diagnostics["lppd"] = lppd;
  r.diagnostics["n_var_gt_0.4"] = n_violations;
  if (S >= 3) {
    const McErrorReport rep = mcerr_p_waic(pw.L, s_eff);
    r.mcerr_p = rep.mcerr;
    r.mcerr_value = 2.0 * rep.mcerr;  // lppd error ignored, matching the DIC convention
    r.diagnostics["S_eff_min"] = rep.S_eff;
  }
  if (n_violations > 0) r.flags.push_back("waic-var-gt-0.4");
  return r;
}

// ---- model comparison ----

struct ComparisonPair {
  std::string model_a, model_b;
  double delta = 0.0;           // value_b - value_a, rows sorted ascending
  double combined_mcerr = 0.0;  // sqrt(mcerr_a^2 + mcerr_b^2)
  bool indistinguishable = false;
};

struct ComparisonReport {
  std::string criterion;
  std::string mode;
  std::vector<CriterionResult> rows;  // sorted ascending by value
  std::vector<ComparisonPair> pairs;  // all unordered pairs, best-first

  std::string csv() const {
    std::ostringstream os;
    os.precision(6);
    os << "model,criterion,mode,value,p_eff,mcerr_value,mcerr_p,flags\n";
    for (const auto& r : rows) {
      std::string crit = r.name;
      if (!r.fold.empty()) crit += "-" + r.fold;
      os << r.model << ',' << crit << ',' << pred_mode_name(r.mode) << ',' << r.value << ','
         << r.p_eff << ','
         << r.mcerr_value << ',' << r.mcerr_p << ',';
      for (std::size_t i = 0; i < r.flags.size(); ++i) os << (i ? ";" : "") << r.flags[i];
      os << '\n';
    }
    return os.str();
  }
};

inline ComparisonReport compare_models(std::vector<CriterionResult> results) {
  if (results.size() < 2)
    throw std::invalid_argument("compare_models: need at least 2 results");
  for (std::size_t i = 1; i < results.size(); ++i) {
    if (results[i].mode != results[0].mode)
      throw std::invalid_argument("compare_models: mixed conditional/marginal results");
    if (results[i].name != results[0].name)
      throw std::invalid_argument("compare_models: mixed criteria");
    if (results[i].fold != results[0].fold)
      throw std::invalid_argument("compare_models: mixed fold types");
  }
  std::stable_sort(results.begin(), results.end(),
                   [](const CriterionResult& a, const CriterionResult& b) {
                     if (a.value != b.value) return a.value < b.value;
                     return a.model < b.model;
                   });

  ComparisonReport rep;
  rep.criterion = results[0].name;
  rep.mode = pred_mode_name(results[0].mode);
  rep.rows = std::move(results);
  for (std::size_t a = 0; a < rep.rows.size(); ++a)
    for (std::size_t b = a + 1; b < rep.rows.size(); ++b) {
      ComparisonPair pr;
      pr.model_a = rep.rows[a].model;
      pr.model_b = rep.rows[b].model;
      pr.delta = rep.rows[b].value - rep.rows[a].value;
      const double ea = rep.rows[a].mcerr_value, eb = rep.rows[b].mcerr_value;
      pr.combined_mcerr = std::sqrt(ea * ea + eb * eb);
      pr.indistinguishable = std::abs(pr.delta) < 2.0 * pr.combined_mcerr;
      if (pr.indistinguishable) {
        rep.rows[a].flags.push_back("indistinguishable-with:" + pr.model_b);
        rep.rows[b].flags.push_back("indistinguishable-with:" + pr.model_a);
      }
      rep.pairs.push_back(std::move(pr));
    }
  return rep;
}

}  // namespace latic
