#pragma once

// Fit-then-evaluate orchestration: one entry point per criterion id with
// automatic quadrature size selection where the marginal likelihood needs it.

#include <map>
#include <stdexcept>
#include <string>
#include <utility>

#include "latic/criteria.hpp"
#include "latic/loo_exact.hpp"
#include "latic/plummer.hpp"
#include "latic/pointwise.hpp"
#include "latic/psis.hpp"
#include "latic/sampler.hpp"

namespace latic {

struct FittedModel {
  ModelSpec spec;
  Layout lay;
  ClusteredDataset data;
  FitResult fit;
};

inline FittedModel fit_model(const ModelSpec& spec, const ClusteredDataset& data,
                             const ChainConfig& cfg) {
  validate_for(spec, data);
  FittedModel fm;
  fm.spec = spec;
  fm.lay = make_layout(spec);
  fm.data = data;
  fm.fit = run_mcmc(spec, data, cfg);
  return fm;
}

enum class CriterionId { dic_spiegelhalter, dic_plummer, waic, psis_loo, exact_loo };

inline std::string criterion_name(CriterionId id) {
  switch (id) {
    case CriterionId::dic_spiegelhalter: return "dic-spiegelhalter";
    case CriterionId::dic_plummer: return "dic-plummer";
    case CriterionId::waic: return "waic";
    case CriterionId::psis_loo: return "psis-loo";
    case CriterionId::exact_loo: return "exact-loo";
  }
  throw std::logic_error("unreachable");
}

inline CriterionId criterion_from_name(const std::string& s) {
  if (s == "dic-spiegelhalter") return CriterionId::dic_spiegelhalter;
  if (s == "dic-plummer") return CriterionId::dic_plummer;
  if (s == "waic") return CriterionId::waic;
  if (s == "psis-loo") return CriterionId::psis_loo;
  if (s == "exact-loo") return CriterionId::exact_loo;
  throw std::invalid_argument("unknown criterion '" + s +
                              "' (expected dic-spiegelhalter, dic-plummer, waic, psis-loo, "
                              "or exact-loo)");
}

inline PredMode mode_from_name(const std::string& s) {
  if (s == "conditional") return PredMode::conditional_unit;
  if (s == "marginal") return PredMode::marginal_cluster;
  throw std::invalid_argument("unknown mode '" + s + "' (expected conditional or marginal)");
}

inline FoldType fold_from_name(const std::string& s) {
  if (s == "unit") return FoldType::unit;
  if (s == "cluster") return FoldType::cluster;
  throw std::invalid_argument("unknown fold '" + s + "' (expected unit or cluster)");
}

struct CriterionRequest {
  CriterionId id = CriterionId::waic;
  PredMode mode = PredMode::marginal_cluster;
  FoldType fold = FoldType::cluster;  // exact-loo only; it implies the mode
  int quad_points = 0;                // fixed M; 0 = closed form, or ladder selection
  bool force_quad = false;            // select M even when a closed form exists
  PlummerOptions plummer;
  ExactLooOptions loo;
};

struct CriterionOutput {
  CriterionResult result;
  SelectMTrace trace;  // ladder walk; trace.selected > 0 iff one ran
  int quad_M = 0;      // quadrature size actually used; 0 = closed form / none
};

namespace detail {

// deviance + plugin at a given quadrature size, cached across ladder steps so
// the selected M's pointwise matrix is reused rather than rebuilt
struct MarginalLadder {
  const ModelSpec& spec;
  const Layout& lay;
  const ClusteredDataset& data;
  const DrawMatrix& draws;
  std::map<int, PointwiseLogLik> pw;
  std::map<int, double> plugin;

  const PointwiseLogLik& at(int M) {
    auto it = pw.find(M);
    if (it == pw.end()) {
      it = pw.emplace(M, marginal_pointwise(spec, lay, data, draws, M)).first;
      while (pw.size() > 2) pw.erase(pw.begin());  // ladder grows, so begin() is stalest
    }
    return it->second;
  }

  double plugin_at(int M) {
    auto it = plugin.find(M);
    if (it == plugin.end()) it = plugin.emplace(M, plugin_deviance_marginal(spec, lay, data, draws, M)).first;
    return it->second;
  }

  double dic_value_at(int M) {
    const double mean_dev = stable_mean(deviance_series(at(M)));
    const double plug = plugin_at(M);
    return mean_dev + (mean_dev - plug);  // plugin + 2 p_D
  }
};

}  // namespace detail

inline CriterionOutput evaluate_criterion(const FittedModel& fm, const CriterionRequest& req) {
  const ModelSpec& spec = fm.spec;
  const Layout& lay = fm.lay;
  const ClusteredDataset& data = fm.data;
  const DrawMatrix& draws = fm.fit.draws;

  CriterionOutput out;

  if (req.id == CriterionId::exact_loo) {
    ExactLooOptions opts = req.loo;
    if (req.quad_points > 0) opts.quad_points = req.quad_points;
    out.result = exact_loo_cv(spec, lay, data, req.fold, opts);
    if (req.fold == FoldType::cluster && !has_closed_form_marginal(spec.family))
      out.quad_M = opts.quad_points;
    return out;
  }

  PointwiseLogLik pw;
  double plugin = std::numeric_limits<double>::quiet_NaN();
  const bool need_plugin =
      req.id == CriterionId::dic_spiegelhalter || req.id == CriterionId::dic_plummer;

  if (req.mode == PredMode::conditional_unit) {
    if (draws.zeta_dim == 0)
      throw std::invalid_argument("conditional criteria need latent draws (no zeta columns)");
    pw = conditional_pointwise(spec, lay, data, draws);
    if (need_plugin) plugin = plugin_deviance_conditional(spec, lay, data, draws);
  } else {
    const bool want_quad =
        !has_closed_form_marginal(spec.family) || req.force_quad || req.quad_points > 0;
    if (!want_quad) {
      pw = marginal_pointwise(spec, lay, data, draws);
      if (need_plugin) plugin = plugin_deviance_marginal(spec, lay, data, draws);
    } else if (req.quad_points > 0) {
      out.quad_M = req.quad_points;
      pw = marginal_pointwise(spec, lay, data, draws, out.quad_M);
      if (need_plugin) plugin = plugin_deviance_marginal(spec, lay, data, draws, out.quad_M);
    } else {
      detail::MarginalLadder ladder{spec, lay, data, draws, {}, {}};
      switch (req.id) {
        case CriterionId::dic_spiegelhalter:
        case CriterionId::dic_plummer:
          // the Plummer penalty rides on the same deviance machinery, so its
          // quadrature size is selected against the standard DIC target
          out.trace = select_M_over([&](int M) { return ladder.dic_value_at(M); });
          break;
        case CriterionId::waic:
          out.trace = select_M_over([&](int M) { return waic(ladder.at(M)).value; });
          break;
        case CriterionId::psis_loo:
          out.trace = select_M_over([&](int M) { return psis_loo(ladder.at(M)).value; });
          break;
        default:
          throw std::logic_error("unreachable");
      }
      out.quad_M = out.trace.selected;
      pw = ladder.at(out.quad_M);
      if (need_plugin) plugin = ladder.plugin_at(out.quad_M);
    }
  }

  switch (req.id) {
    case CriterionId::dic_spiegelhalter:
      out.result = dic_spiegelhalter(pw, plugin);
      break;
    case CriterionId::dic_plummer: {
      PlummerOptions opts = req.plummer;
      if (out.quad_M > 0) opts.replicate_quad_points = out.quad_M;
      const double mean_dev = stable_mean(deviance_series(pw));
      out.result = dic_plummer(spec, lay, data, draws, pw.mode, plugin, mean_dev, opts);
      break;
    }
    case CriterionId::waic:
      out.result = waic(pw);
      break;
    case CriterionId::psis_loo:
      out.result = psis_loo(pw);
      break;
    default:
      throw std::logic_error("unreachable");
  }
  if (out.quad_M > 0) out.result.diagnostics["quad_M"] = out.quad_M;
  return out;
}

}  // namespace latic
