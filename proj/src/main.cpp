// latic: fit Bayesian latent variable models and score them with conditional
// and marginal predictive criteria (DIC, WAIC, PSIS-LOO, exact CV).

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include <latic/fixtures.hpp>
#include <latic/pipeline.hpp>

using nlohmann::json;
namespace fs = std::filesystem;
using namespace latic;

namespace {

json parse_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("cannot open " + path.string() + " for writing");
  out << content;
}

bool is_fixture_name(const std::string& s) {
  return s == "synthetic-vc" || s == "synthetic-vc-b" || s == "synthetic-cfa" ||
         s == "synthetic-rasch" || s == "synthetic-rasch-small" || s == "eight-schools" ||
         s == "eight-schools-scaled";
}

struct LoadedModel {
  std::string name;
  ModelSpec spec;
  ClusteredDataset data;
  bool has_data = false;
  json chains;  // chain-config subtree from the model file, if any
};

LoadedModel load_model_config(const std::string& path) {
  const json cfg = parse_json_file(path);
  if (!cfg.is_object()) throw std::invalid_argument(path + ": model config must be an object");
  LoadedModel m;
  m.name = cfg.value("name", fs::path(path).stem().string());
  const std::string family = cfg.value("family", "");
  if (family == "rasch") {
    m.spec.family = Family::rasch;
    m.spec.n_items = cfg.value("n_items", 0);
    m.spec.n_cov = cfg.value("n_cov", 1);
  } else if (family == "cfa") {
    m.spec.family = Family::cfa;
    m.spec.n_ind = cfg.value("n_ind", 0);
    m.spec.n_groups = cfg.value("n_groups", 1);
    m.spec.pattern = cfg.value("pattern", "");
    m.spec.prior_set = cfg.value("prior_set", "default");
    m.spec.priors = cfa_priors(m.spec.prior_set);
  } else if (family == "vc") {
    m.spec.family = Family::vc;
    m.spec.version_b = cfg.value("version_b", false);
  } else if (family == "eight-schools") {
    m.spec.family = Family::eight_schools;
    m.spec.s_scale = cfg.value("s_scale", 1.0);
    if (cfg.contains("known_sigma")) {
      const auto& ks = cfg.at("known_sigma");
      m.spec.known_sigma.resize(static_cast<Eigen::Index>(ks.size()));
      for (std::size_t i = 0; i < ks.size(); ++i)
        m.spec.known_sigma[static_cast<Eigen::Index>(i)] = ks[i].get<double>();
    } else {
      m.spec.known_sigma = eight_schools_sigmas();
    }
  } else {
    throw std::invalid_argument(path + ": family must be rasch, cfa, vc, or eight-schools (got '" +
                                family + "')");
  }
  if (cfg.contains("chains")) m.chains = cfg.at("chains");
  return m;
}

struct ChainOverrides {
  std::uint64_t seed = 0;
  int n_chains = 0, n_warmup = -1, n_keep = 0;
};

ChainConfig resolve_chain_config(const json& chains, const ChainOverrides& ov) {
  ChainConfig cfg;
  if (chains.is_object()) {
    cfg.n_chains = chains.value("n_chains", cfg.n_chains);
    cfg.n_warmup = chains.value("n_warmup", cfg.n_warmup);
    cfg.n_keep = chains.value("n_keep", cfg.n_keep);
    cfg.seed = chains.value("seed", cfg.seed);
    cfg.target_accept = chains.value("target_accept", cfg.target_accept);
    cfg.rhat_threshold = chains.value("rhat_threshold", cfg.rhat_threshold);
    cfg.max_extensions = chains.value("max_extensions", cfg.max_extensions);
    if (chains.contains("fixed"))
      for (const auto& [k, v] : chains.at("fixed").items()) cfg.fixed[k] = v.get<double>();
  }
  if (ov.seed != 0) cfg.seed = ov.seed;
  if (ov.n_chains > 0) cfg.n_chains = ov.n_chains;
  if (ov.n_warmup >= 0) cfg.n_warmup = ov.n_warmup;
  if (ov.n_keep > 0) cfg.n_keep = ov.n_keep;
  return cfg;
}

// --model takes a bundled fixture name or a JSON model file; --data a bundled
// name or a long-format CSV. A fixture binds its own data unless overridden.
LoadedModel load_inputs(const std::string& model_arg, const std::string& data_arg) {
  if (model_arg.empty()) throw std::invalid_argument("--model is required");
  LoadedModel m;
  if (is_fixture_name(model_arg)) {
    Fixture f = make_fixture(model_arg);
    m.name = f.name;
    m.spec = f.spec;
    m.data = f.data;
    m.has_data = true;
  } else {
    m = load_model_config(model_arg);
  }
  if (!data_arg.empty()) {
    m.data = is_fixture_name(data_arg) ? make_fixture(data_arg).data : read_csv(data_arg);
    m.has_data = true;
  }
  if (!m.has_data) {
    if (m.spec.family == Family::eight_schools) {
      m.data = eight_schools_dataset(m.spec.s_scale);
      m.has_data = true;
    } else {
      throw std::invalid_argument("model '" + m.name + "' needs --data");
    }
  }
  if (m.spec.family == Family::rasch && m.spec.cov_center.size() != m.spec.n_cov)
    standardize_covariates(m.spec, m.data);
  validate_for(m.spec, m.data);
  return m;
}

struct CriterionJob {
  CriterionId id;
  PredMode mode;
  FoldType fold = FoldType::cluster;
};

std::string job_label(const CriterionJob& j) {
  std::string s = criterion_name(j.id);
  if (j.id == CriterionId::exact_loo)
    s += j.fold == FoldType::unit ? "-unit" : "-cluster";
  return s;
}

// tokens: <criterion>[-m|-c], exact-loo[-unit|-cluster], psis-loco; a bare
// token takes --mode (where "both" expands it to conditional and marginal)
std::vector<CriterionJob> parse_criteria(const std::string& list, const std::string& mode_arg) {
  if (mode_arg != "conditional" && mode_arg != "marginal" && mode_arg != "both")
    throw std::invalid_argument("--mode must be conditional, marginal, or both");
  std::vector<CriterionJob> jobs;
  std::stringstream ss(list);
  std::string tok;
  auto push_modes = [&](CriterionId id) {
    if (mode_arg != "marginal") jobs.push_back({id, PredMode::conditional_unit, FoldType::unit});
    if (mode_arg != "conditional")
      jobs.push_back({id, PredMode::marginal_cluster, FoldType::cluster});
  };
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    if (tok == "psis-loco") {
      jobs.push_back({CriterionId::psis_loo, PredMode::marginal_cluster, FoldType::cluster});
    } else if (tok == "exact-loo") {
      if (mode_arg != "marginal")
        jobs.push_back({CriterionId::exact_loo, PredMode::conditional_unit, FoldType::unit});
      if (mode_arg != "conditional")
        jobs.push_back({CriterionId::exact_loo, PredMode::marginal_cluster, FoldType::cluster});
    } else if (tok == "exact-loo-unit") {
      jobs.push_back({CriterionId::exact_loo, PredMode::conditional_unit, FoldType::unit});
    } else if (tok == "exact-loo-cluster") {
      jobs.push_back({CriterionId::exact_loo, PredMode::marginal_cluster, FoldType::cluster});
    } else if (tok.size() > 2 && tok.compare(tok.size() - 2, 2, "-m") == 0) {
      jobs.push_back({criterion_from_name(tok.substr(0, tok.size() - 2)),
                      PredMode::marginal_cluster, FoldType::cluster});
    } else if (tok.size() > 2 && tok.compare(tok.size() - 2, 2, "-c") == 0) {
      jobs.push_back({criterion_from_name(tok.substr(0, tok.size() - 2)),
                      PredMode::conditional_unit, FoldType::unit});
    } else {
      push_modes(criterion_from_name(tok));
    }
  }
  if (jobs.empty()) throw std::invalid_argument("--criteria is empty");
  return jobs;
}

int parse_quad_points(const std::string& arg) {
  if (arg == "auto") return 0;
  try {
    const int m = std::stoi(arg);
    if (m < 1) throw std::invalid_argument("");
    return m;
  } catch (const std::exception&) {
    throw std::invalid_argument("--quad-points must be 'auto' or a positive integer (got '" +
                                arg + "')");
  }
}

CriterionRequest make_request(const CriterionJob& job, int quad_points, std::uint64_t seed,
                              const ChainConfig& refit_cfg) {
  CriterionRequest req;
  req.id = job.id;
  req.mode = job.mode;
  req.fold = job.fold;
  req.quad_points = quad_points;
  req.plummer.seed = seed + 17;
  req.loo.config = refit_cfg;
  return req;
}

json result_json(const CriterionResult& r, int quad_M) {
  json o;
  o["model"] = r.model;
  o["criterion"] = r.name;
  if (!r.fold.empty()) o["fold"] = r.fold;
  o["mode"] = pred_mode_name(r.mode);
  o["value"] = r.value;
  o["p_eff"] = r.p_eff;
  o["mc_errors"] = {{"mcerr_value", r.mcerr_value}, {"mcerr_p", r.mcerr_p}};
  json diag = json::object();
  for (const auto& [k, v] : r.diagnostics) diag[k] = v;
  if (quad_M > 0) diag["quad_M"] = quad_M;
  o["diagnostics"] = diag;
  o["flags"] = r.flags;
  if (r.pareto_k.size() > 0) {
    json k = json::array();
    for (Eigen::Index i = 0; i < r.pareto_k.size(); ++i) k.push_back(r.pareto_k[i]);
    o["pareto_k"] = k;
    o["pareto_k_labels"] = r.point_labels;
  }
  return o;
}

FittedModel fitted_from_draws(const LoadedModel& m, const std::string& draws_path) {
  FittedModel fm;
  fm.spec = m.spec;
  fm.lay = make_layout(m.spec);
  fm.data = m.data;
  fm.fit.draws = read_draws_csv(draws_path, fm.lay);
  fm.fit.converged = true;
  return fm;
}

int run_fit(const std::string& model_arg, const std::string& data_arg, const ChainOverrides& ov,
            const std::string& out_dir) {
  LoadedModel m = load_inputs(model_arg, data_arg);
  ChainConfig cfg = resolve_chain_config(m.chains, ov);

  FittedModel fm = fit_model(m.spec, m.data, cfg);
  fs::create_directories(out_dir);
  write_draws_csv(fm.fit.draws, (fs::path(out_dir) / "draws.csv").string());

  json conv;
  conv["model"] = m.name;
  conv["converged"] = fm.fit.converged;
  conv["max_rhat"] = fm.fit.max_rhat;
  conv["extensions"] = fm.fit.extensions;
  conv["n_chains"] = fm.fit.draws.n_chains;
  conv["n_iter"] = fm.fit.draws.n_iter;
  conv["seed"] = cfg.seed;
  json rhat = json::object(), ess = json::object();
  for (const auto& e : fm.fit.rhat) rhat[e.name] = e.value;
  for (int k = 0; k < fm.lay.n_omega + fm.lay.n_psi; ++k)
    ess[fm.fit.draws.names[static_cast<std::size_t>(k)]] =
        effective_sample_size(fm.fit.draws.column_chains(k));
  conv["rhat"] = rhat;
  conv["ess"] = ess;
  json acc = json::object();
  for (std::size_t i = 0; i < fm.fit.site_names.size(); ++i)
    acc[fm.fit.site_names[i]] = fm.fit.accept_rate[static_cast<Eigen::Index>(i)];
  conv["accept_rate"] = acc;
  write_text(fs::path(out_dir) / "convergence.json", conv.dump(2) + "\n");

  std::cout << m.name << ": " << fm.fit.draws.total() << " draws, max R-hat " << fm.fit.max_rhat
            << (fm.fit.converged ? "" : "  [NOT CONVERGED]") << "\n";
  return fm.fit.converged ? 0 : 3;
}

int run_criteria(const std::string& model_arg, const std::string& data_arg,
                 const std::string& draws_path, const std::string& criteria_arg,
                 const std::string& mode_arg, const std::string& quad_arg,
                 const ChainOverrides& ov, const std::string& out_dir) {
  LoadedModel m = load_inputs(model_arg, data_arg);
  const std::vector<CriterionJob> jobs = parse_criteria(criteria_arg, mode_arg);
  const int quad_points = parse_quad_points(quad_arg);
  const std::uint64_t seed = ov.seed;
  ChainConfig cfg = resolve_chain_config(m.chains, ov);

  FittedModel fm = draws_path.empty() ? fit_model(m.spec, m.data, cfg)
                                      : fitted_from_draws(m, draws_path);
  if (!fm.fit.converged)
    std::cerr << "warning: fit did not converge (max R-hat " << fm.fit.max_rhat
              << "); criteria computed on the partial draws\n";

  fs::create_directories(out_dir);
  json results = json::array();
  std::vector<CriterionResult> rows;
  for (const auto& job : jobs) {
    CriterionOutput out = evaluate_criterion(fm, make_request(job, quad_points, seed, cfg));
    out.result.model = m.name;
    results.push_back(result_json(out.result, out.quad_M));
    rows.push_back(out.result);
    if (out.trace.selected > 0) {
      const std::string stem = "select_m_" + job_label(job) + "-" +
                               std::string(job.mode == PredMode::conditional_unit ? "c" : "m");
      write_text(fs::path(out_dir) / (stem + ".csv"), out.trace.csv());
    }
    std::cout << job_label(job) << " (" << pred_mode_name(out.result.mode)
              << "): value=" << out.result.value << " p_eff=" << out.result.p_eff
              << " mcerr=" << out.result.mcerr_value << "\n";
  }
  write_text(fs::path(out_dir) / "results.json", results.dump(2) + "\n");
  ComparisonReport table;
  table.rows = rows;
  write_text(fs::path(out_dir) / "results.csv", table.csv());
  return 0;
}

int run_replicate(const std::string& model_arg, const std::string& data_arg,
                  const std::string& criteria_arg, const std::string& mode_arg,
                  const std::string& quad_arg, const ChainOverrides& ov, int reps,
                  const std::string& out_dir) {
  const std::uint64_t seed = ov.seed;
  if (reps < 1) throw std::invalid_argument("--reps must be >= 1");
  LoadedModel m = load_inputs(model_arg, data_arg);
  const std::vector<CriterionJob> jobs = parse_criteria(criteria_arg, mode_arg);
  const int quad_points = parse_quad_points(quad_arg);

  int workers = 1;
  if (const char* env = std::getenv("LATIC_WORKERS")) {
    workers = std::max(1, std::atoi(env));
    workers = std::min(workers, reps);
  }

  const std::size_t n_jobs = jobs.size();
  std::vector<std::string> cells(static_cast<std::size_t>(reps) * n_jobs);
  std::vector<std::string> failures(static_cast<std::size_t>(reps));

  auto run_rep = [&](int rep) {
    std::ostringstream os;
    os.precision(6);
    ChainOverrides rep_ov = ov;
    rep_ov.seed = 0;
    ChainConfig cfg = resolve_chain_config(m.chains, rep_ov);
    cfg.seed = seed + static_cast<std::uint64_t>(rep);
    const std::size_t base = static_cast<std::size_t>(rep - 1) * n_jobs;
    FittedModel fm;
    try {
      fm = fit_model(m.spec, m.data, cfg);
    } catch (const std::exception& e) {
      failures[static_cast<std::size_t>(rep - 1)] = std::string("rep ") + std::to_string(rep) +
                                                    ": fit failed: " + e.what();
      for (std::size_t j = 0; j < n_jobs; ++j) {
        const auto& job = jobs[j];
        cells[base + j] = std::to_string(rep) + "," + m.name + "," + job_label(job) + "," +
                          pred_mode_name(job.mode) + ",,,\n";
      }
      return;
    }
    for (std::size_t j = 0; j < n_jobs; ++j) {
      const auto& job = jobs[j];
      os.str("");
      os << rep << ',' << m.name << ',' << job_label(job) << ',' << pred_mode_name(job.mode)
         << ',';
      try {
        CriterionOutput out = evaluate_criterion(fm, make_request(job, quad_points, cfg.seed, cfg));
        os << out.result.value << ',' << out.result.p_eff << ',' << out.result.mcerr_value;
      } catch (const std::exception& e) {
        os << ",,";
        failures[static_cast<std::size_t>(rep - 1)] += std::string("rep ") + std::to_string(rep) +
                                                       " " + job_label(job) + ": " + e.what() +
                                                       "\n";
      }
      os << '\n';
      cells[base + j] = os.str();
    }
  };

  if (workers <= 1) {
    for (int rep = 1; rep <= reps; ++rep) run_rep(rep);
  } else {
    std::vector<std::thread> pool;
    std::atomic<int> next{1};
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (int rep = next.fetch_add(1); rep <= reps; rep = next.fetch_add(1)) run_rep(rep);
      });
    for (auto& t : pool) t.join();
  }

  fs::create_directories(out_dir);
  std::string table = "rep,model,criterion,mode,value,p_eff,mcerr\n";
  for (const auto& c : cells) table += c;
  write_text(fs::path(out_dir) / "replicates.csv", table);

  std::string log;
  for (const auto& f : failures)
    if (!f.empty()) log += f.back() == '\n' ? f : f + "\n";
  if (!log.empty()) {
    write_text(fs::path(out_dir) / "replicate_failures.log", log);
    std::cerr << "some replicates failed; see replicate_failures.log\n";
  }
  std::cout << reps << " replicates x " << n_jobs << " criteria -> "
            << (fs::path(out_dir) / "replicates.csv").string() << "\n";
  return 0;
}

int run_compare(const std::vector<std::string>& model_args, const std::string& data_arg,
                const std::string& criteria_arg, const std::string& mode_arg,
                const std::string& quad_arg, const ChainOverrides& ov, const std::string& out_dir) {
  const std::uint64_t seed = ov.seed;
  if (model_args.size() < 2) throw std::invalid_argument("compare needs at least two --model");
  const std::vector<CriterionJob> jobs = parse_criteria(criteria_arg, mode_arg);
  if (jobs.size() != 1)
    throw std::invalid_argument("compare ranks models under exactly one criterion x mode");
  const CriterionJob job = jobs[0];
  const int quad_points = parse_quad_points(quad_arg);

  // models share one dataset: --data, or the first model's bundled data
  std::vector<LoadedModel> models;
  models.push_back(load_inputs(model_args[0], data_arg));
  for (std::size_t i = 1; i < model_args.size(); ++i) {
    LoadedModel mi = is_fixture_name(model_args[i]) ? [&] {
      Fixture f = make_fixture(model_args[i]);
      LoadedModel lm;
      lm.name = f.name;
      lm.spec = f.spec;
      return lm;
    }() : load_model_config(model_args[i]);
    mi.data = models[0].data;
    mi.has_data = true;
    if (mi.spec.family == Family::rasch && mi.spec.cov_center.size() != mi.spec.n_cov)
      standardize_covariates(mi.spec, mi.data);
    validate_for(mi.spec, mi.data);
    models.push_back(std::move(mi));
  }

  std::vector<CriterionResult> rows;
  for (std::size_t i = 0; i < models.size(); ++i) {
    ChainOverrides mov = ov;
    mov.seed = 0;
    ChainConfig cfg = resolve_chain_config(models[i].chains, mov);
    cfg.seed = seed + static_cast<std::uint64_t>(i);
    FittedModel fm = fit_model(models[i].spec, models[i].data, cfg);
    if (!fm.fit.converged)
      std::cerr << "warning: " << models[i].name << " did not converge (max R-hat "
                << fm.fit.max_rhat << ")\n";
    CriterionOutput out = evaluate_criterion(fm, make_request(job, quad_points, cfg.seed, cfg));
    out.result.model = models[i].name;
    rows.push_back(out.result);
  }

  ComparisonReport rep = compare_models(rows);
  fs::create_directories(out_dir);
  write_text(fs::path(out_dir) / "comparison.csv", rep.csv());
  json o;
  o["criterion"] = rep.criterion;
  o["mode"] = rep.mode;
  o["ranking"] = json::array();
  for (const auto& r : rep.rows) o["ranking"].push_back(result_json(r, 0));
  o["pairs"] = json::array();
  for (const auto& p : rep.pairs)
    o["pairs"].push_back({{"model_a", p.model_a},
                          {"model_b", p.model_b},
                          {"delta", p.delta},
                          {"combined_mcerr", p.combined_mcerr},
                          {"indistinguishable", p.indistinguishable}});
  write_text(fs::path(out_dir) / "comparison.json", o.dump(2) + "\n");
  std::cout << rep.csv();
  return 0;
}

int run_simulate(const std::string& model_arg, std::uint64_t seed, const std::string& out_dir) {
  Fixture f;
  if (is_fixture_name(model_arg)) {
    f = make_fixture(model_arg, seed);
  } else {
    const json cfg = parse_json_file(model_arg);
    LoadedModel m = load_model_config(model_arg);
    f.name = m.name;
    f.spec = m.spec;
    f.layout = make_layout(m.spec);
    if (!cfg.contains("true_omega") || !cfg.contains("true_psi"))
      throw std::invalid_argument(model_arg + ": simulate needs true_omega and true_psi");
    const auto& to = cfg.at("true_omega");
    const auto& tp = cfg.at("true_psi");
    if (static_cast<int>(to.size()) != f.layout.n_omega ||
        static_cast<int>(tp.size()) != f.layout.n_psi)
      throw std::invalid_argument(model_arg + ": true_omega/true_psi must have " +
                                  std::to_string(f.layout.n_omega) + "/" +
                                  std::to_string(f.layout.n_psi) + " entries");
    f.true_omega.resize(f.layout.n_omega);
    f.true_psi.resize(f.layout.n_psi);
    for (int k = 0; k < f.layout.n_omega; ++k) f.true_omega[k] = to[static_cast<std::size_t>(k)];
    for (int k = 0; k < f.layout.n_psi; ++k) f.true_psi[k] = tp[static_cast<std::size_t>(k)];
    const int J = cfg.value("n_clusters", 0);
    const int n_j = cfg.value("n_units", 0);
    f.data = simulate(f.spec, f.layout, f.true_omega, f.true_psi, J, n_j,
                      seed != 0 ? seed : cfg.value("seed", 1));
  }
  fs::create_directories(out_dir);
  write_csv(f.data, (fs::path(out_dir) / "data.csv").string());
  json truth;
  truth["name"] = f.name;
  truth["family"] = family_name(f.spec.family);
  json om = json::object(), ps = json::object();
  for (int k = 0; k < f.layout.n_omega; ++k)
    om[f.layout.omega_names[static_cast<std::size_t>(k)]] =
        f.true_omega.size() > k ? json(f.true_omega[k]) : json();
  for (int k = 0; k < f.layout.n_psi; ++k)
    ps[f.layout.psi_names[static_cast<std::size_t>(k)]] =
        f.true_psi.size() > k ? json(f.true_psi[k]) : json();
  truth["true_omega"] = om;
  truth["true_psi"] = ps;
  write_text(fs::path(out_dir) / "truth.json", truth.dump(2) + "\n");
  std::cout << f.name << ": " << f.data.n_clusters() << " clusters, " << f.data.total_units()
            << " units -> " << (fs::path(out_dir) / "data.csv").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"latic: predictive criteria for Bayesian latent variable models"};
  app.require_subcommand(1);

  std::string model, data, draws, criteria = "waic", mode = "both", quad = "auto";
  std::string out_dir = "latic-out";
  std::vector<std::string> models;
  ChainOverrides ov;
  int reps = 10;

  auto add_common = [&](CLI::App* cmd, bool with_data) {
    if (with_data) cmd->add_option("--data", data, "data CSV or bundled dataset name");
    cmd->add_option("--seed", ov.seed, "RNG seed (0 keeps the config's seed)");
    cmd->add_option("--out", out_dir, "output directory");
  };
  auto add_chain_overrides = [&](CLI::App* cmd) {
    cmd->add_option("--chains", ov.n_chains, "override chain count");
    cmd->add_option("--warmup", ov.n_warmup, "override warm-up length");
    cmd->add_option("--keep", ov.n_keep, "override retained draws per chain");
  };

  CLI::App* fit = app.add_subcommand("fit", "run the sampler, write draws + convergence report");
  fit->add_option("--model", model, "bundled fixture name or model JSON")->required();
  add_common(fit, true);
  add_chain_overrides(fit);

  CLI::App* crit = app.add_subcommand("criteria", "evaluate predictive criteria on a fit");
  crit->add_option("--model", model, "bundled fixture name or model JSON")->required();
  crit->add_option("--draws", draws, "draws CSV from a previous fit (fits in-process if absent)");
  crit->add_option("--criteria", criteria,
                   "comma list: dic-spiegelhalter, dic-plummer, waic, psis-loo, exact-loo "
                   "(suffix -m/-c pins the mode; exact-loo-unit/-cluster pins the fold)");
  crit->add_option("--mode", mode, "conditional | marginal | both");
  crit->add_option("--quad-points", quad, "auto (ladder selection) or a fixed odd count");
  add_common(crit, true);
  add_chain_overrides(crit);

  CLI::App* repl = app.add_subcommand("replicate", "repeat fit+criteria R times, one CSV row each");
  repl->add_option("--model", model, "bundled fixture name or model JSON")->required();
  repl->add_option("--criteria", criteria, "comma list as in `criteria`");
  repl->add_option("--mode", mode, "conditional | marginal | both");
  repl->add_option("--quad-points", quad, "auto or a fixed odd count");
  repl->add_option("--reps", reps, "number of replicates");
  add_common(repl, true);
  add_chain_overrides(repl);

  CLI::App* cmp = app.add_subcommand("compare", "rank models under one criterion");
  cmp->add_option("--model", models, "two or more models (repeat the flag)")->required();
  cmp->add_option("--criteria", criteria, "exactly one criterion token");
  cmp->add_option("--mode", mode, "conditional | marginal");
  cmp->add_option("--quad-points", quad, "auto or a fixed odd count");
  add_common(cmp, true);
  add_chain_overrides(cmp);

  CLI::App* sim = app.add_subcommand("simulate", "write a synthetic dataset and its truth");
  sim->add_option("--model", model, "bundled fixture name or model JSON with true_omega/true_psi")
      ->required();
  add_common(sim, false);

  CLI11_PARSE(app, argc, argv);

  try {
    if (fit->parsed()) return run_fit(model, data, ov, out_dir);
    if (crit->parsed()) return run_criteria(model, data, draws, criteria, mode, quad, ov, out_dir);
    if (repl->parsed()) return run_replicate(model, data, criteria, mode, quad, ov, reps, out_dir);
    if (cmp->parsed()) return run_compare(models, data, criteria, mode, quad, ov, out_dir);
    if (sim->parsed()) return run_simulate(model, ov.seed, out_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
