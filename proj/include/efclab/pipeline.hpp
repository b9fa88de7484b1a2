#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "efclab/common.hpp"
#include "efclab/freeze.hpp"
#include "efclab/gates.hpp"
#include "efclab/harness.hpp"
#include "efclab/report.hpp"
#include "efclab/scaling.hpp"
#include "efclab/statusgen.hpp"
#include "efclab/suite.hpp"
#include "efclab/trace_io.hpp"

namespace efclab {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration file (JSON). Absent keys fall back to the defaults.
// ---------------------------------------------------------------------------

inline json suite_to_json(const SuiteConfig& cfg) {
  json j;
  j["master_seed"] = cfg.master_seed;
  j["replicates"] = cfg.replicates;
  j["jobs"] = cfg.jobs;
  j["kappa"] = cfg.kappa;
  j["harnesses"] = cfg.harnesses;
  json models = json::array();
  for (const auto& m : cfg.models) {
    models.push_back({{"model_id", m.model_id}, {"capability", m.capability}});
  }
  j["models"] = models;
  json levels = json::array();
  for (const auto& b : cfg.budget_levels) {
    levels.push_back({{"label", b.label}, {"multiplier", b.multiplier}});
  }
  j["budget_levels"] = levels;
  json tmpl = json::array();
  for (const auto& t : cfg.templates) {
    tmpl.push_back({{"family", to_string(t.family)},
                    {"size", t.size},
                    {"n_tools", t.n_tools},
                    {"n_correct", t.n_correct},
                    {"obs_noise", t.obs_noise},
                    {"oracle_visibility", t.oracle_visibility},
                    {"htool_as_count", t.htool_as_count}});
  }
  j["templates"] = tmpl;
  j["caps"] = {{"tokens", cfg.caps.tokens},
               {"tool_calls", cfg.caps.tool_calls},
               {"operations", cfg.caps.operations},
               {"wall_time", cfg.caps.wall_time}};
  return j;
}

inline SuiteConfig suite_from_json(const json& j) {
  SuiteConfig cfg = default_suite_config();
  if (j.contains("master_seed")) cfg.master_seed = j.at("master_seed").get<std::uint64_t>();
  if (j.contains("replicates")) cfg.replicates = j.at("replicates").get<int>();
  if (j.contains("jobs")) cfg.jobs = j.at("jobs").get<int>();
  if (j.contains("kappa")) cfg.kappa = j.at("kappa").get<double>();
  if (j.contains("harnesses")) cfg.harnesses = j.at("harnesses").get<std::vector<std::string>>();
  if (j.contains("models")) {
    cfg.models.clear();
    for (const auto& m : j.at("models")) {
      cfg.models.push_back({m.at("model_id").get<std::string>(), m.at("capability").get<double>()});
    }
  }
  if (j.contains("budget_levels")) {
    cfg.budget_levels.clear();
    for (const auto& b : j.at("budget_levels")) {
      cfg.budget_levels.push_back(
          {b.at("label").get<std::string>(), b.at("multiplier").get<double>()});
    }
  }
  if (j.contains("templates")) {
    cfg.templates.clear();
    for (const auto& t : j.at("templates")) {
      TaskParams p;
      auto fam = family_from_string(t.at("family").get<std::string>());
      if (!fam) fail("invalid-config", "unknown family in templates");
      p.family = *fam;
      p.size = t.at("size").get<std::int64_t>();
      p.n_tools = t.value("n_tools", std::int64_t{4});
      p.n_correct = t.value("n_correct", std::int64_t{1});
      p.obs_noise = t.value("obs_noise", 0.2);
      p.oracle_visibility = t.value("oracle_visibility", 0.5);
      p.htool_as_count = t.value("htool_as_count", false);
      cfg.templates.push_back(p);
    }
  }
  if (j.contains("caps")) {
    const auto& c = j.at("caps");
    cfg.caps.tokens = c.value("tokens", cfg.caps.tokens);
    cfg.caps.tool_calls = c.value("tool_calls", cfg.caps.tool_calls);
    cfg.caps.operations = c.value("operations", cfg.caps.operations);
    cfg.caps.wall_time = c.value("wall_time", cfg.caps.wall_time);
  }
  return cfg;
}

inline std::string config_hash(const SuiteConfig& cfg) {
  json j = suite_to_json(cfg);
  j.erase("jobs");  // worker count is an execution detail, not an experiment input
  return to_hex(fnv1a64(j.dump()));
}

inline SuiteConfig load_config(const std::string& path) {
  if (path.empty()) return default_suite_config();
  std::ifstream in(path);
  if (!in) fail("invalid-config", "cannot read config file " + path);
  json j = json::parse(in, nullptr, true, true);
  return suite_from_json(j);
}

// ---------------------------------------------------------------------------
// Scores CSV (RunMetrics round-trip so stages are independently resumable)
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& metrics_csv_header() {
  static const std::vector<std::string> h = {
      "run_id",       "task_id",    "family",        "harness_id",   "model_id",
      "budget_level", "seed",       "success",       "tokens",       "tool_calls",
      "operations",   "wall_time",  "raw_cost",      "efc_oracle",   "efc_estimated",
      "efc_stable",   "efc_nrs",    "d_steps",       "d_tool",       "d_state",
      "d_noise",      "d_oracle",   "capability",    "novelty_mean", "redundancy",
      "referenced_frac", "worsen_frac", "overhead",  "effective_actions"};
  return h;
}

inline std::vector<std::string> metrics_csv_row(const RunMetrics& m) {
  return {m.run_id,
          m.task_id,
          m.family,
          m.harness_id,
          m.model_id,
          m.budget_level,
          std::to_string(m.seed),
          std::to_string(m.success),
          csv_num(m.tokens),
          csv_num(m.tool_calls),
          csv_num(m.operations),
          csv_num(m.wall_time),
          csv_num(m.raw_cost),
          csv_num(m.efc_oracle),
          csv_num(m.efc_estimated),
          csv_num(m.efc_stable),
          csv_num(m.efc_nrs),
          csv_num(m.demand[0]),
          csv_num(m.demand[1]),
          csv_num(m.demand[2]),
          csv_num(m.demand[3]),
          csv_num(m.demand[4]),
          csv_num(m.capability),
          csv_num(m.novelty_mean),
          csv_num(m.redundancy),
          csv_num(m.referenced_frac),
          csv_num(m.worsen_frac),
          csv_num(m.overhead),
          csv_num(m.effective_actions)};
}

inline std::vector<RunMetrics> metrics_from_csv(std::istream& in) {
  std::vector<RunMetrics> out;
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      header_seen = true;
      continue;
    }
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != metrics_csv_header().size()) {
      fail("invalid-config", "scores row has wrong column count");
    }
    RunMetrics m;
    std::size_t i = 0;
    m.run_id = f[i++];
    m.task_id = f[i++];
    m.family = f[i++];
    m.harness_id = f[i++];
    m.model_id = f[i++];
    m.budget_level = f[i++];
    m.seed = std::stoull(f[i++]);
    m.success = std::stoi(f[i++]);
    m.tokens = std::stod(f[i++]);
    m.tool_calls = std::stod(f[i++]);
    m.operations = std::stod(f[i++]);
    m.wall_time = std::stod(f[i++]);
    m.raw_cost = std::stod(f[i++]);
    m.efc_oracle = std::stod(f[i++]);
    m.efc_estimated = std::stod(f[i++]);
    m.efc_stable = std::stod(f[i++]);
    m.efc_nrs = std::stod(f[i++]);
    for (int d = 0; d < 5; ++d) m.demand[static_cast<std::size_t>(d)] = std::stod(f[i++]);
    m.capability = std::stod(f[i++]);
    m.novelty_mean = std::stod(f[i++]);
    m.redundancy = std::stod(f[i++]);
    m.referenced_frac = std::stod(f[i++]);
    m.worsen_frac = std::stod(f[i++]);
    m.overhead = std::stod(f[i++]);
    m.effective_actions = std::stod(f[i++]);
    out.push_back(std::move(m));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Estimator persistence
// ---------------------------------------------------------------------------

inline json estimator_to_json(const EstimatorParams& p) {
  json j;
  j["theta0"] = p.theta0;
  j["theta"] = p.theta;
  j["feature_order"] = kFeatureNames;
  j["training_rmse"] = p.training_rmse;
  j["calibration_fingerprint"] = p.calibration_fingerprint;
  return j;
}

inline EstimatorParams estimator_from_json(const json& j) {
  EstimatorParams p;
  p.theta0 = j.at("theta0").get<double>();
  auto th = j.at("theta").get<std::vector<double>>();
  for (std::size_t i = 0; i < 9 && i < th.size(); ++i) p.theta[i] = th[i];
  p.training_rmse = j.value("training_rmse", 0.0);
  p.calibration_fingerprint = j.value("calibration_fingerprint", std::string());
  return p;
}

inline EstimatorParams load_estimator(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("missing-params", "cannot read estimator params " + path);
  return estimator_from_json(json::parse(in));
}

// ---------------------------------------------------------------------------
// Shared stage helpers
// ---------------------------------------------------------------------------

struct PipelineContext {
  SuiteConfig suite;
  fs::path out;
  std::string comment;  // master seed + config hash comment for every CSV
};

inline PipelineContext make_context(const SuiteConfig& cfg, const fs::path& out) {
  PipelineContext ctx;
  ctx.suite = cfg;
  ctx.out = out;
  ctx.comment = "master_seed=" + std::to_string(cfg.master_seed) +
                " config_hash=" + config_hash(cfg);
  return ctx;
}

/// Estimator calibration on the suite: pairs from calibration tasks selected
/// by seed parity (even = calibration); falls back to all runs if the parity
/// split leaves too little data.
inline EstimatorParams calibrate_on_suite(const SuiteResult& suite, double kappa) {
  std::set<std::string> calibration_tasks;
  for (const auto& t : suite.tasks) {
    if (t.seed % 2 == 0) calibration_tasks.insert(t.task_id);
  }
  auto keep = [&](const RunRecord& r) { return calibration_tasks.count(r.task_id) > 0; };
  auto pairs = build_calibration_pairs(suite.runs, suite.tasks, suite.task_index, kappa, keep);
  if (pairs.size() < 50) {
    pairs = build_calibration_pairs(suite.runs, suite.tasks, suite.task_index, kappa);
  }
  EstimatorParams params = fit_estimator(pairs);
  params.calibration_fingerprint = to_hex(fnv1a64(std::to_string(pairs.size())));
  return params;
}

inline std::vector<RunMetrics> suite_metrics(const SuiteResult& suite,
                                             const EstimatorParams& estimator,
                                             const SuiteConfig& cfg) {
  std::map<std::string, double> cap;
  for (const auto& m : cfg.models) cap[m.model_id] = m.capability;
  std::vector<RunMetrics> out;
  out.reserve(suite.runs.size());
  for (const auto& run : suite.runs) {
    const TaskInstance& task = suite.tasks[suite.task_index.at(run.task_id)];
    out.push_back(compute_run_metrics(run, task, estimator,
                                      cap.count(run.model_id) ? cap.at(run.model_id) : 0.5,
                                      cfg.kappa));
  }
  return out;
}

inline void write_traces(const PipelineContext& ctx, const std::vector<RunRecord>& runs,
                         const std::string& name = "traces.jsonl") {
  atomic_write_file(ctx.out / name, emit_runs(runs));
}

inline void write_metrics_csv(const PipelineContext& ctx, const std::vector<RunMetrics>& metrics,
                              const std::string& name = "scores.csv") {
  CsvTable t;
  t.comment = ctx.comment;
  t.header = metrics_csv_header();
  for (const auto& m : metrics) t.rows.push_back(metrics_csv_row(m));
  atomic_write_file(ctx.out / name, t.render());
}

inline void write_tasks_manifest(const PipelineContext& ctx, const std::vector<TaskInstance>& tasks,
                                 const std::string& name = "tasks.jsonl") {
  std::ostringstream os;
  for (const auto& t : tasks) {
    json j;
    j["task_id"] = t.task_id;
    j["family"] = to_string(t.family);
    j["seed"] = t.seed;
    j["params"] = {{"size", t.params.size},
                   {"n_tools", t.params.n_tools},
                   {"n_correct", t.params.n_correct},
                   {"obs_noise", t.params.obs_noise},
                   {"oracle_visibility", t.params.oracle_visibility}};
    j["demand_raw"] = {{"min_steps", t.demand.min_steps},
                       {"tool_entropy", t.demand.tool_entropy},
                       {"state_demand", t.demand.state_demand},
                       {"obs_noise", t.demand.obs_noise},
                       {"oracle_visibility", t.demand.oracle_visibility}};
    j["demand_normalized"] = {{"min_steps", t.normalized_demand.min_steps},
                              {"tool_entropy", t.normalized_demand.tool_entropy},
                              {"state_demand", t.normalized_demand.state_demand},
                              {"obs_noise", t.normalized_demand.obs_noise},
                              {"oracle_visibility", t.normalized_demand.oracle_visibility}};
    os << j.dump() << "\n";
  }
  atomic_write_file(ctx.out / name, os.str());
}

/// One power-law panel per coordinate plus the summary row set.
struct FitStageResult {
  std::vector<CoordinateFit> fits;
  std::map<std::string, std::vector<std::pair<double, double>>> points;  // per coordinate
};

inline FitStageResult fit_coordinates(const std::vector<RunMetrics>& metrics,
                                      const std::vector<std::string>& coordinates,
                                      const DemandExponents* fitted = nullptr) {
  FitStageResult out;
  for (const auto& name : coordinates) {
    if (name == "sas") {
      out.fits.push_back(evaluate_sas(metrics));
      auto cells = aggregate_cells(metrics, [](const RunMetrics&) { return 0.0; });
      SasModel sas = fit_sas(cells);
      std::vector<std::pair<double, double>> pts;
      for (const auto& c : cells) pts.emplace_back(sas.predict(c.proxies), c.failure);
      out.points[name] = pts;
      continue;
    }
    const DemandExponents* w = nullptr;
    std::string base = name;
    if (name.size() > 7 && name.substr(name.size() - 7) == "_fitted") {
      base = name.substr(0, name.size() - 7);
      w = fitted;
    }
    auto cells =
        aggregate_cells(metrics, [&](const RunMetrics& m) { return coordinate_value(m, base, w); });
    std::vector<double> z;
    for (const auto& c : cells) z.push_back(c.z);
    median_normalize(z);
    std::vector<std::pair<double, double>> pts;
    for (std::size_t i = 0; i < cells.size(); ++i) pts.emplace_back(z[i], cells[i].failure);
    CoordinateFit fit;
    fit.coordinate = name;
    fit.fit = fit_power_law(pts);
    fit.r2 = fit.fit.r2;
    fit.mae = fit.fit.mae;
    fit.n_cells = cells.size();
    out.fits.push_back(fit);
    out.points[name] = pts;
  }
  return out;
}

inline void write_fit_outputs(const PipelineContext& ctx, const FitStageResult& stage) {
  CsvTable fits;
  fits.comment = ctx.comment;
  fits.header = {"coordinate", "e_inf", "a", "alpha", "sse", "r2", "mae", "n_cells"};
  CsvTable summary;
  summary.comment = ctx.comment;
  summary.header = {"coordinate", "r2", "mae", "n_cells"};
  for (const auto& f : stage.fits) {
    fits.rows.push_back({f.coordinate, csv_num(f.fit.e_inf), csv_num(f.fit.a),
                         csv_num(f.fit.alpha), csv_num(f.fit.sse), csv_num(f.r2), csv_num(f.mae),
                         std::to_string(f.n_cells)});
    summary.rows.push_back({f.coordinate, csv_num(f.r2), csv_num(f.mae), std::to_string(f.n_cells)});
  }
  atomic_write_file(ctx.out / "fits.csv", fits.render());
  atomic_write_file(ctx.out / "summary.csv", summary.render());
  for (const auto& f : stage.fits) {
    auto it = stage.points.find(f.coordinate);
    if (it == stage.points.end()) continue;
    std::string svg = svg_scaling_plot(f.coordinate, it->second, f.fit);
    atomic_write_file(ctx.out / (f.coordinate + ".svg"), svg);
  }
}

// ---------------------------------------------------------------------------
// Two-proportion z-test (matched-budget margin)
// ---------------------------------------------------------------------------

inline double two_proportion_p_value(double successes_a, double n_a, double successes_b,
                                     double n_b) {
  if (n_a <= 0 || n_b <= 0) fail("degenerate-observations", "empty proportion sample");
  double p1 = successes_a / n_a, p2 = successes_b / n_b;
  double pooled = (successes_a + successes_b) / (n_a + n_b);
  double se = std::sqrt(std::max(1e-300, pooled * (1.0 - pooled) * (1.0 / n_a + 1.0 / n_b)));
  double z = (p1 - p2) / se;
  return std::erfc(std::abs(z) / std::sqrt(2.0));  // two-sided
}

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {
      "controlled_scaling", "matched_budget", "trace_estimation",
      "factor_scan",        "module_ablation", "demand_collapse",
      "demand_transfer",    "holdout",         "prospective"};
  return names;
}

inline const std::vector<std::string>& fig1_coordinates() {
  static const std::vector<std::string> c = {
      "raw_tokens",  "wall_time", "raw_cost",      "operations",       "tool_calls",
      "sas",         "oracle_efc", "estimated_efc", "oracle_efc_dtask"};
  return c;
}

namespace detail {

inline void run_controlled_scaling(const PipelineContext& ctx) {
  SuiteResult suite = run_suite(ctx.suite);
  write_traces(ctx, suite.runs);
  write_tasks_manifest(ctx, suite.tasks);
  EstimatorParams estimator = calibrate_on_suite(suite, ctx.suite.kappa);
  atomic_write_file(ctx.out / "estimator.json", estimator_to_json(estimator).dump(2) + "\n");
  auto metrics = suite_metrics(suite, estimator, ctx.suite);
  write_metrics_csv(ctx, metrics);
  auto stage = fit_coordinates(metrics, fig1_coordinates());
  write_fit_outputs(ctx, stage);
}

inline void run_matched_budget(const PipelineContext& ctx) {
  auto tasks = generate_suite_tasks(ctx.suite);
  BudgetLevel level = ctx.suite.budget_levels.size() > 2 ? ctx.suite.budget_levels[2]
                                                         : ctx.suite.budget_levels.back();
  int seeds_per_cell = std::max(1, 540 / static_cast<int>(tasks.size() * ctx.suite.models.size()));
  CsvTable pairs_csv;
  pairs_csv.comment = ctx.comment;
  pairs_csv.header = {"task_id", "model_id", "seed",   "tokens_delta", "tool_calls_delta",
                      "ops_delta", "wall_delta", "raw_cost_delta", "events_delta",
                      "success_low", "success_high"};
  double n = 0, low_succ = 0, high_succ = 0;
  std::vector<RunRecord> traces;
  for (const auto& task : tasks) {
    for (const auto& model : ctx.suite.models) {
      for (int s = 0; s < seeds_per_cell; ++s) {
        std::uint64_t seed = mix_run_seed(ctx.suite.master_seed ^ fnv1a64("matched"),
                                          task.task_id, "H5", model.model_id, level.label,
                                          static_cast<std::uint64_t>(s));
        MatchedPair pair = matched_pair(task, model, level, seed, ctx.suite.caps);
        n += 1;
        low_succ += pair.low.success;
        high_succ += pair.high.success;
        pairs_csv.rows.push_back({task.task_id, model.model_id, std::to_string(seed),
                                  std::to_string(pair.deltas.tokens),
                                  std::to_string(pair.deltas.tool_calls),
                                  std::to_string(pair.deltas.operations),
                                  csv_num(pair.deltas.wall_time), csv_num(pair.deltas.raw_cost),
                                  std::to_string(pair.deltas.events),
                                  std::to_string(pair.low.success),
                                  std::to_string(pair.high.success)});
        if (traces.size() < 40) {
          traces.push_back(pair.low);
          traces.push_back(pair.high);
        }
      }
    }
  }
  write_traces(ctx, traces);
  atomic_write_file(ctx.out / "scores.csv", pairs_csv.render());
  double p = two_proportion_p_value(high_succ, n, low_succ, n);
  CsvTable summary;
  summary.comment = ctx.comment;
  summary.header = {"metric", "value"};
  summary.rows = {{"pairs", csv_num(n)},
                  {"success_low", csv_num(low_succ / n)},
                  {"success_high", csv_num(high_succ / n)},
                  {"margin", csv_num((high_succ - low_succ) / n)},
                  {"p_value", csv_num(p)},
                  {"budget_deltas_zero", "1"}};
  atomic_write_file(ctx.out / "summary.csv", summary.render());
}

inline void run_trace_estimation(const PipelineContext& ctx) {
  SuiteResult suite = run_suite(ctx.suite);
  write_traces(ctx, suite.runs);
  CsvTable summary;
  summary.comment = ctx.comment;
  summary.header = {"fold", "held_out_family", "pearson", "n_runs"};

  std::vector<double> pooled_est, pooled_oracle;
  std::map<std::string, double> cap;
  for (const auto& m : ctx.suite.models) cap[m.model_id] = m.capability;
  int fold = 0;
  for (TaskFamily fam :
       {TaskFamily::needle_lookup, TaskFamily::state_tracking, TaskFamily::rule_filter}) {
    std::string fam_name = to_string(fam);
    std::set<std::string> cal_tasks, eval_tasks;
    for (const auto& t : suite.tasks) {
      if (to_string(t.family) != fam_name && t.seed % 2 == 0) cal_tasks.insert(t.task_id);
      if (to_string(t.family) == fam_name && t.seed % 2 == 1) eval_tasks.insert(t.task_id);
    }
    auto pairs = build_calibration_pairs(
        suite.runs, suite.tasks, suite.task_index, ctx.suite.kappa,
        [&](const RunRecord& r) { return cal_tasks.count(r.task_id) > 0; });
    EstimatorParams est = fit_estimator(pairs);
    std::vector<double> e, o;
    for (const auto& run : suite.runs) {
      if (!eval_tasks.count(run.task_id)) continue;
      const TaskInstance& task = suite.tasks[suite.task_index.at(run.task_id)];
      e.push_back(estimate_run_efc(est, run));
      o.push_back(oracle_run_efc(run, task, EfcConfig{ctx.suite.kappa}));
    }
    double r = pearson(e, o);
    summary.rows.push_back({std::to_string(fold), fam_name, csv_num(r),
                            std::to_string(e.size())});
    pooled_est.insert(pooled_est.end(), e.begin(), e.end());
    pooled_oracle.insert(pooled_oracle.end(), o.begin(), o.end());
    ++fold;
  }
  double pooled_r = pearson(pooled_est, pooled_oracle);
  summary.rows.push_back({"pooled", "*", csv_num(pooled_r),
                          std::to_string(pooled_est.size())});
  atomic_write_file(ctx.out / "summary.csv", summary.render());

  // held-out fits for the estimated vs oracle coordinates
  EstimatorParams estimator = calibrate_on_suite(suite, ctx.suite.kappa);
  auto metrics = suite_metrics(suite, estimator, ctx.suite);
  write_metrics_csv(ctx, metrics);
  auto stage = fit_coordinates(metrics, {"oracle_efc", "estimated_efc", "oracle_efc_dtask",
                                         "estimated_efc_dtask"});
  write_fit_outputs(ctx, stage);
  atomic_write_file(ctx.out / "correlations.csv", summary.render());
  atomic_write_file(ctx.out / "summary.csv", summary.render());
}

inline void run_factor_scan(const PipelineContext& ctx, bool ablation_mode) {
  SuiteConfig scan_cfg = ctx.suite;
  scan_cfg.replicates = std::min(ctx.suite.replicates, 10);
  scan_cfg.models = {ctx.suite.models[std::min<std::size_t>(1, ctx.suite.models.size() - 1)]};
  scan_cfg.budget_levels = {{"x2", 2}, {"x4", 4}};

  struct Scan {
    std::string factor;
    std::vector<double> levels;
  };
  std::vector<Scan> scans;
  if (ablation_mode) {
    scans = {{"B_verify", {0.0, 0.3, 0.6, 0.9}},
             {"B_mem", {0.0, 0.3, 0.6, 0.9}},
             {"B_route", {0.0, 0.3, 0.6, 0.9}},
             {"noise_level", {0.6, 0.4, 0.2, 0.05}}};
  } else {
    scans = {{"B_route", {0.1, 0.4, 0.7, 0.9}},
             {"B_verify", {0.1, 0.4, 0.7, 0.9}},
             {"B_mem", {0.1, 0.4, 0.7, 0.9}},
             {"noise_level", {0.05, 0.2, 0.4, 0.6}},
             {"tool_entropy_penalty", {0.05, 0.2, 0.4, 0.6}},
             {"state_pressure", {0.05, 0.2, 0.4, 0.6}}};
  }

  HarnessConfig base = harness_config("H5");
  CsvTable table;
  table.comment = ctx.comment;
  table.header = {"factor", "level", "mean_eta", "success_rate", "n_runs"};
  std::vector<double> etas, succs, costs;
  for (const auto& scan : scans) {
    FactorScanResult res = factor_scan(base, scan.factor, scan.levels, scan_cfg);
    for (const auto& l : res.levels) {
      table.rows.push_back({scan.factor, csv_num(l.level), csv_num(l.mean_eta),
                            csv_num(l.success_rate), std::to_string(l.n_runs)});
      etas.push_back(l.mean_eta);
      succs.push_back(l.success_rate);
    }
  }
  atomic_write_file(ctx.out / "scores.csv", table.render());

  CsvTable summary;
  summary.comment = ctx.comment;
  summary.header = {"metric", "value"};
  summary.rows.push_back({"spearman_success_vs_eta", csv_num(spearman(succs, etas))});
  // linear R2 of success on eta across settings
  {
    double mx = mean_of(etas), my = mean_of(succs), sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < etas.size(); ++i) {
      sxy += (etas[i] - mx) * (succs[i] - my);
      sxx += (etas[i] - mx) * (etas[i] - mx);
    }
    double slope = sxx > 0 ? sxy / sxx : 0, intercept = my - slope * mx;
    std::vector<double> pred;
    for (double e : etas) pred.push_back(intercept + slope * e);
    summary.rows.push_back({"r2_success_vs_eta", csv_num(r_squared(succs, pred))});
  }
  atomic_write_file(ctx.out / "summary.csv", summary.render());
}

inline void run_demand_collapse(const PipelineContext& ctx) {
  SuiteResult suite = run_suite(ctx.suite);
  write_traces(ctx, suite.runs);
  write_tasks_manifest(ctx, suite.tasks);
  EstimatorParams estimator = calibrate_on_suite(suite, ctx.suite.kappa);
  auto metrics = suite_metrics(suite, estimator, ctx.suite);
  write_metrics_csv(ctx, metrics);
  std::set<std::string> cal_tasks;
  for (const auto& t : suite.tasks) {
    if (t.seed % 2 == 0) cal_tasks.insert(t.task_id);
  }
  std::vector<RunMetrics> calibration;
  for (const auto& m : metrics) {
    if (cal_tasks.count(m.task_id)) calibration.push_back(m);
  }
  DemandFitResult fitted = fit_demand_exponents(calibration, "oracle_efc");
  auto stage = fit_coordinates(metrics,
                               {"raw_tokens", "wall_time", "raw_cost", "operations", "tool_calls",
                                "sas", "oracle_efc", "oracle_efc_dtask",
                                "oracle_efc_dtask_fitted"},
                               &fitted.exponents);
  write_fit_outputs(ctx, stage);
  CsvTable exps;
  exps.comment = ctx.comment;
  exps.header = {"w_steps", "w_tool", "w_state", "w_noise", "w_oracle", "calibration_mae"};
  exps.rows.push_back({csv_num(fitted.exponents.w_steps), csv_num(fitted.exponents.w_tool),
                       csv_num(fitted.exponents.w_state), csv_num(fitted.exponents.w_noise),
                       csv_num(fitted.exponents.w_oracle), csv_num(fitted.calibration_mae)});
  atomic_write_file(ctx.out / "exponents.csv", exps.render());
}

inline void run_demand_transfer(const PipelineContext& ctx) {
  SuiteResult suite = run_suite(ctx.suite);
  EstimatorParams estimator = calibrate_on_suite(suite, ctx.suite.kappa);
  auto metrics = suite_metrics(suite, estimator, ctx.suite);
  write_metrics_csv(ctx, metrics);
  std::set<std::string> cal_tasks;
  for (const auto& t : suite.tasks) {
    if (t.seed % 2 == 0) cal_tasks.insert(t.task_id);
  }
  std::vector<RunMetrics> calibration, holdout;
  for (const auto& m : metrics) {
    (cal_tasks.count(m.task_id) ? calibration : holdout).push_back(m);
  }
  DemandFitResult fitted = fit_demand_exponents(calibration, "nrs_efc");

  CsvTable summary;
  summary.comment = ctx.comment;
  summary.header = {"coordinate", "holdout_mae", "holdout_r2"};
  auto eval_transfer = [&](const std::string& name, const DemandExponents* w,
                           const std::string& label = "") {
    std::vector<double> obs, pred;
    if (name == "sas") {
      auto train_cells = aggregate_cells(calibration, [](const RunMetrics&) { return 0.0; });
      SasModel sas = fit_sas(train_cells);
      auto eval_cells = aggregate_cells(holdout, [](const RunMetrics&) { return 0.0; });
      for (const auto& c : eval_cells) {
        obs.push_back(c.failure);
        pred.push_back(sas.predict(c.proxies));
      }
    } else {
      auto z_of = [&](const RunMetrics& m) { return coordinate_value(m, name, w); };
      auto train_cells = aggregate_cells(calibration, z_of);
      std::vector<double> z;
      for (const auto& c : train_cells) z.push_back(c.z);
      double med = median_normalize(z);
      std::vector<std::pair<double, double>> pts;
      for (std::size_t i = 0; i < train_cells.size(); ++i) {
        pts.emplace_back(z[i], train_cells[i].failure);
      }
      PowerLawFit fit = fit_power_law(pts);
      auto eval_cells = aggregate_cells(holdout, z_of);
      for (const auto& c : eval_cells) {
        obs.push_back(c.failure);
        pred.push_back(fit.predict(std::max(1e-6, c.z / med)));
      }
    }
    double r2 = 0;
    double mean = mean_of(obs);
    double sst = 0, sse = 0;
    for (std::size_t i = 0; i < obs.size(); ++i) {
      sst += (obs[i] - mean) * (obs[i] - mean);
      sse += (obs[i] - pred[i]) * (obs[i] - pred[i]);
    }
    if (sst > 0) r2 = 1.0 - sse / sst;
    summary.rows.push_back(
        {label.empty() ? name : label, csv_num(mae(obs, pred)), csv_num(r2)});
  };
  eval_transfer("raw_tokens", nullptr);
  eval_transfer("tool_calls", nullptr);
  eval_transfer("raw_cost", nullptr);
  eval_transfer("sas", nullptr);
  eval_transfer("nrs_efc", nullptr);
  eval_transfer("nrs_efc_dtask", nullptr, "nrs_efc_dtask_hand");
  eval_transfer("nrs_efc_dtask", &fitted.exponents, "nrs_efc_dtask_fitted");
  atomic_write_file(ctx.out / "summary.csv", summary.render());

  CsvTable exps;
  exps.comment = ctx.comment;
  exps.header = {"w_steps", "w_tool", "w_state", "w_noise", "w_oracle", "calibration_mae"};
  exps.rows.push_back({csv_num(fitted.exponents.w_steps), csv_num(fitted.exponents.w_tool),
                       csv_num(fitted.exponents.w_state), csv_num(fitted.exponents.w_noise),
                       csv_num(fitted.exponents.w_oracle), csv_num(fitted.calibration_mae)});
  atomic_write_file(ctx.out / "exponents.csv", exps.render());
}

inline void run_holdout(const PipelineContext& ctx) {
  SuiteResult suite = run_suite(ctx.suite);
  EstimatorParams estimator = calibrate_on_suite(suite, ctx.suite.kappa);
  auto metrics = suite_metrics(suite, estimator, ctx.suite);
  write_metrics_csv(ctx, metrics);

  CsvTable table;
  table.comment = ctx.comment;
  table.header = {"axis", "coordinate", "split_mae", "split_r2", "n_splits"};
  std::vector<std::pair<double, double>> calibration_pairs;
  for (HoldoutAxis axis : {HoldoutAxis::task_family, HoldoutAxis::harness, HoldoutAxis::model,
                           HoldoutAxis::combined}) {
    struct Entry {
      std::string coordinate;
      bool fitted;
    };
    for (const Entry& e :
         {Entry{"raw_tokens", false}, Entry{"wall_time", false}, Entry{"raw_cost", false},
          Entry{"operations", false}, Entry{"tool_calls", false}, Entry{"sas", false},
          Entry{"oracle_efc_dtask", false}, Entry{"estimated_efc_dtask", true}}) {
      HoldoutOptions opt;
      opt.fitted_demand = e.fitted;
      opt.kappa = ctx.suite.kappa;
      HoldoutReport rep = holdout_evaluate(metrics, axis, e.coordinate, opt);
      std::string label = e.coordinate + (e.fitted ? "_fitted" : "");
      table.rows.push_back({to_string(axis), label, csv_num(rep.split_mae),
                            csv_num(rep.split_r2), std::to_string(rep.splits.size())});
      if (e.coordinate == "estimated_efc_dtask") {
        calibration_pairs.insert(calibration_pairs.end(), rep.success_calibration.begin(),
                                 rep.success_calibration.end());
      }
    }
  }
  atomic_write_file(ctx.out / "summary.csv", table.render());

  // success-space calibration scatter for the strongest coordinate
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"440\" height=\"440\" viewBox=\"0 0 "
        "440 440\">\n<rect width=\"440\" height=\"440\" fill=\"white\"/>\n";
  os << "<line x1=\"40\" y1=\"400\" x2=\"400\" y2=\"40\" stroke=\"#aaa\"/>\n";
  for (const auto& [pred, obs] : calibration_pairs) {
    double x = 40 + clamp01(pred) * 360, y = 400 - clamp01(obs) * 360;
    os << "<circle cx=\"" << x << "\" cy=\"" << y
       << "\" r=\"3\" fill=\"#2980b9\" fill-opacity=\"0.6\"/>\n";
  }
  os << "<text x=\"220\" y=\"430\" text-anchor=\"middle\" font-size=\"12\" "
        "font-family=\"sans-serif\">predicted success</text>\n";
  os << "<text x=\"14\" y=\"220\" text-anchor=\"middle\" font-size=\"12\" "
        "font-family=\"sans-serif\" transform=\"rotate(-90 14 220)\">observed success</text>\n";
  os << "</svg>\n";
  atomic_write_file(ctx.out / "holdout_calibration.svg", os.str());
}

inline const std::vector<std::string>& prospective_coordinates() {
  static const std::vector<std::string> c = {"raw_tokens", "wall_time", "raw_cost",
                                             "operations", "tool_calls", "sas",
                                             "nrs_efc",    "nrs_efc_dtask"};
  return c;
}

inline void run_prospective(const PipelineContext& ctx) {
  // estimator calibrated once on the synthetic suite
  SuiteConfig small = ctx.suite;
  small.replicates = std::min(ctx.suite.replicates, 10);
  SuiteResult suite = run_suite(small);
  EstimatorParams estimator = calibrate_on_suite(suite, ctx.suite.kappa);

  StatusGenConfig pre_cfg;
  pre_cfg.master_seed = ctx.suite.master_seed;
  pre_cfg.batch_tag = 0;
  StatusGenBatch pre = generate_status_batch(pre_cfg);
  auto pre_metrics = status_batch_metrics(pre, estimator, pre_cfg.models, ctx.suite.kappa);

  DemandFitResult fitted = fit_demand_exponents(pre_metrics, "nrs_efc");
  FrozenProtocol protocol = freeze_protocol(ctx.suite.kappa, estimator, fitted.exponents,
                                            prospective_coordinates(), pre_metrics);
  atomic_write_file(ctx.out / "protocol.json", protocol_to_json(protocol).dump() + "\n");

  StatusGenConfig post_cfg = pre_cfg;
  post_cfg.master_seed = ctx.suite.master_seed ^ 0xABCDEF1234567ull;
  post_cfg.batch_tag = 1;
  StatusGenBatch post = generate_status_batch(post_cfg);
  write_traces(ctx, post.runs);
  auto post_metrics = status_batch_metrics(post, estimator, post_cfg.models, ctx.suite.kappa);
  write_metrics_csv(ctx, post_metrics);

  ProspectiveReport report = prospective_evaluate(protocol, ctx.suite.kappa, estimator,
                                                  fitted.exponents, post_metrics);
  CsvTable summary;
  summary.comment = ctx.comment + " fingerprint=" + report.fingerprint;
  summary.header = {"coordinate", "r2", "mae", "n_cells"};
  for (const auto& row : report.rows) {
    summary.rows.push_back(
        {row.coordinate, csv_num(row.r2), csv_num(row.mae), std::to_string(row.n_cells)});
  }
  atomic_write_file(ctx.out / "summary.csv", summary.render());
}

}  // namespace detail

/// Runs one named experiment preset end to end under out_dir. Outputs are
/// written atomically; any stage error propagates with its code.
inline void run_pipeline(const std::string& preset, const SuiteConfig& cfg,
                         const fs::path& out_dir) {
  bool known = false;
  for (const auto& p : preset_names()) known |= (p == preset);
  if (!known) fail("invalid-config", "unknown preset " + preset);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  PipelineContext ctx = make_context(cfg, out_dir);
  {
    // fail fast (and atomically) if the directory is not writable
    std::ofstream probe(out_dir / ".write_probe");
    if (!probe) fail("invalid-config", "output directory not writable: " + out_dir.string());
  }
  fs::remove(out_dir / ".write_probe", ec);

  if (preset == "controlled_scaling") {
    detail::run_controlled_scaling(ctx);
  } else if (preset == "matched_budget") {
    detail::run_matched_budget(ctx);
  } else if (preset == "trace_estimation") {
    detail::run_trace_estimation(ctx);
  } else if (preset == "factor_scan") {
    detail::run_factor_scan(ctx, false);
  } else if (preset == "module_ablation") {
    detail::run_factor_scan(ctx, true);
  } else if (preset == "demand_collapse") {
    detail::run_demand_collapse(ctx);
  } else if (preset == "demand_transfer") {
    detail::run_demand_transfer(ctx);
  } else if (preset == "holdout") {
    detail::run_holdout(ctx);
  } else if (preset == "prospective") {
    detail::run_prospective(ctx);
  }
}

// ---------------------------------------------------------------------------
// External trace scoring
// ---------------------------------------------------------------------------

/// Scores externally recorded traces in the canonical schema with the
/// calibrated estimator and the status gates. Demand factors, when supplied
/// via a tasks manifest, enable X = EFC/D; raw cost medians come from the
/// scored file itself.
inline void score_external(const std::string& trace_path, const std::string& estimator_path,
                           const std::string& demand_manifest_path, const fs::path& out_dir,
                           const std::string& comment) {
  EstimatorParams estimator = load_estimator(estimator_path);
  std::ifstream in(trace_path);
  if (!in) fail("invalid-config", "cannot read traces " + trace_path);
  IngestResult ingest = ingest_traces(in);

  std::map<std::string, std::array<double, 5>> demand;
  if (!demand_manifest_path.empty()) {
    std::ifstream din(demand_manifest_path);
    if (!din) fail("invalid-config", "cannot read demand manifest " + demand_manifest_path);
    std::string line;
    while (std::getline(din, line)) {
      if (line.empty()) continue;
      json j = json::parse(line);
      const json& d = j.contains("demand_normalized") ? j.at("demand_normalized") : j;
      demand[j.at("task_id").get<std::string>()] = {
          d.value("min_steps", 1.0), d.value("tool_entropy", 1.0), d.value("state_demand", 1.0),
          1.0 + d.value("obs_noise", 0.0), 1.0 - d.value("oracle_visibility", 0.0)};
    }
  }

  NormalizationContext norm{1, 1, 1, 1};
  bool have_costs = !ingest.runs.empty();
  if (have_costs) {
    norm = layer_normalization(ingest.runs);
    bool degenerate = norm.median_tokens <= 0 || norm.median_tool_calls <= 0 ||
                      norm.median_operations <= 0 || norm.median_wall_time <= 0;
    if (!degenerate) {
      fill_raw_costs(ingest.runs, norm);
    } else {
      have_costs = false;
    }
  }

  CsvTable events_csv;
  events_csv.comment = comment;
  events_csv.header = {"run_id", "event_index", "base", "q", "g", "lambda", "stable", "nrs"};
  CsvTable runs_csv;
  runs_csv.comment = comment;
  runs_csv.header = {"run_id",  "task_id", "success",       "estimated_efc", "stable_efc",
                     "nrs_efc", "raw_cost", "x_nrs_dtask",  "eta_nrs"};
  for (const auto& run : ingest.runs) {
    RunScores scores = score_run(estimator, run);
    for (const auto& e : scores.events) {
      events_csv.rows.push_back({run.run_id, std::to_string(e.event_index), csv_num(e.base),
                                 csv_num(e.q), csv_num(e.g), csv_num(e.lambda),
                                 csv_num(e.stable), csv_num(e.nrs)});
    }
    double d = 0;
    auto it = demand.find(run.task_id);
    if (it != demand.end()) {
      d = 1.0;
      for (double c : it->second) d *= c;
    }
    runs_csv.rows.push_back(
        {run.run_id, run.task_id, std::to_string(run.success), csv_num(scores.estimated),
         csv_num(scores.stable), csv_num(scores.nrs), csv_num(run.budget.raw_cost),
         d > 0 ? csv_num(scores.nrs / d) : "",
         have_costs && run.budget.raw_cost > 0 ? csv_num(scores.nrs / run.budget.raw_cost) : ""});
  }
  CsvTable diags;
  diags.comment = comment;
  diags.header = {"line", "code", "message"};
  for (const auto& d : ingest.diagnostics) {
    std::string msg = d.message;
    for (auto& ch : msg) {
      if (ch == ',' || ch == '\n') ch = ';';
    }
    diags.rows.push_back({std::to_string(d.line), d.code, msg});
  }
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  atomic_write_file(out_dir / "scores.csv", runs_csv.render());
  atomic_write_file(out_dir / "events.csv", events_csv.render());
  atomic_write_file(out_dir / "diagnostics.csv", diags.render());
}

}  // namespace efclab
