#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <future>
#include <map>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "efclab/common.hpp"
#include "efclab/core.hpp"
#include "efclab/efc.hpp"
#include "efclab/estimator.hpp"
#include "efclab/gates.hpp"
#include "efclab/harness.hpp"
#include "efclab/tasks.hpp"
#include "efclab/trace_io.hpp"

namespace efclab {

// ---------------------------------------------------------------------------
// Suite configuration
// ---------------------------------------------------------------------------

struct SuiteConfig {
  std::uint64_t master_seed = 42;
  std::vector<TaskParams> templates;
  std::vector<std::string> harnesses = all_harness_ids();
  std::vector<ModelProfile> models = {{"base-s", 0.55}, {"base-m", 0.75}, {"base-l", 0.90}};
  std::vector<BudgetLevel> budget_levels = {{"x1", 1}, {"x2", 2}, {"x4", 4}, {"x8", 8}};
  int replicates = 20;
  BaseCaps caps;
  double kappa = 10.0;
  int jobs = 1;
};

/// The default desk-scale suite: three families, six templates each, with
/// demand spread inside and across families.
inline SuiteConfig default_suite_config(std::uint64_t master_seed = 42) {
  SuiteConfig cfg;
  cfg.master_seed = master_seed;
  auto add = [&](TaskFamily fam, std::int64_t size, std::int64_t tools, double noise,
                 double voracle) {
    TaskParams p;
    p.family = fam;
    p.size = size;
    p.n_tools = tools;
    p.obs_noise = noise;
    p.oracle_visibility = voracle;
    cfg.templates.push_back(p);
  };
  add(TaskFamily::needle_lookup, 6, 10, 0.14, 0.46);
  add(TaskFamily::needle_lookup, 8, 10, 0.15, 0.44);
  add(TaskFamily::needle_lookup, 8, 10, 0.16, 0.43);
  add(TaskFamily::needle_lookup, 10, 10, 0.18, 0.40);
  add(TaskFamily::needle_lookup, 12, 10, 0.19, 0.39);
  add(TaskFamily::needle_lookup, 12, 10, 0.20, 0.37);
  add(TaskFamily::needle_lookup, 14, 10, 0.22, 0.34);
  add(TaskFamily::needle_lookup, 16, 10, 0.23, 0.33);
  add(TaskFamily::needle_lookup, 16, 10, 0.24, 0.31);
  add(TaskFamily::rule_filter, 4, 5, 0.14, 0.56);
  add(TaskFamily::rule_filter, 4, 5, 0.15, 0.54);
  add(TaskFamily::rule_filter, 5, 5, 0.16, 0.53);
  add(TaskFamily::rule_filter, 5, 5, 0.18, 0.50);
  add(TaskFamily::rule_filter, 6, 5, 0.19, 0.49);
  add(TaskFamily::rule_filter, 6, 5, 0.20, 0.47);
  add(TaskFamily::rule_filter, 6, 5, 0.22, 0.44);
  add(TaskFamily::rule_filter, 7, 5, 0.23, 0.42);
  add(TaskFamily::rule_filter, 7, 5, 0.24, 0.41);
  add(TaskFamily::state_tracking, 5, 4, 0.14, 0.60);
  add(TaskFamily::state_tracking, 5, 4, 0.15, 0.58);
  add(TaskFamily::state_tracking, 6, 4, 0.16, 0.57);
  add(TaskFamily::state_tracking, 6, 4, 0.18, 0.54);
  add(TaskFamily::state_tracking, 6, 4, 0.19, 0.53);
  add(TaskFamily::state_tracking, 7, 4, 0.20, 0.51);
  add(TaskFamily::state_tracking, 7, 4, 0.22, 0.48);
  add(TaskFamily::state_tracking, 8, 4, 0.23, 0.46);
  add(TaskFamily::state_tracking, 8, 4, 0.24, 0.45);
  return cfg;
}

inline std::vector<TaskInstance> generate_suite_tasks(const SuiteConfig& cfg) {
  std::vector<TaskInstance> tasks;
  tasks.reserve(cfg.templates.size());
  for (std::size_t i = 0; i < cfg.templates.size(); ++i) {
    std::uint64_t st = cfg.master_seed ^ fnv1a64("task-template-" + std::to_string(i));
    tasks.push_back(generate_task(cfg.templates[i], splitmix64(st)));
  }
  normalize_demand_components(tasks);
  return tasks;
}

// ---------------------------------------------------------------------------
// Suite execution (schedule-independent merge)
// ---------------------------------------------------------------------------

struct SuiteResult {
  std::vector<TaskInstance> tasks;
  std::unordered_map<std::string, std::size_t> task_index;
  std::vector<RunRecord> runs;
  NormalizationContext norm;
};

namespace detail {

inline void sort_runs(std::vector<RunRecord>& runs) {
  std::sort(runs.begin(), runs.end(), [](const RunRecord& a, const RunRecord& b) {
    return std::tie(a.task_id, a.harness_id, a.model_id, a.budget_level, a.seed) <
           std::tie(b.task_id, b.harness_id, b.model_id, b.budget_level, b.seed);
  });
}

}  // namespace detail

/// Executes every (task, harness, model, budget, replicate) cell. Pure per-run
/// simulation plus a deterministic sorted merge makes the output independent
/// of the worker schedule.
inline SuiteResult run_suite(const SuiteConfig& cfg,
                             const std::function<HarnessConfig(const std::string&)>& table =
                                 [](const std::string& id) { return harness_config(id); }) {
  SuiteResult out;
  out.tasks = generate_suite_tasks(cfg);
  for (std::size_t i = 0; i < out.tasks.size(); ++i) out.task_index[out.tasks[i].task_id] = i;

  std::vector<SimRequest> requests;
  for (const auto& task : out.tasks) {
    for (const auto& hid : cfg.harnesses) {
      HarnessConfig h = table(hid);
      for (const auto& model : cfg.models) {
        for (const auto& level : cfg.budget_levels) {
          for (int rep = 0; rep < cfg.replicates; ++rep) {
            SimRequest req;
            req.task = &task;
            req.harness = h;
            req.model = model;
            req.budget_level = level;
            req.caps = cfg.caps;
            req.replicate = static_cast<std::uint64_t>(rep);
            req.seed = mix_run_seed(cfg.master_seed, task.task_id, hid, model.model_id,
                                    level.label, req.replicate);
            requests.push_back(req);
          }
        }
      }
    }
  }

  out.runs.resize(requests.size());
  const int jobs = std::max(1, cfg.jobs);
  if (jobs == 1) {
    for (std::size_t i = 0; i < requests.size(); ++i) out.runs[i] = simulate_run(requests[i]);
  } else {
    std::vector<std::thread> workers;
    std::size_t chunk = (requests.size() + jobs - 1) / static_cast<std::size_t>(jobs);
    for (int w = 0; w < jobs; ++w) {
      std::size_t lo = static_cast<std::size_t>(w) * chunk;
      std::size_t hi = std::min(requests.size(), lo + chunk);
      if (lo >= hi) break;
      workers.emplace_back([&requests, &out, lo, hi] {
        for (std::size_t i = lo; i < hi; ++i) out.runs[i] = simulate_run(requests[i]);
      });
    }
    for (auto& w : workers) w.join();
  }
  detail::sort_runs(out.runs);
  out.norm = layer_normalization(out.runs);
  fill_raw_costs(out.runs, out.norm);
  return out;
}

// ---------------------------------------------------------------------------
// Oracle scoring and calibration pairs
// ---------------------------------------------------------------------------

inline double oracle_run_efc(const RunRecord& run, const TaskInstance& task,
                             const EfcConfig& cfg = {}) {
  double total = 0;
  for (const auto& e : run.events) {
    if (!e.oracle_context) continue;
    total += event_efc(oracle_factors(*e.oracle_context, task.params.oracle_visibility), cfg);
  }
  return total;
}

/// Normalized tool-selection entropy over tool events up to index t (1-based).
inline double exploration_entropy(const RunRecord& run, std::int64_t t, std::int64_t n_tools) {
  std::map<std::string, int> hist;
  int total = 0;
  for (const auto& e : run.events) {
    if (e.event_index > t) break;
    if (e.event_type == EventType::tool_call) {
      hist[e.tool_name] += 1;
      total += 1;
    }
  }
  if (total <= 1 || n_tools < 2) return 0;
  double ent = 0;
  for (const auto& [_, c] : hist) {
    double p = static_cast<double>(c) / total;
    ent -= p * std::log2(p);
  }
  return clamp01(ent / std::log2(static_cast<double>(n_tools)));
}

/// (features, semi-real target) pairs over the runs accepted by `keep`.
inline std::vector<std::pair<FeatureVector, double>> build_calibration_pairs(
    const std::vector<RunRecord>& runs, const std::vector<TaskInstance>& tasks,
    const std::unordered_map<std::string, std::size_t>& task_index, double kappa,
    const std::function<bool(const RunRecord&)>& keep = [](const RunRecord&) { return true; }) {
  std::vector<std::pair<FeatureVector, double>> pairs;
  EfcConfig ecfg{kappa};
  for (const auto& run : runs) {
    if (!keep(run)) continue;
    auto it = task_index.find(run.task_id);
    if (it == task_index.end()) continue;
    const TaskInstance& task = tasks[it->second];
    HarnessConfig h = harness_config(run.harness_id);
    for (const auto& e : run.events) {
      if (!e.features || !e.oracle_context) continue;
      SemiRealContext ctx;
      ctx.b_router = h.b_route;
      ctx.b_verify = h.b_verify;
      ctx.h_tool = task.demand.tool_entropy;
      ctx.e_explore = exploration_entropy(run, e.event_index,
                                          static_cast<std::int64_t>(task.params.n_tools));
      ctx.v_oracle = task.params.oracle_visibility;
      ctx.novelty = e.oracle_context->novelty;
      double y = calibration_target(semireal_factors(*e.features, ctx), ecfg);
      pairs.emplace_back(*e.features, y);
    }
  }
  return pairs;
}

// ---------------------------------------------------------------------------
// Factor scans (single-factor overrides)
// ---------------------------------------------------------------------------

inline void apply_factor(HarnessConfig& h, const std::string& factor, double value) {
  if (factor == "B_route") {
    h.b_route = value;
  } else if (factor == "B_verify") {
    h.b_verify = value;
  } else if (factor == "B_mem") {
    h.b_mem = value;
  } else if (factor == "noise_level") {
    h.noise_level = value;
  } else if (factor == "tool_entropy_penalty") {
    h.tool_entropy_penalty = value;
  } else if (factor == "state_pressure") {
    h.state_pressure = value;
  } else {
    fail("unknown-factor", "no harness factor named " + factor);
  }
}

struct ScanLevelResult {
  double level = 0;
  double mean_eta = 0;
  double success_rate = 0;
  std::size_t n_runs = 0;
};

struct FactorScanResult {
  std::string factor;
  std::vector<ScanLevelResult> levels;
};

/// Simulates the suite once per level with only `factor` overridden, and
/// reports per-level mean efficiency (oracle EFC per unit raw cost) plus
/// success aggregates. Raw cost is normalized over the pooled scan runs.
inline FactorScanResult factor_scan(const HarnessConfig& base, const std::string& factor,
                                    const std::vector<double>& levels, const SuiteConfig& suite) {
  {
    HarnessConfig probe = base;
    apply_factor(probe, factor, 0.0);  // validates the factor name
  }
  if (levels.size() < 2) fail("invalid-config", "factor scan needs at least 2 levels");

  std::vector<TaskInstance> tasks = generate_suite_tasks(suite);
  std::unordered_map<std::string, std::size_t> task_index;
  for (std::size_t i = 0; i < tasks.size(); ++i) task_index[tasks[i].task_id] = i;

  struct LevelRuns {
    std::vector<RunRecord> runs;
  };
  std::vector<LevelRuns> per_level(levels.size());
  std::vector<RunRecord> pooled;
  for (std::size_t li = 0; li < levels.size(); ++li) {
    HarnessConfig h = base;
    apply_factor(h, factor, levels[li]);
    for (const auto& task : tasks) {
      for (const auto& model : suite.models) {
        for (const auto& level : suite.budget_levels) {
          for (int rep = 0; rep < suite.replicates; ++rep) {
            SimRequest req;
            req.task = &task;
            req.harness = h;
            req.model = model;
            req.budget_level = level;
            req.caps = suite.caps;
            req.replicate = static_cast<std::uint64_t>(rep);
            req.seed = mix_run_seed(suite.master_seed ^ fnv1a64("scan-" + factor),
                                    task.task_id, h.harness_id + "@" + fmt_num(levels[li]),
                                    model.model_id, level.label, req.replicate);
            per_level[li].runs.push_back(simulate_run(req));
          }
        }
      }
    }
    for (const auto& r : per_level[li].runs) pooled.push_back(r);
  }
  NormalizationContext norm = layer_normalization(pooled);

  FactorScanResult out;
  out.factor = factor;
  EfcConfig ecfg{suite.kappa};
  for (std::size_t li = 0; li < levels.size(); ++li) {
    ScanLevelResult lr;
    lr.level = levels[li];
    double eta_sum = 0, succ_sum = 0;
    for (auto& run : per_level[li].runs) {
      run.budget.raw_cost = compose_raw_cost(run.budget, norm);
      const TaskInstance& task = tasks[task_index.at(run.task_id)];
      double efc = oracle_run_efc(run, task, ecfg);
      eta_sum += efc / run.budget.raw_cost;
      succ_sum += run.success;
    }
    lr.n_runs = per_level[li].runs.size();
    lr.mean_eta = lr.n_runs ? eta_sum / static_cast<double>(lr.n_runs) : 0;
    lr.success_rate = lr.n_runs ? succ_sum / static_cast<double>(lr.n_runs) : 0;
    out.levels.push_back(lr);
  }
  return out;
}

}  // namespace efclab
