#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "efclab/common.hpp"
#include "efclab/core.hpp"

namespace efclab {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Canonical JSONL trace format
//
// First line per run: header object with run + budget fields. Subsequent
// lines: event objects. Unknown keys are preserved on round-trip.
// ---------------------------------------------------------------------------

namespace detail {

inline const char* const kHeaderKeys[] = {"run_id",     "task_id",      "family",
                                          "harness_id", "model_id",     "budget_level",
                                          "seed",       "success",      "raw_tokens",
                                          "tool_calls", "wall_time",    "operations",
                                          "raw_cost"};

inline const char* const kEventKeys[] = {"run_id",   "event_index", "event_type",
                                         "status",   "attempt_index", "tool_name",
                                         "features", "args",        "obs_id",
                                         "refs",     "coverage",    "retained",
                                         "consistency", "reported_progress", "oracle"};

inline bool is_known(const char* const* keys, std::size_t n, const std::string& k) {
  for (std::size_t i = 0; i < n; ++i) {
    if (k == keys[i]) return true;
  }
  return false;
}

inline json oracle_to_json(const OracleEventContext& o) {
  json j;
  j["family"] = to_string(o.family);
  j["candidates_before"] = o.candidates_before;
  j["candidates_after"] = o.candidates_after;
  j["recovered"] = o.recovered;
  j["committed_before"] = o.committed_before;
  j["committed_after"] = o.committed_after;
  j["fix"] = o.fix;
  j["rollback"] = o.rollback;
  j["min_steps"] = o.min_steps;
  j["eliminated_delta"] = o.eliminated_delta;
  j["confirmed_delta"] = o.confirmed_delta;
  j["n_items"] = o.n_items;
  j["b_route"] = o.b_route;
  j["b_verify"] = o.b_verify;
  j["b_mem"] = o.b_mem;
  j["b_noise"] = o.b_noise;
  j["b_tool"] = o.b_tool;
  j["b_state"] = o.b_state;
  j["novelty"] = o.novelty;
  return j;
}

inline OracleEventContext oracle_from_json(const json& j) {
  OracleEventContext o;
  if (auto f = family_from_string(j.value("family", "needle_lookup"))) o.family = *f;
  o.candidates_before = j.value("candidates_before", std::int64_t{0});
  o.candidates_after = j.value("candidates_after", std::int64_t{0});
  o.recovered = j.value("recovered", 0);
  o.committed_before = j.value("committed_before", std::int64_t{0});
  o.committed_after = j.value("committed_after", std::int64_t{0});
  o.fix = j.value("fix", 0);
  o.rollback = j.value("rollback", 0);
  o.min_steps = j.value("min_steps", std::int64_t{0});
  o.eliminated_delta = j.value("eliminated_delta", std::int64_t{0});
  o.confirmed_delta = j.value("confirmed_delta", std::int64_t{0});
  o.n_items = j.value("n_items", std::int64_t{0});
  o.b_route = j.value("b_route", 0.0);
  o.b_verify = j.value("b_verify", 0.0);
  o.b_mem = j.value("b_mem", 0.0);
  o.b_noise = j.value("b_noise", 0.0);
  o.b_tool = j.value("b_tool", 0.0);
  o.b_state = j.value("b_state", 0.0);
  o.novelty = j.value("novelty", 0.0);
  return o;
}

}  // namespace detail

inline json event_to_json(const RunRecord& run, const TraceEvent& e) {
  json j;
  j["run_id"] = run.run_id;
  j["event_index"] = e.event_index;
  j["event_type"] = to_string(e.event_type);
  j["status"] = to_string(e.status);
  j["attempt_index"] = e.attempt_index;
  if (!e.tool_name.empty()) j["tool_name"] = e.tool_name;
  if (!e.args.empty()) j["args"] = e.args;
  if (e.obs_id != 0) j["obs_id"] = e.obs_id;
  if (!e.refs.empty()) j["refs"] = e.refs;
  if (e.coverage != 0) j["coverage"] = e.coverage;
  if (e.retained >= 0) j["retained"] = e.retained;
  if (e.consistency >= 0) j["consistency"] = e.consistency;
  if (e.reported_progress >= 0) j["reported_progress"] = e.reported_progress;
  if (e.features) {
    json f;
    auto arr = e.features->as_array();
    for (int i = 0; i < 9; ++i) f[kFeatureNames[static_cast<std::size_t>(i)]] = arr[i];
    j["features"] = f;
  }
  if (e.oracle_context) j["oracle"] = detail::oracle_to_json(*e.oracle_context);
  for (const auto& [k, v] : e.extra) j[k] = json::parse(v);
  return j;
}

inline json header_to_json(const RunRecord& r) {
  json j;
  j["run_id"] = r.run_id;
  j["task_id"] = r.task_id;
  j["family"] = r.family;
  j["harness_id"] = r.harness_id;
  j["model_id"] = r.model_id;
  j["budget_level"] = r.budget_level;
  j["seed"] = r.seed;
  j["success"] = r.success;
  j["raw_tokens"] = r.budget.raw_tokens;
  j["tool_calls"] = r.budget.tool_calls;
  j["wall_time"] = r.budget.wall_time;
  j["operations"] = r.budget.operations;
  if (r.budget.raw_cost != 0) j["raw_cost"] = r.budget.raw_cost;
  for (const auto& [k, v] : r.extra) j[k] = json::parse(v);
  return j;
}

inline void emit_run(std::ostream& os, const RunRecord& r) {
  os << header_to_json(r).dump() << "\n";
  for (const auto& e : r.events) os << event_to_json(r, e).dump() << "\n";
}

inline std::string emit_runs(const std::vector<RunRecord>& runs) {
  std::ostringstream os;
  for (const auto& r : runs) emit_run(os, r);
  return os.str();
}

// ---------------------------------------------------------------------------
// Ingestion
// ---------------------------------------------------------------------------

struct IngestDiagnostic {
  std::size_t line = 0;
  std::string code;  // parse-error | malformed-header | malformed-event |
                     // orphan-event | duplicate-run
  std::string message;
};

struct IngestResult {
  std::vector<RunRecord> runs;
  std::vector<IngestDiagnostic> diagnostics;
};

/// Streaming line-by-line ingest. Malformed lines are reported with line
/// number and reason, never silently dropped.
inline IngestResult ingest_traces(std::istream& in) {
  IngestResult out;
  std::unordered_map<std::string, std::size_t> by_run_id;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const std::exception& ex) {
      out.diagnostics.push_back({line_no, "parse-error", ex.what()});
      continue;
    }
    if (!j.is_object()) {
      out.diagnostics.push_back({line_no, "parse-error", "line is not a JSON object"});
      continue;
    }
    const bool is_event = j.contains("event_index");
    try {
      if (!is_event) {
        RunRecord r;
        r.run_id = j.at("run_id").get<std::string>();
        r.task_id = j.at("task_id").get<std::string>();
        r.family = j.at("family").get<std::string>();
        r.harness_id = j.at("harness_id").get<std::string>();
        r.model_id = j.at("model_id").get<std::string>();
        r.budget_level = j.at("budget_level").get<std::string>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.success = j.at("success").get<int>();
        r.budget.raw_tokens = j.at("raw_tokens").get<std::int64_t>();
        r.budget.tool_calls = j.at("tool_calls").get<std::int64_t>();
        r.budget.wall_time = j.at("wall_time").get<double>();
        r.budget.operations = j.at("operations").get<std::int64_t>();
        r.budget.raw_cost = j.value("raw_cost", 0.0);
        for (auto it = j.begin(); it != j.end(); ++it) {
          if (!detail::is_known(detail::kHeaderKeys, std::size(detail::kHeaderKeys), it.key())) {
            r.extra[it.key()] = it.value().dump();
          }
        }
        if (by_run_id.count(r.run_id)) {
          out.diagnostics.push_back({line_no, "duplicate-run", "run_id " + r.run_id});
          continue;
        }
        by_run_id[r.run_id] = out.runs.size();
        out.runs.push_back(std::move(r));
      } else {
        std::string run_id = j.at("run_id").get<std::string>();
        auto it = by_run_id.find(run_id);
        if (it == by_run_id.end()) {
          out.diagnostics.push_back({line_no, "orphan-event", "no header for run_id " + run_id});
          continue;
        }
        TraceEvent e;
        e.event_index = j.at("event_index").get<std::int64_t>();
        auto type = event_type_from_string(j.at("event_type").get<std::string>());
        auto status = status_from_string(j.at("status").get<std::string>());
        if (!type || !status) {
          out.diagnostics.push_back({line_no, "malformed-event", "unknown event_type or status"});
          continue;
        }
        e.event_type = *type;
        e.status = *status;
        e.attempt_index = j.at("attempt_index").get<std::int64_t>();
        e.tool_name = j.value("tool_name", std::string());
        e.args = j.value("args", std::string());
        e.obs_id = j.value("obs_id", std::uint64_t{0});
        if (j.contains("refs")) e.refs = j.at("refs").get<std::vector<std::int64_t>>();
        e.coverage = j.value("coverage", 0.0);
        e.retained = j.value("retained", -1);
        e.consistency = j.value("consistency", -1.0);
        e.reported_progress = j.value("reported_progress", -1.0);
        if (j.contains("features")) {
          const json& f = j.at("features");
          FeatureVector fv;
          fv.c = f.value("c", 0.0);
          fv.h = f.value("h", 0.0);
          fv.z = f.value("z", 0.0);
          fv.p = f.value("p", 0.0);
          fv.m = f.value("m", 0.0);
          fv.a = f.value("a", 0.0);
          fv.q = f.value("q", 0.0);
          fv.delta = f.value("delta", 0.0);
          fv.rho = f.value("rho", 0.0);
          e.features = fv;
        }
        if (j.contains("oracle")) e.oracle_context = detail::oracle_from_json(j.at("oracle"));
        for (auto jt = j.begin(); jt != j.end(); ++jt) {
          if (!detail::is_known(detail::kEventKeys, std::size(detail::kEventKeys), jt.key())) {
            e.extra[jt.key()] = jt.value().dump();
          }
        }
        out.runs[it->second].events.push_back(std::move(e));
      }
    } catch (const std::exception& ex) {
      out.diagnostics.push_back(
          {line_no, is_event ? "malformed-event" : "malformed-header", ex.what()});
    }
  }
  return out;
}

inline IngestResult ingest_traces(const std::string& text) {
  std::istringstream in(text);
  return ingest_traces(in);
}

// ---------------------------------------------------------------------------
// Layer medians and raw-cost fill
// ---------------------------------------------------------------------------

inline NormalizationContext layer_normalization(const std::vector<RunRecord>& runs) {
  if (runs.empty()) fail("degenerate-normalization", "no runs in layer");
  auto median = [&](auto getter) {
    std::vector<double> v;
    v.reserve(runs.size());
    for (const auto& r : runs) v.push_back(getter(r));
    std::sort(v.begin(), v.end());
    std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  };
  NormalizationContext ctx;
  ctx.median_tokens = median([](const RunRecord& r) { return double(r.budget.raw_tokens); });
  ctx.median_tool_calls = median([](const RunRecord& r) { return double(r.budget.tool_calls); });
  ctx.median_operations = median([](const RunRecord& r) { return double(r.budget.operations); });
  ctx.median_wall_time = median([](const RunRecord& r) { return r.budget.wall_time; });
  return ctx;
}

inline void fill_raw_costs(std::vector<RunRecord>& runs, const NormalizationContext& ctx) {
  for (auto& r : runs) r.budget.raw_cost = compose_raw_cost(r.budget, ctx);
}

}  // namespace efclab
