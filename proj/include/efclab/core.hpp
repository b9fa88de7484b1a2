#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "efclab/common.hpp"

namespace efclab {

// ---------------------------------------------------------------------------
// Statuses and event types
// ---------------------------------------------------------------------------

enum class StatusKind {
  passed,
  assertion_error,
  runtime_error,
  timeout,
  static_reject,
  api_error,
  other,
  none,  // no checker fired; never enters severity comparisons
};

enum class EventType {
  model_action,
  tool_call,
  checker,
  repair,
  generation,
  memory_update,
};

inline const char* to_string(StatusKind s) {
  switch (s) {
    case StatusKind::passed: return "passed";
    case StatusKind::assertion_error: return "assertion_error";
    case StatusKind::runtime_error: return "runtime_error";
    case StatusKind::timeout: return "timeout";
    case StatusKind::static_reject: return "static_reject";
    case StatusKind::api_error: return "api_error";
    case StatusKind::other: return "other";
    case StatusKind::none: return "none";
  }
  return "none";
}

inline const char* to_string(EventType t) {
  switch (t) {
    case EventType::model_action: return "model_action";
    case EventType::tool_call: return "tool_call";
    case EventType::checker: return "checker";
    case EventType::repair: return "repair";
    case EventType::generation: return "generation";
    case EventType::memory_update: return "memory_update";
  }
  return "model_action";
}

inline std::optional<StatusKind> status_from_string(std::string_view s) {
  for (StatusKind k : {StatusKind::passed, StatusKind::assertion_error, StatusKind::runtime_error,
                       StatusKind::timeout, StatusKind::static_reject, StatusKind::api_error,
                       StatusKind::other, StatusKind::none}) {
    if (s == to_string(k)) return k;
  }
  return std::nullopt;
}

inline std::optional<EventType> event_type_from_string(std::string_view s) {
  for (EventType t : {EventType::model_action, EventType::tool_call, EventType::checker,
                      EventType::repair, EventType::generation, EventType::memory_update}) {
    if (s == to_string(t)) return t;
  }
  return std::nullopt;
}

/// Fixed severity order: api_error lowest, passed highest.
inline int severity(StatusKind s) {
  switch (s) {
    case StatusKind::api_error: return 0;
    case StatusKind::static_reject: return 1;
    case StatusKind::timeout: return 2;
    case StatusKind::runtime_error: return 3;
    case StatusKind::other: return 4;
    case StatusKind::assertion_error: return 5;
    case StatusKind::passed: return 6;
    case StatusKind::none: break;
  }
  fail("no-severity", "status 'none' has no severity");
}

// ---------------------------------------------------------------------------
// Trace-observable features (phi): [c, h, z, p, m, a, q, delta, rho]
// ---------------------------------------------------------------------------

struct FeatureVector {
  double c = 0;      // checker fired this segment {0,1}
  double h = 0;      // checker scope [0,1]
  double z = 0;      // tool result later referenced {0,1}
  double p = 0;      // plan changed {0,1}
  double m = 0;      // memory retention [0,1]
  double a = 0;      // repeated-error avoidance {0,1}
  double q = 0;      // observation consistency [0,1]
  double delta = 0;  // subgoal progress [0,1]
  double rho = 0;    // trace position event_index / T

  std::array<double, 9> as_array() const { return {c, h, z, p, m, a, q, delta, rho}; }

  bool operator==(const FeatureVector&) const = default;
};

inline constexpr std::array<const char*, 9> kFeatureNames = {"c", "h", "z", "p", "m",
                                                             "a", "q", "delta", "rho"};

// ---------------------------------------------------------------------------
// Budget accounting and raw-cost normalization
// ---------------------------------------------------------------------------

struct BudgetAccounting {
  std::int64_t raw_tokens = 0;
  std::int64_t tool_calls = 0;
  double wall_time = 0.0;  // simulated seconds
  std::int64_t operations = 0;
  double raw_cost = 0.0;  // derived; see compose_raw_cost

  bool operator==(const BudgetAccounting&) const = default;
};

/// Per-layer medians used to normalize raw cost. All must be > 0.
struct NormalizationContext {
  double median_tokens = 0;
  double median_tool_calls = 0;
  double median_operations = 0;
  double median_wall_time = 0;
};

/// raw_cost = 0.4 tok/med + 0.2 tc/med + 0.2 op/med + 0.2 wall/med.
inline double compose_raw_cost(const BudgetAccounting& b, const NormalizationContext& ctx) {
  if (ctx.median_tokens <= 0 || ctx.median_tool_calls <= 0 || ctx.median_operations <= 0 ||
      ctx.median_wall_time <= 0) {
    fail("degenerate-normalization", "all per-layer medians must be strictly positive");
  }
  if (b.raw_tokens < 0 || b.tool_calls < 0 || b.operations < 0 || b.wall_time < 0) {
    fail("degenerate-normalization", "budget counts must be nonnegative");
  }
  return 0.4 * static_cast<double>(b.raw_tokens) / ctx.median_tokens +
         0.2 * static_cast<double>(b.tool_calls) / ctx.median_tool_calls +
         0.2 * static_cast<double>(b.operations) / ctx.median_operations +
         0.2 * b.wall_time / ctx.median_wall_time;
}

// ---------------------------------------------------------------------------
// Oracle event context (synthetic layer only)
// ---------------------------------------------------------------------------

enum class TaskFamily { needle_lookup, state_tracking, rule_filter };

inline const char* to_string(TaskFamily f) {
  switch (f) {
    case TaskFamily::needle_lookup: return "needle_lookup";
    case TaskFamily::state_tracking: return "state_tracking";
    case TaskFamily::rule_filter: return "rule_filter";
  }
  return "needle_lookup";
}

inline std::optional<TaskFamily> family_from_string(std::string_view s) {
  for (TaskFamily f :
       {TaskFamily::needle_lookup, TaskFamily::state_tracking, TaskFamily::rule_filter}) {
    if (s == to_string(f)) return f;
  }
  return std::nullopt;
}

/// Ground-truth progress snapshots plus the harness quality terms needed by
/// the oracle factor formulas. Family tag selects which snapshot block is live.
struct OracleEventContext {
  TaskFamily family = TaskFamily::needle_lookup;

  // needle_lookup: remaining candidate set sizes and recovery bit
  std::int64_t candidates_before = 0;
  std::int64_t candidates_after = 0;
  int recovered = 0;

  // state_tracking: committed-correct counts, fix bit, rollback flag
  std::int64_t committed_before = 0;
  std::int64_t committed_after = 0;
  int fix = 0;
  int rollback = 0;
  std::int64_t min_steps = 0;  // L

  // rule_filter: eliminated/confirmed deltas and item count
  std::int64_t eliminated_delta = 0;
  std::int64_t confirmed_delta = 0;
  std::int64_t n_items = 0;

  // harness quality terms, each in [0,1]
  double b_route = 0;
  double b_verify = 0;
  double b_mem = 0;
  double b_noise = 0;
  double b_tool = 0;
  double b_state = 0;

  double novelty = 0;  // n_t in [0,1]

  bool operator==(const OracleEventContext&) const = default;
};

// ---------------------------------------------------------------------------
// Events and runs
// ---------------------------------------------------------------------------

struct TraceEvent {
  std::int64_t event_index = 0;  // strictly increasing, dense from 1
  EventType event_type = EventType::model_action;
  StatusKind status = StatusKind::none;
  std::int64_t attempt_index = 0;  // repair/generation events seen before this one
  std::string tool_name;           // empty = absent

  // Observable side channels logged with the event (schema extensions;
  // preserved on round-trip, consumed by extract_features).
  std::string args;                     // tool arguments / target label
  std::uint64_t obs_id = 0;             // observation content hash, 0 = absent
  std::vector<std::int64_t> refs;       // earlier event indices this one references
  double coverage = 0;                  // checker scope when event_type == checker
  int retained = -1;                    // memory_update retention flag, -1 = absent
  double consistency = -1;              // observation consistency, -1 = absent
  double reported_progress = -1;        // progress the observation claims, -1 = absent

  std::optional<FeatureVector> features;
  std::optional<OracleEventContext> oracle_context;

  // Unknown JSON keys preserved for round-trip.
  std::map<std::string, std::string> extra;

  bool operator==(const TraceEvent&) const = default;
};

struct RunRecord {
  std::string run_id;
  std::string task_id;
  std::string family;
  std::string harness_id;  // H0..H6
  std::string model_id;
  std::string budget_level;
  std::uint64_t seed = 0;
  int success = 0;  // {0,1}
  BudgetAccounting budget;
  std::vector<TraceEvent> events;

  std::map<std::string, std::string> extra;

  bool operator==(const RunRecord&) const = default;
};

}  // namespace efclab
