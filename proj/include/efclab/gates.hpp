#pragma once

#include <cstdint>
#include <vector>

#include "efclab/common.hpp"
#include "efclab/core.hpp"
#include "efclab/estimator.hpp"

namespace efclab {

// ---------------------------------------------------------------------------
// Status-aware gates for real traces
// ---------------------------------------------------------------------------

/// Status-quality factor Q.
inline double status_quality(StatusKind s) {
  switch (s) {
    case StatusKind::passed: return 1.00;
    case StatusKind::assertion_error: return 0.42;
    case StatusKind::runtime_error: return 0.12;
    case StatusKind::timeout: return 0.06;
    case StatusKind::static_reject: return 0.04;
    case StatusKind::api_error: return 0.00;
    case StatusKind::other: return 0.25;
    case StatusKind::none: break;
  }
  fail("no-status", "status 'none' has no quality factor");
}

struct GateContext {
  StatusKind prev_status = StatusKind::none;  // none = no prior scored attempt
  StatusKind cur_status = StatusKind::none;
  std::int64_t attempt_index = 0;
  EventType event_type = EventType::checker;
};

/// Progress gate G; rows matched top-down, first match wins. The nonredundant
/// variant swaps 0.62 -> 0.16 and 0.45 -> 0.10.
inline double progress_gate(const GateContext& ctx, bool nonredundant = false) {
  if (ctx.cur_status == StatusKind::none) return 1.00;  // no checker signal
  if (ctx.attempt_index == 0) return 1.00;
  if (ctx.cur_status == StatusKind::passed && ctx.prev_status != StatusKind::passed) return 1.35;
  if (ctx.prev_status == StatusKind::none) return 1.00;  // nothing to compare against
  int cur = severity(ctx.cur_status), prev = severity(ctx.prev_status);
  if (cur > prev) return 1.15;
  if (cur == prev && ctx.cur_status != StatusKind::passed) return nonredundant ? 0.16 : 0.62;
  if (cur < prev) return nonredundant ? 0.10 : 0.45;
  return 1.00;
}

/// Loop gate Lambda. The nonredundant variant discounts repair to 0.45.
inline double loop_gate(EventType event_type, StatusKind status, bool nonredundant = false) {
  switch (event_type) {
    case EventType::repair:
      return nonredundant ? 0.45 : 0.95;
    case EventType::generation:
      return status == StatusKind::passed ? 0.92 : 0.85;
    default:
      return 1.00;
  }
}

/// Stable-EFC event score: base * Q * G * Lambda.
inline double stable_event_efc(double base, double q, double g, double lambda) {
  return base * q * g * lambda;
}

/// NRS-EFC event score: base * Q * G_nr * Lambda_nr / (1 + 0.35 A).
inline double nrs_event_efc(double base, double q, double g_nr, double lambda_nr,
                            std::int64_t attempt_index) {
  if (attempt_index < 0) fail("factor-domain", "attempt index must be >= 0");
  return base * q * g_nr * lambda_nr / (1.0 + 0.35 * static_cast<double>(attempt_index));
}

// ---------------------------------------------------------------------------
// Per-run status-aware scoring
// ---------------------------------------------------------------------------

struct EventScore {
  std::int64_t event_index = 0;
  double base = 0;  // Estimated-EFC before gating
  double q = 1, g = 1, lambda = 1;
  double g_nr = 1, lambda_nr = 1;
  double stable = 0;
  double nrs = 0;
};

struct RunScores {
  double estimated = 0;
  double stable = 0;
  double nrs = 0;
  std::vector<EventScore> events;
};

/// Applies the gate chain over a run. Events with status none carry no checker
/// evidence: Q, G and Lambda all pass through as 1. prev_status tracks the
/// last non-none status seen earlier in the trace.
inline RunScores score_run(const EstimatorParams& params, const RunRecord& run) {
  RunScores out;
  out.events.reserve(run.events.size());
  StatusKind prev = StatusKind::none;
  for (std::size_t i = 0; i < run.events.size(); ++i) {
    const TraceEvent& e = run.events[i];
    FeatureVector f =
        e.features ? *e.features : extract_features(run, static_cast<std::int64_t>(i + 1));
    EventScore s;
    s.event_index = e.event_index;
    s.base = estimate_event_efc(params, f);
    if (e.status != StatusKind::none) {
      GateContext ctx{prev, e.status, e.attempt_index, e.event_type};
      s.q = status_quality(e.status);
      s.g = progress_gate(ctx, false);
      s.g_nr = progress_gate(ctx, true);
      s.lambda = loop_gate(e.event_type, e.status, false);
      s.lambda_nr = loop_gate(e.event_type, e.status, true);
      prev = e.status;
    }
    s.stable = stable_event_efc(s.base, s.q, s.g, s.lambda);
    s.nrs = nrs_event_efc(s.base, s.q, s.g_nr, s.lambda_nr, e.attempt_index);
    out.estimated += s.base;
    out.stable += s.stable;
    out.nrs += s.nrs;
    out.events.push_back(s);
  }
  return out;
}

}  // namespace efclab
