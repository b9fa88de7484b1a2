#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "efclab/common.hpp"
#include "efclab/core.hpp"
#include "efclab/efc.hpp"

namespace efclab {

// ---------------------------------------------------------------------------
// Feature extraction
// ---------------------------------------------------------------------------

namespace detail {

inline bool is_attempt_event(EventType t) {
  return t == EventType::repair || t == EventType::generation;
}

// Round window of a tool_call: events after it up to the next tool_call (or
// the end of the run). Checker / memory / repair events inside the window
// belong to this closed-loop segment.
inline std::pair<std::size_t, std::size_t> round_window(const std::vector<TraceEvent>& ev,
                                                        std::size_t i) {
  std::size_t lo = i + 1, hi = ev.size();
  for (std::size_t j = i + 1; j < ev.size(); ++j) {
    if (ev[j].event_type == EventType::tool_call) {
      hi = j;
      break;
    }
  }
  return {lo, hi};
}

}  // namespace detail

/// Deterministic trace-only features for event t (1-based index). The run's
/// success label is never read.
inline FeatureVector extract_features(const RunRecord& run, std::int64_t t) {
  if (t < 1 || static_cast<std::size_t>(t) > run.events.size()) {
    fail("no-such-event", "event index out of range");
  }
  const auto& ev = run.events;
  const std::size_t i = static_cast<std::size_t>(t - 1);
  const TraceEvent& e = ev[i];

  FeatureVector f;
  f.rho = static_cast<double>(t) / static_cast<double>(std::max<std::size_t>(1, ev.size()));

  // z: some later event references this event's index.
  for (std::size_t j = i + 1; j < ev.size() && f.z == 0; ++j) {
    for (std::int64_t r : ev[j].refs) {
      if (r == e.event_index) {
        f.z = 1;
        break;
      }
    }
  }

  switch (e.event_type) {
    case EventType::checker:
      f.c = e.status == StatusKind::none ? 0 : 1;
      f.h = clamp01(e.coverage);
      f.q = e.consistency >= 0 ? clamp01(e.consistency) : 0.0;
      break;
    case EventType::memory_update:
      f.m = e.retained >= 2 ? 1.0 : (e.retained == 1 ? 0.6 : 0.1);
      break;
    case EventType::repair:
      f.p = 1;
      break;
    case EventType::tool_call: {
      auto [lo, hi] = detail::round_window(ev, i);
      for (std::size_t j = lo; j < hi; ++j) {
        if (ev[j].event_type == EventType::checker && ev[j].status != StatusKind::none) {
          f.c = 1;
          f.h = std::max(f.h, clamp01(ev[j].coverage));
        }
        if (ev[j].event_type == EventType::memory_update) {
          f.m = std::max(f.m, ev[j].retained >= 2 ? 1.0 : (ev[j].retained == 1 ? 0.6 : 0.1));
        }
        if (ev[j].event_type == EventType::repair) f.p = 1;
      }
      // plan change: tool differs from the previous tool call's tool
      for (std::size_t j = i; j-- > 0;) {
        if (ev[j].event_type == EventType::tool_call) {
          if (ev[j].tool_name != e.tool_name) f.p = 1;
          break;
        }
      }
      // repeated-error avoidance over failed (tool, args) pairs
      bool any_failed = false, repeats_failed = false;
      for (std::size_t j = 0; j < i; ++j) {
        if (ev[j].event_type != EventType::tool_call) continue;
        auto [flo, fhi] = detail::round_window(ev, j);
        bool failed = false;
        for (std::size_t k = flo; k < fhi; ++k) {
          if (ev[k].event_type == EventType::checker && ev[k].status != StatusKind::none &&
              ev[k].status != StatusKind::passed) {
            failed = true;
            break;
          }
        }
        if (!failed) continue;
        any_failed = true;
        if (ev[j].tool_name == e.tool_name && ev[j].args == e.args) repeats_failed = true;
      }
      f.a = (any_failed && !repeats_failed) ? 1 : 0;
      f.q = e.consistency >= 0 ? clamp01(e.consistency) : 0.5;
      // subgoal progress as evident from the trace: the tool's claimed progress
      // vetted by the observation's consistency score
      f.delta = e.reported_progress >= 0 ? clamp01(e.reported_progress * f.q) : 0.0;
      break;
    }
    case EventType::generation:
    case EventType::model_action:
      break;
  }
  return f;
}

// ---------------------------------------------------------------------------
// Semi-real factor estimates and calibration targets
// ---------------------------------------------------------------------------

struct SemiRealContext {
  double b_router = 0;   // harness routing quality [0,1]
  double b_verify = 0;   // verifier strength [0,1]
  double h_tool = 0;     // tool ambiguity >= 0
  double e_explore = 0;  // exploration entropy >= 0
  double v_oracle = 0;   // verifier-signal visibility [0,1]
  double novelty = 0;    // n_t [0,1]
};

inline FactorVector semireal_factors(const FeatureVector& f, const SemiRealContext& ctx) {
  detail::require_unit(ctx.b_router, "B_router");
  detail::require_unit(ctx.b_verify, "B_verify");
  detail::require_unit(ctx.v_oracle, "V_oracle");
  detail::require_unit(ctx.novelty, "novelty");
  if (!std::isfinite(ctx.h_tool) || ctx.h_tool < 0) fail("factor-domain", "H_tool must be >= 0");
  if (!std::isfinite(ctx.e_explore) || ctx.e_explore < 0) {
    fail("factor-domain", "E_explore must be >= 0");
  }
  for (double x : f.as_array()) detail::require_unit(x, "feature");

  FactorVector out;
  out.i = clip(f.delta * (0.70 + 0.30 * ctx.b_router) /
               (1.0 + 0.12 * ctx.h_tool + 0.20 * ctx.e_explore));
  out.v = clip(f.q * (0.70 + 0.30 * ctx.b_verify) * (0.72 + 0.28 * ctx.v_oracle));
  out.r = clip((0.28 + 0.72 * ctx.novelty) * (0.48 + 0.52 * f.a) / (1.0 + 0.12 * ctx.h_tool));
  out.m = clip(f.m * (0.80 + 0.20 * f.p));
  return out;
}

/// y_t = kappa * I^ * V^ * R^ * M^.
inline double calibration_target(const FactorVector& f, const EfcConfig& cfg = {}) {
  return cfg.kappa * f.product();
}

// ---------------------------------------------------------------------------
// Log-linear estimator
// ---------------------------------------------------------------------------

struct EstimatorParams {
  double theta0 = 0;
  std::array<double, 9> theta{};  // aligned to kFeatureNames order
  double training_rmse = 0;       // RMSE of log(1+y) residuals
  std::string calibration_fingerprint;

  bool operator==(const EstimatorParams&) const = default;
};

inline constexpr double kEstimateCap = 1e6;

/// Closed-form least squares of log(1+y) on [1, phi].
inline EstimatorParams fit_estimator(const std::vector<std::pair<FeatureVector, double>>& pairs) {
  if (pairs.size() < 50) fail("degenerate-calibration", "need >= 50 calibration pairs");
  const std::size_t n = pairs.size();
  Eigen::MatrixXd design(n, 10);
  Eigen::VectorXd target(n);
  for (std::size_t r = 0; r < n; ++r) {
    if (!(pairs[r].second >= 0) || !std::isfinite(pairs[r].second)) {
      fail("degenerate-calibration", "targets must be finite and >= 0");
    }
    design(r, 0) = 1.0;
    auto phi = pairs[r].first.as_array();
    for (int c = 0; c < 9; ++c) design(r, c + 1) = phi[c];
    target(r) = std::log1p(pairs[r].second);
  }

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  qr.setThreshold(1e-10);
  if (qr.rank() < 10) {
    const auto& perm = qr.colsPermutation().indices();
    std::string collinear;
    for (Eigen::Index k = qr.rank(); k < 10; ++k) {
      int col = perm(k);
      if (!collinear.empty()) collinear += ", ";
      collinear += col == 0 ? "intercept" : kFeatureNames[col - 1];
    }
    fail("degenerate-calibration", "design is rank-deficient; collinear columns: " + collinear);
  }
  Eigen::VectorXd beta = qr.solve(target);

  EstimatorParams params;
  params.theta0 = beta(0);
  for (int c = 0; c < 9; ++c) params.theta[static_cast<std::size_t>(c)] = beta(c + 1);
  double sse = (design * beta - target).squaredNorm();
  params.training_rmse = std::sqrt(sse / static_cast<double>(n));
  return params;
}

/// max(0, exp(theta0 + theta . phi) - 1), saturated at kEstimateCap.
inline double estimate_event_efc(const EstimatorParams& params, const FeatureVector& f,
                                 bool* overflowed = nullptr) {
  double s = params.theta0;
  auto phi = f.as_array();
  for (int c = 0; c < 9; ++c) s += params.theta[static_cast<std::size_t>(c)] * phi[c];
  if (s > std::log(kEstimateCap + 1.0)) {
    if (overflowed) *overflowed = true;
    return kEstimateCap;
  }
  return std::max(0.0, std::expm1(s));
}

/// Sum of event estimates over the run; missing feature blocks are extracted
/// from the trace. The success label plays no part.
inline double estimate_run_efc(const EstimatorParams& params, const RunRecord& run) {
  double total = 0;
  for (std::size_t i = 0; i < run.events.size(); ++i) {
    FeatureVector f = run.events[i].features
                          ? *run.events[i].features
                          : extract_features(run, static_cast<std::int64_t>(i + 1));
    total += estimate_event_efc(params, f);
  }
  return total;
}

}  // namespace efclab
