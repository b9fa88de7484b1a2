#pragma once

#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "efclab/common.hpp"
#include "efclab/core.hpp"
#include "efclab/tasks.hpp"

namespace efclab {

/// clip(x) = min(1, max(0, x)).
inline double clip(double x) {
  if (!std::isfinite(x)) fail("non-finite", "clip input must be finite");
  return clamp01(x);
}

/// Bounded event factors: informativeness, validity, non-redundant relevance,
/// memory update.
struct FactorVector {
  double i = 0;
  double v = 0;
  double r = 0;
  double m = 0;

  double product() const { return i * v * r * m; }
  bool operator==(const FactorVector&) const = default;
};

struct EfcConfig {
  double kappa = 10.0;
};

namespace detail {
inline void require_unit(double x, const char* name) {
  if (!std::isfinite(x) || x < 0.0 || x > 1.0) {
    fail("factor-domain", std::string(name) + " must lie in [0,1]");
  }
}
}  // namespace detail

/// Oracle factors from ground-truth context:
///   I = clip(B_route B_noise Delta), V = clip(B_verify B_noise V_oracle),
///   R = clip(n B_route B_tool),      M = clip(B_mem B_state (0.82 + 0.18 V)).
inline FactorVector oracle_factors(const OracleEventContext& ctx, double v_oracle) {
  detail::require_unit(ctx.b_route, "B_route");
  detail::require_unit(ctx.b_verify, "B_verify");
  detail::require_unit(ctx.b_mem, "B_mem");
  detail::require_unit(ctx.b_noise, "B_noise");
  detail::require_unit(ctx.b_tool, "B_tool");
  detail::require_unit(ctx.b_state, "B_state");
  detail::require_unit(ctx.novelty, "novelty");
  detail::require_unit(v_oracle, "V_oracle");

  double delta = latent_progress(ctx);
  FactorVector f;
  f.i = clip(ctx.b_route * ctx.b_noise * delta);
  f.v = clip(ctx.b_verify * ctx.b_noise * v_oracle);
  f.r = clip(ctx.novelty * ctx.b_route * ctx.b_tool);
  f.m = clip(ctx.b_mem * ctx.b_state * (0.82 + 0.18 * f.v));
  return f;
}

/// kappa * I * V * R * M.
inline double event_efc(const FactorVector& f, const EfcConfig& cfg = {}) {
  return cfg.kappa * f.product();
}

/// Run-level EFC: plain sum of event scores.
inline double run_efc(std::span<const double> event_scores) {
  return std::accumulate(event_scores.begin(), event_scores.end(), 0.0);
}

inline double run_efc(const std::vector<double>& event_scores) {
  return run_efc(std::span<const double>(event_scores));
}

}  // namespace efclab
