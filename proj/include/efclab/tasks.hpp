#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "efclab/common.hpp"
#include "efclab/core.hpp"

namespace efclab {

// ---------------------------------------------------------------------------
// Task demand
// ---------------------------------------------------------------------------

struct TaskDemandFactors {
  double min_steps = 1;        // L
  double tool_entropy = 1;     // H_tool
  double state_demand = 1;     // S_state
  double obs_noise = 0;        // N_obs
  double oracle_visibility = 0;  // V_oracle in [0, 0.95]

  bool operator==(const TaskDemandFactors&) const = default;
};

/// Exponents for the fitted demand form, each in [-1, 2]. All-ones equals the
/// hand-designed product.
struct DemandExponents {
  double w_steps = 1;
  double w_tool = 1;
  double w_state = 1;
  double w_noise = 1;
  double w_oracle = 1;

  std::array<double, 5> as_array() const { return {w_steps, w_tool, w_state, w_noise, w_oracle}; }
  bool operator==(const DemandExponents&) const = default;
};

/// The five multiplicative demand factors (L, H, S, 1+N, 1-V).
inline std::array<double, 5> demand_components(const TaskDemandFactors& d) {
  return {d.min_steps, d.tool_entropy, d.state_demand, 1.0 + d.obs_noise,
          1.0 - d.oracle_visibility};
}

/// Hand form L*H*S*(1+N)*(1-V); fitted form applies per-factor exponents.
inline double task_demand(const TaskDemandFactors& d, const DemandExponents* exponents = nullptr) {
  auto comps = demand_components(d);
  for (double c : comps) {
    if (!(c > 0) || !std::isfinite(c)) fail("nonpositive-demand", "demand factor must be > 0");
  }
  double out = 1.0;
  if (exponents == nullptr) {
    for (double c : comps) out *= c;
  } else {
    auto w = exponents->as_array();
    for (std::size_t i = 0; i < comps.size(); ++i) out *= std::pow(comps[i], w[i]);
  }
  if (!(out > 0) || !std::isfinite(out)) fail("nonpositive-demand", "demand product not positive");
  return out;
}

// ---------------------------------------------------------------------------
// Latent progress (Delta_latent), clipped to [0,1]
// ---------------------------------------------------------------------------

namespace detail {
inline double clip01_checked(double x) {
  if (!std::isfinite(x)) fail("non-finite", "clip input must be finite");
  return clamp01(x);
}
}  // namespace detail

/// Per-family ground-truth progress of one event.
inline double latent_progress(const OracleEventContext& ctx) {
  switch (ctx.family) {
    case TaskFamily::needle_lookup: {
      if (ctx.candidates_before < 0 || ctx.candidates_after < 0 ||
          ctx.candidates_after > ctx.candidates_before) {
        fail("context-mismatch", "needle snapshot requires 0 <= |C_t| <= |C_{t-1}|");
      }
      double shrink = static_cast<double>(ctx.candidates_before - ctx.candidates_after) /
                      static_cast<double>(std::max<std::int64_t>(1, ctx.candidates_before));
      return detail::clip01_checked(shrink + ctx.recovered);
    }
    case TaskFamily::state_tracking: {
      if (ctx.committed_before < 0 || ctx.committed_after < 0 ||
          (ctx.committed_after < ctx.committed_before && !ctx.rollback)) {
        fail("context-mismatch", "state snapshot requires d_t >= d_{t-1} unless rollback");
      }
      double delta = static_cast<double>(ctx.committed_after - ctx.committed_before) /
                     static_cast<double>(std::max<std::int64_t>(1, ctx.min_steps));
      return detail::clip01_checked(delta + ctx.fix);
    }
    case TaskFamily::rule_filter: {
      if (ctx.n_items < 0) fail("context-mismatch", "rule snapshot requires n_items >= 0");
      double delta = static_cast<double>(ctx.eliminated_delta + ctx.confirmed_delta) /
                     static_cast<double>(std::max<std::int64_t>(1, ctx.n_items));
      return detail::clip01_checked(delta);
    }
  }
  fail("context-mismatch", "unknown family");
}

// ---------------------------------------------------------------------------
// Task instances
// ---------------------------------------------------------------------------

struct TaskParams {
  TaskFamily family = TaskFamily::needle_lookup;
  std::int64_t size = 8;        // candidates / transition count / item count
  std::int64_t n_tools = 4;     // plausible tools, >= 2; exactly `n_correct` are correct
  std::int64_t n_correct = 1;
  double obs_noise = 0.2;       // N_obs
  double oracle_visibility = 0.5;  // V_oracle in [0, 0.95]
  bool htool_as_count = false;  // default: entropy in bits
};

/// One generated instance. The evaluator is a deterministic answer check
/// against the hidden latent state.
struct TaskInstance {
  std::string task_id;
  TaskFamily family = TaskFamily::needle_lookup;
  std::uint64_t seed = 0;
  TaskParams params;

  // latent structure
  std::int64_t target_index = 0;           // needle: which candidate is the target
  std::vector<std::int64_t> transitions;   // state_tracking: required transition symbols
  std::vector<int> rule_matches;           // rule_filter: per-item match bit
  std::uint64_t ground_truth = 0;          // canonical answer encoding

  std::vector<std::string> tools;        // candidate tool labels
  std::vector<std::int64_t> correct_tools;  // indices into `tools`

  TaskDemandFactors demand;             // raw factors from the instance structure
  TaskDemandFactors normalized_demand;  // filled by normalize_demand_components

  std::int64_t work_units() const {
    // rounds of latent progress on the ground-truth path
    switch (family) {
      case TaskFamily::needle_lookup: {
        std::int64_t n = params.size, r = 0;
        while (n > 1) {
          n = (n + 1) / 2;
          ++r;
        }
        return std::max<std::int64_t>(1, r);
      }
      case TaskFamily::state_tracking:
        return std::max<std::int64_t>(1, params.size);
      case TaskFamily::rule_filter:
        return std::max<std::int64_t>(1, params.size);
    }
    return 1;
  }

  bool evaluate(std::uint64_t answer) const { return answer == ground_truth; }
};

/// Deterministic in (family, params, seed). Demand factors derive from the
/// realized structure: L = minimal step count, H_tool = log2(#plausible tools)
/// (or the count with htool_as_count), S_state = latent variable count,
/// N_obs / V_oracle copied from params.
inline TaskInstance generate_task(const TaskParams& params, std::uint64_t seed) {
  if (params.size <= 0) fail("invalid-template", "size must be >= 1");
  if (params.n_tools < 2) fail("invalid-template", "need at least 2 plausible tools");
  if (params.n_correct < 1 || params.n_correct > params.n_tools) {
    fail("invalid-template", "n_correct must be in [1, n_tools]");
  }
  if (params.obs_noise < 0) fail("invalid-template", "obs_noise must be >= 0");
  if (params.oracle_visibility < 0 || params.oracle_visibility > 0.95) {
    fail("invalid-template", "oracle_visibility must be in [0, 0.95]");
  }

  TaskInstance inst;
  inst.family = params.family;
  inst.seed = seed;
  inst.params = params;

  Rng rng(seed ^ fnv1a64(to_string(params.family)) ^
          (0x517CC1B727220A95ull * static_cast<std::uint64_t>(params.size + 3)));

  inst.tools.reserve(params.n_tools);
  for (std::int64_t i = 0; i < params.n_tools; ++i) {
    inst.tools.push_back("tool_" + std::to_string(i));
  }
  // correct tool indices drawn without replacement
  std::vector<std::int64_t> pool(params.n_tools);
  for (std::int64_t i = 0; i < params.n_tools; ++i) pool[i] = i;
  for (std::int64_t i = 0; i < params.n_correct; ++i) {
    std::size_t j = i + static_cast<std::size_t>(rng.next_below(pool.size() - i));
    std::swap(pool[i], pool[j]);
    inst.correct_tools.push_back(pool[i]);
  }
  std::sort(inst.correct_tools.begin(), inst.correct_tools.end());

  switch (params.family) {
    case TaskFamily::needle_lookup: {
      inst.target_index = static_cast<std::int64_t>(rng.next_below(params.size));
      inst.ground_truth = fnv1a64("needle:" + std::to_string(inst.target_index));
      break;
    }
    case TaskFamily::state_tracking: {
      inst.transitions.reserve(params.size);
      std::uint64_t state = 0;
      for (std::int64_t i = 0; i < params.size; ++i) {
        std::int64_t sym = static_cast<std::int64_t>(rng.next_below(6));
        inst.transitions.push_back(sym);
        state = splitmix64(state) ^ static_cast<std::uint64_t>(sym + 1);
      }
      inst.ground_truth = state;
      break;
    }
    case TaskFamily::rule_filter: {
      inst.rule_matches.reserve(params.size);
      std::uint64_t bits = 0;
      for (std::int64_t i = 0; i < params.size; ++i) {
        int match = rng.next_double() < 0.45 ? 1 : 0;
        inst.rule_matches.push_back(match);
        if (match && i < 64) bits |= (1ull << i);
      }
      inst.ground_truth = fnv1a64("rule:" + std::to_string(bits));
      break;
    }
  }

  inst.demand.min_steps = static_cast<double>(inst.work_units());
  inst.demand.tool_entropy = params.htool_as_count
                                 ? static_cast<double>(params.n_tools)
                                 : std::log2(static_cast<double>(params.n_tools));
  // latent-variable count: target bits for needle, full structure otherwise
  inst.demand.state_demand =
      params.family == TaskFamily::needle_lookup
          ? std::ceil(std::log2(static_cast<double>(std::max<std::int64_t>(2, params.size)))) + 1
          : static_cast<double>(params.size);
  inst.demand.obs_noise = params.obs_noise;
  inst.demand.oracle_visibility = params.oracle_visibility;
  inst.normalized_demand = inst.demand;

  inst.task_id = std::string(to_string(params.family)) + "-n" + std::to_string(params.size) +
                 "-t" + std::to_string(params.n_tools) + "-s" + std::to_string(seed);
  return inst;
}

/// Divide L, H_tool, S_state, N_obs by their layer medians, floor at 0.05.
/// V_oracle is left untouched (already bounded in [0, 0.95]).
inline void normalize_demand_components(std::vector<TaskInstance>& layer) {
  if (layer.size() < 2) fail("degenerate-layer", "need >= 2 instances in the layer");
  auto median_of = [&](auto getter) {
    std::vector<double> v;
    v.reserve(layer.size());
    for (const auto& t : layer) v.push_back(getter(t.demand));
    std::sort(v.begin(), v.end());
    std::size_t n = v.size();
    double med = (n % 2 == 1) ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    if (med <= 0) fail("degenerate-layer", "layer median is zero for a demand component");
    return med;
  };
  double med_l = median_of([](const TaskDemandFactors& d) { return d.min_steps; });
  double med_h = median_of([](const TaskDemandFactors& d) { return d.tool_entropy; });
  double med_s = median_of([](const TaskDemandFactors& d) { return d.state_demand; });
  double med_n = median_of([](const TaskDemandFactors& d) { return d.obs_noise; });
  auto floor05 = [](double x) { return std::max(0.05, x); };
  for (auto& t : layer) {
    t.normalized_demand.min_steps = floor05(t.demand.min_steps / med_l);
    t.normalized_demand.tool_entropy = floor05(t.demand.tool_entropy / med_h);
    t.normalized_demand.state_demand = floor05(t.demand.state_demand / med_s);
    t.normalized_demand.obs_noise = floor05(t.demand.obs_noise / med_n);
    t.normalized_demand.oracle_visibility = t.demand.oracle_visibility;
  }
}

}  // namespace efclab
