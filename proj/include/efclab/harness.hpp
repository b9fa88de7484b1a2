#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "efclab/common.hpp"
#include "efclab/core.hpp"
#include "efclab/estimator.hpp"
#include "efclab/tasks.hpp"

namespace efclab {

// ---------------------------------------------------------------------------
// Harness configuration
// ---------------------------------------------------------------------------

struct HarnessConfig {
  std::string harness_id;
  double b_route = 0, b_verify = 0, b_mem = 0;
  double noise_level = 0, tool_entropy_penalty = 0, state_pressure = 0;
  std::int64_t interaction_depth = 0;  // max feedback rounds
  double budget_multiplier = 1.0;
  double tool_budget = 1.0;  // 0 disables tool calls entirely
  double per_op_latency = 0.5;
};

/// Fixed default table for H0..H6. Parameter values satisfy the mechanism-role
/// orderings: H0 one-pass, H4 high raw budget with weak conversion, H5 closed
/// loop, H6 deeper with stronger factors.
inline HarnessConfig harness_config(const std::string& harness_id) {
  if (harness_id == "H0") return {"H0", 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0, 1.0, 0.0, 0.5};
  if (harness_id == "H1") return {"H1", 0.3, 0.5, 0.3, 0.2, 0.2, 0.2, 1, 1.0, 1.0, 0.5};
  if (harness_id == "H2") return {"H2", 0.70, 0.64, 0.64, 0.15, 0.2, 0.2, 8, 1.0, 1.0, 0.5};
  if (harness_id == "H3") return {"H3", 0.64, 0.64, 0.70, 0.15, 0.2, 0.2, 8, 1.0, 1.0, 0.5};
  if (harness_id == "H4") return {"H4", 0.22, 0.22, 0.22, 0.55, 0.3, 0.3, 10, 3.0, 1.0, 0.5};
  if (harness_id == "H5") return {"H5", 0.68, 0.68, 0.68, 0.15, 0.15, 0.15, 10, 1.0, 1.0, 0.5};
  if (harness_id == "H6") return {"H6", 0.68, 0.68, 0.68, 0.15, 0.15, 0.15, 14, 1.0, 1.0, 0.5};
  fail("unknown-harness", "no harness named " + harness_id);
}

inline const std::vector<std::string>& all_harness_ids() {
  static const std::vector<std::string> ids = {"H0", "H1", "H2", "H3", "H4", "H5", "H6"};
  return ids;
}

struct ModelProfile {
  std::string model_id;
  double capability = 0.5;  // bounds every per-step correct-action probability
};

struct BudgetLevel {
  std::string label;
  double multiplier = 1.0;
};

/// Base resource caps at budget multiplier 1. Scaled by budget level and the
/// harness budget multiplier.
struct BaseCaps {
  std::int64_t tokens = 2660;
  std::int64_t tool_calls = 28;
  std::int64_t operations = 28;
  double wall_time = 14.0;
};

/// Quality toggle for matched-budget pairs. Only observation validity,
/// redundancy, and retention change; every schedule knob stays put.
struct FeedbackQualityToggle {
  enum class Quality { low, high };
  Quality quality = Quality::high;
  double corrupt_prob() const { return quality == Quality::low ? 0.45 : 0.03; }
  double retain_prob() const { return quality == Quality::low ? 0.45 : 0.92; }
  double redundancy_prob() const { return quality == Quality::low ? 0.40 : 0.03; }
};

// Per-event token costs. Constants are irrelevant to ordering-based claims.
namespace simcost {
inline constexpr std::int64_t kGenerationTokens = 200;
inline constexpr std::int64_t kToolTokens = 50;
inline constexpr std::int64_t kCheckerTokens = 30;
inline constexpr std::int64_t kMemoryTokens = 10;
}  // namespace simcost

// ---------------------------------------------------------------------------
// Closed-loop simulation
// ---------------------------------------------------------------------------

namespace detail {

struct LatentState {
  const TaskInstance* task = nullptr;
  std::int64_t remaining = 0;   // needle candidates left
  int recovered = 0;            // needle relation recovered
  std::int64_t committed = 0;   // state transitions committed
  std::int64_t error_debt = 0;  // commits lost to uncaught corruption
  std::int64_t classified = 0;  // rule items resolved
  std::int64_t eliminated = 0;
  std::int64_t confirmed = 0;
  std::int64_t pending_fix = 0;  // corrupted commits awaiting re-derivation

  explicit LatentState(const TaskInstance& t) : task(&t) {
    remaining = t.family == TaskFamily::needle_lookup ? t.params.size : 0;
  }

  bool complete() const {
    switch (task->family) {
      case TaskFamily::needle_lookup: return recovered == 1;
      case TaskFamily::state_tracking: return committed >= task->params.size;
      case TaskFamily::rule_filter: return classified >= task->params.size;
    }
    return false;
  }
};

struct RoundDraws {
  double tool, pick, red, noise, jitter, chk, status, mem, forget, catch_u, poison;
};

inline RoundDraws draw_round(Rng& rng) {
  RoundDraws d;
  d.tool = rng.next_double();
  d.pick = rng.next_double();
  d.red = rng.next_double();
  d.noise = rng.next_double();
  d.jitter = rng.next_double();
  d.chk = rng.next_double();
  d.status = rng.next_double();
  d.mem = rng.next_double();
  d.forget = rng.next_double();
  d.catch_u = rng.next_double();
  d.poison = rng.next_double();
  return d;
}

inline StatusKind pick_failure_status(double u) {
  if (u < 0.70) return StatusKind::assertion_error;
  if (u < 0.82) return StatusKind::runtime_error;
  if (u < 0.88) return StatusKind::other;
  if (u < 0.93) return StatusKind::timeout;
  if (u < 0.96) return StatusKind::static_reject;
  return StatusKind::api_error;
}

}  // namespace detail

struct SimRequest {
  const TaskInstance* task = nullptr;
  HarnessConfig harness;
  ModelProfile model;
  BudgetLevel budget_level;
  BaseCaps caps;
  std::uint64_t seed = 0;
  std::optional<FeedbackQualityToggle> toggle;  // matched-pair mode only
  bool fixed_schedule = false;                  // run every planned round, no early stop
  std::uint64_t replicate = 0;                  // used only for the run id
};

/// Rounds the caps allow on top of the initial draft, using worst-case
/// per-round costs so ceilings are never exceeded.
inline std::int64_t planned_rounds(const HarnessConfig& h, const BudgetLevel& level,
                                   const BaseCaps& caps) {
  if (h.interaction_depth <= 0 || h.tool_budget <= 0) return 0;
  const double m = level.multiplier * h.budget_multiplier;
  const double cap_tokens = static_cast<double>(caps.tokens) * m;
  const double cap_ops = static_cast<double>(caps.operations) * m;
  const double cap_tc = static_cast<double>(caps.tool_calls) * m * h.tool_budget;
  const double cap_wall = caps.wall_time * m;
  const double round_tokens = simcost::kToolTokens + simcost::kMemoryTokens +
                              simcost::kGenerationTokens + simcost::kCheckerTokens;
  std::int64_t by_tokens =
      static_cast<std::int64_t>((cap_tokens - simcost::kGenerationTokens) / round_tokens);
  std::int64_t by_ops = static_cast<std::int64_t>((cap_ops - 1.0) / 4.0);
  std::int64_t by_tc = static_cast<std::int64_t>(cap_tc);
  std::int64_t by_wall =
      static_cast<std::int64_t>((cap_wall - h.per_op_latency) / (4.0 * h.per_op_latency));
  std::int64_t rounds = std::min({by_tokens, by_ops, by_tc, by_wall, h.interaction_depth});
  return std::max<std::int64_t>(0, rounds);
}

/// Deterministic closed-loop policy over a synthetic task. Pure function of
/// the request: identical arguments produce identical records byte-for-byte.
inline RunRecord simulate_run(const SimRequest& req) {
  const TaskInstance& task = *req.task;
  const HarnessConfig& h = req.harness;
  Rng rng(req.seed);

  RunRecord run;
  run.task_id = task.task_id;
  run.family = to_string(task.family);
  run.harness_id = h.harness_id;
  run.model_id = req.model.model_id;
  run.budget_level = req.budget_level.label;
  run.seed = req.seed;
  run.run_id = task.task_id + "." + h.harness_id + "." + req.model.model_id + "." +
               req.budget_level.label + ".r" + std::to_string(req.replicate);

  const double cap = req.model.capability;
  const double corrupt_p =
      req.toggle ? req.toggle->corrupt_prob()
                 : clamp01(h.noise_level + 0.2 * task.params.obs_noise * (1.0 - h.noise_level));
  const double retain_p =
      req.toggle ? req.toggle->retain_prob()
                 : clamp01(0.55 + 0.45 * h.b_mem * (1.0 - 0.4 * h.state_pressure));
  const double redundancy_p =
      req.toggle ? req.toggle->redundancy_prob()
                 : clamp01(0.08 + 0.35 * h.state_pressure * (1.0 - h.b_mem));
  const double p_tool = clamp01(cap * (0.55 + 0.45 * h.b_route) *
                                (1.0 - 0.5 * h.tool_entropy_penalty));
  const double forget_p = clamp01(0.2 * h.state_pressure * (1.0 - h.b_mem));

  OracleEventContext base_ctx;
  base_ctx.family = task.family;
  base_ctx.min_steps = static_cast<std::int64_t>(task.demand.min_steps);
  base_ctx.n_items = task.family == TaskFamily::rule_filter ? task.params.size : 0;
  base_ctx.b_route = h.b_route;
  base_ctx.b_verify = h.b_verify;
  base_ctx.b_mem = h.b_mem;
  base_ctx.b_noise = 1.0 - h.noise_level;
  base_ctx.b_tool = 1.0 - h.tool_entropy_penalty;
  base_ctx.b_state = 1.0 - h.state_pressure;

  std::int64_t attempt = 0;     // repair/generation events seen so far
  std::int64_t next_index = 1;  // dense event indices from 1
  auto push_event = [&](EventType type, StatusKind status, std::int64_t tokens) {
    TraceEvent e;
    e.event_index = next_index++;
    e.event_type = type;
    e.status = status;
    e.attempt_index = attempt;
    run.budget.raw_tokens += tokens;
    run.budget.operations += 1;
    run.budget.wall_time += h.per_op_latency;
    if (type == EventType::tool_call) run.budget.tool_calls += 1;
    run.events.push_back(std::move(e));
    return &run.events.back();
  };

  // Initial draft. Lucky drafts solve without any feedback.
  const double l_task = task.demand.min_steps;
  const double p_direct = 0.3 * std::pow(0.6 * cap, std::max(1.0, l_task));
  double u_draft = rng.next_double();
  bool draft_lucky = u_draft < p_direct;
  {
    TraceEvent* e = push_event(EventType::generation, StatusKind::none,
                               simcost::kGenerationTokens);
    OracleEventContext ctx = base_ctx;  // no latent progress, no novelty
    if (task.family == TaskFamily::needle_lookup) {
      ctx.candidates_before = ctx.candidates_after = task.params.size;
    }
    e->oracle_context = ctx;
    attempt += 1;
  }

  detail::LatentState latent(task);
  bool candidate_correct = draft_lucky;
  bool failing_seen = false;
  std::string last_args;
  std::map<std::uint64_t, std::int64_t> seen_obs;  // (tool, args) hash -> repeats

  const std::int64_t rounds_planned = planned_rounds(h, req.budget_level, req.caps);
  for (std::int64_t round = 1; round <= rounds_planned; ++round) {
    if (!req.fixed_schedule && candidate_correct) break;
    detail::RoundDraws d = detail::draw_round(rng);

    bool correct_tool = d.tool < p_tool;
    std::size_t tool_idx;
    if (correct_tool) {
      tool_idx = static_cast<std::size_t>(
          task.correct_tools[static_cast<std::size_t>(d.pick * 0.999 *
                                                      task.correct_tools.size())]);
    } else {
      tool_idx = static_cast<std::size_t>(d.pick * 0.999 * task.tools.size());
    }
    bool redundant = d.red < redundancy_p;
    bool corrupted = d.noise < corrupt_p;
    bool retained = d.mem < retain_p;
    // unretained observations survive in working memory about half the time
    bool sticky = retained || d.forget < 0.5;
    bool effective = correct_tool && !corrupted && !redundant && sticky && !latent.complete();
    // a believable corrupted observation poisons progress unless a reliable
    // checker catches it this round
    bool checker_fires = d.chk < h.b_verify;
    bool caught = checker_fires && d.catch_u < 0.45 + 0.55 * task.params.oracle_visibility;
    bool poisoned = corrupted && correct_tool && !caught && d.poison < 0.6;
    if (effective && latent.pending_fix > 0) {
      latent.pending_fix -= 1;  // the round re-derives damaged ground instead
      effective = false;
    }

    // Latent snapshots before the round commits.
    OracleEventContext ctx = base_ctx;
    std::string args;
    switch (task.family) {
      case TaskFamily::needle_lookup: {
        ctx.candidates_before = latent.remaining;
        int was_recovered = latent.recovered;
        if (effective) {
          if (latent.remaining > 1) {
            latent.remaining = (latent.remaining + 1) / 2;
            if (latent.remaining == 1) latent.recovered = 1;
          } else {
            latent.recovered = 1;
          }
        }
        ctx.candidates_after = latent.remaining;
        ctx.recovered = (latent.recovered == 1 && was_recovered == 0) ? 1 : 0;
        args = "probe_" + std::to_string(latent.remaining);
        break;
      }
      case TaskFamily::state_tracking: {
        ctx.committed_before = latent.committed;
        int fix = 0;
        if (effective) {
          latent.committed += 1;
          if (latent.error_debt > 0) {
            latent.error_debt -= 1;
            fix = 1;  // corrects a previously corrupted transition
          }
        }
        ctx.committed_after = latent.committed;
        ctx.fix = fix;
        args = "step_" + std::to_string(latent.committed);
        break;
      }
      case TaskFamily::rule_filter: {
        std::int64_t before_e = latent.eliminated, before_p = latent.confirmed;
        if (effective) {
          std::size_t item = static_cast<std::size_t>(latent.classified);
          if (item < task.rule_matches.size() && task.rule_matches[item]) {
            latent.confirmed += 1;
          } else {
            latent.eliminated += 1;
          }
          latent.classified += 1;
        }
        ctx.eliminated_delta = latent.eliminated - before_e;
        ctx.confirmed_delta = latent.confirmed - before_p;
        args = "item_" + std::to_string(latent.classified);
        break;
      }
    }

    if (redundant) args = last_args.empty() ? "repeat" : last_args;
    last_args = args;
    const std::string& tool_name = task.tools[std::min(tool_idx, task.tools.size() - 1)];
    std::uint64_t obs_key = fnv1a64(tool_name + "|" + args);
    std::int64_t repeats = seen_obs[obs_key]++;
    ctx.novelty = repeats == 0 ? 1.0 : 1.0 / (1.0 + static_cast<double>(repeats));

    double true_delta = latent_progress(ctx);
    double reported = corrupted ? (d.jitter < 0.3 ? 0.1 + 0.6 * d.jitter : 0.0) : true_delta;
    // channel noise depresses consistency scores even for valid observations
    double consistency = corrupted ? clamp01(0.15 + 0.25 * d.jitter - 0.1 * h.noise_level)
                                   : clamp01(0.82 + 0.12 * d.jitter - 0.45 * h.noise_level);

    TraceEvent* tool_event = push_event(EventType::tool_call, StatusKind::none,
                                        simcost::kToolTokens);
    tool_event->tool_name = tool_name;
    tool_event->args = args;
    tool_event->obs_id = obs_key;
    tool_event->consistency = consistency;
    tool_event->reported_progress = reported;
    tool_event->oracle_context = ctx;
    std::int64_t tool_event_index = tool_event->event_index;

    // Memory update: always scheduled; the retention level is content.
    // 2 = written to durable memory, 1 = working memory only, 0 = dropped.
    {
      TraceEvent* mem = push_event(EventType::memory_update, StatusKind::none,
                                   simcost::kMemoryTokens);
      mem->retained = retained ? 2 : (sticky ? 1 : 0);
      if (retained) mem->refs.push_back(tool_event_index);
      OracleEventContext mctx = base_ctx;
      mctx.family = task.family;
      if (task.family == TaskFamily::needle_lookup) {
        mctx.candidates_before = mctx.candidates_after = latent.remaining;
      } else if (task.family == TaskFamily::state_tracking) {
        mctx.committed_before = mctx.committed_after = latent.committed;
      }
      mem->oracle_context = mctx;
    }

    // State pressure can knock out a committed transition later.
    if (task.family == TaskFamily::state_tracking && latent.committed > 0 && !retained &&
        d.forget >= 0.5 && d.forget - 0.5 < forget_p && !latent.complete()) {
      latent.committed -= 1;
      if (!run.events.empty() && run.events.back().oracle_context) {
        auto& mctx = *run.events.back().oracle_context;
        mctx.rollback = 1;
        mctx.committed_after = latent.committed;
        mctx.committed_before = latent.committed;
      }
    }

    // Uncaught poison damages durable progress.
    if (poisoned && !latent.complete()) {
      switch (task.family) {
        case TaskFamily::needle_lookup:
          latent.pending_fix += 1;
          break;
        case TaskFamily::state_tracking:
          if (latent.committed > 0) {
            latent.committed -= 1;
            latent.error_debt += 1;
            if (!run.events.empty() && run.events.back().oracle_context) {
              auto& mctx = *run.events.back().oracle_context;
              mctx.rollback = 1;
              mctx.committed_after = latent.committed;
              mctx.committed_before = latent.committed;
            }
          }
          break;
        case TaskFamily::rule_filter:
          if (latent.classified > 0) {
            latent.classified -= 1;
            std::size_t item = static_cast<std::size_t>(latent.classified);
            if (item < task.rule_matches.size() && task.rule_matches[item]) {
              latent.confirmed -= 1;
            } else {
              latent.eliminated -= 1;
            }
          }
          break;
      }
    }

    // Candidate update.
    candidate_correct = draft_lucky || latent.complete();
    {
      EventType type = failing_seen ? EventType::repair : EventType::generation;
      TraceEvent* gen = push_event(type, StatusKind::none, simcost::kGenerationTokens);
      OracleEventContext gctx = base_ctx;
      if (task.family == TaskFamily::needle_lookup) {
        gctx.candidates_before = gctx.candidates_after = latent.remaining;
      } else if (task.family == TaskFamily::state_tracking) {
        gctx.committed_before = gctx.committed_after = latent.committed;
      }
      gen->oracle_context = gctx;
      attempt += 1;
    }

    // Checker validates the fresh candidate.
    if (checker_fires) {
      StatusKind status = candidate_correct ? StatusKind::passed
                                            : detail::pick_failure_status(d.status);
      if (status != StatusKind::passed) failing_seen = true;
      TraceEvent* chk = push_event(EventType::checker, status, simcost::kCheckerTokens);
      chk->coverage = task.params.oracle_visibility;
      chk->consistency = consistency;
      OracleEventContext cctx = base_ctx;
      if (task.family == TaskFamily::needle_lookup) {
        cctx.candidates_before = cctx.candidates_after = latent.remaining;
      } else if (task.family == TaskFamily::state_tracking) {
        cctx.committed_before = cctx.committed_after = latent.committed;
      }
      chk->oracle_context = cctx;
    }
  }

  std::uint64_t answer = candidate_correct ? task.ground_truth : ~task.ground_truth;
  run.success = task.evaluate(answer) ? 1 : 0;

  // Features come from the same extractor used on ingested traces.
  for (std::size_t i = 0; i < run.events.size(); ++i) {
    run.events[i].features = extract_features(run, static_cast<std::int64_t>(i + 1));
  }
  return run;
}

// ---------------------------------------------------------------------------
// Matched-budget pairs
// ---------------------------------------------------------------------------

struct MatchedDeltas {
  std::int64_t tokens = 0, tool_calls = 0, operations = 0, events = 0;
  double wall_time = 0, raw_cost = 0;
  bool all_zero() const {
    return tokens == 0 && tool_calls == 0 && operations == 0 && events == 0 &&
           wall_time == 0 && raw_cost == 0;
  }
};

struct MatchedPair {
  RunRecord low;
  RunRecord high;
  MatchedDeltas deltas;  // all exactly zero by construction, asserted
};

/// Two runs on the same task, model, budget and seed, identical in every raw
/// budget scalar, differing only through the feedback-quality toggle.
inline MatchedPair matched_pair(const TaskInstance& task, const ModelProfile& model,
                                const BudgetLevel& budget_level, std::uint64_t seed,
                                const BaseCaps& caps = {}) {
  HarnessConfig h = harness_config("H5");
  h.interaction_depth = 12;
  if (planned_rounds(h, budget_level, caps) < 1) {
    fail("invalid-template", "task/budget admits no feedback round");
  }

  SimRequest req;
  req.task = &task;
  req.harness = h;
  req.model = model;
  req.budget_level = budget_level;
  req.caps = caps;
  req.seed = seed;
  req.fixed_schedule = true;

  req.toggle = FeedbackQualityToggle{FeedbackQualityToggle::Quality::low};
  RunRecord low = simulate_run(req);
  low.run_id += ".low";
  req.toggle = FeedbackQualityToggle{FeedbackQualityToggle::Quality::high};
  RunRecord high = simulate_run(req);
  high.run_id += ".high";

  MatchedPair pair;
  pair.deltas.tokens = high.budget.raw_tokens - low.budget.raw_tokens;
  pair.deltas.tool_calls = high.budget.tool_calls - low.budget.tool_calls;
  pair.deltas.operations = high.budget.operations - low.budget.operations;
  pair.deltas.wall_time = high.budget.wall_time - low.budget.wall_time;
  pair.deltas.events = static_cast<std::int64_t>(high.events.size()) -
                       static_cast<std::int64_t>(low.events.size());
  pair.deltas.raw_cost = 0;  // raw cost is a deterministic function of the matched scalars
  if (!pair.deltas.all_zero()) {
    fail("budget-leak", "matched pair diverged in a raw budget scalar");
  }
  // repair vs generation is content (both cost one generation); everything
  // else in the schedule must match exactly
  auto cost_class = [](EventType t) {
    return t == EventType::repair ? EventType::generation : t;
  };
  for (std::size_t i = 0; i < low.events.size(); ++i) {
    if (cost_class(low.events[i].event_type) != cost_class(high.events[i].event_type)) {
      fail("budget-leak", "matched pair diverged in event schedule");
    }
  }
  pair.low = std::move(low);
  pair.high = std::move(high);
  return pair;
}

}  // namespace efclab
