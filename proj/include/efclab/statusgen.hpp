#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "efclab/common.hpp"
#include "efclab/core.hpp"
#include "efclab/estimator.hpp"
#include "efclab/gates.hpp"
#include "efclab/scaling.hpp"
#include "efclab/trace_io.hpp"

namespace efclab {

// ---------------------------------------------------------------------------
// Gate-exercising status-sequence generator.
//
// Emits canonical-schema traces with rich checker statuses: improving ladders,
// repeated failures, repairs and redundant filler. Quality drives success and
// the status structure; trace length is independent of quality, so raw budget
// scalars carry almost no outcome signal. This batch stands in for recorded
// real traces in the prospective protocol.
// ---------------------------------------------------------------------------

struct StatusGenConfig {
  std::uint64_t master_seed = 99;
  int replicates = 12;
  std::vector<std::string> quality_profiles = all_harness_ids();  // H0..H6 quality ladder
  std::vector<BudgetLevel> length_levels = {{"x1", 7}, {"x2", 9}, {"x4", 12}, {"x8", 16}};
  std::vector<ModelProfile> models = {{"gen-a", 0.6}, {"gen-b", 0.85}};
  double batch_tag = 0;  // folded into run ids so batches stay disjoint
};

struct StatusGenBatch {
  std::vector<RunRecord> runs;
  std::map<std::string, std::array<double, 5>> demand_by_task;  // normalized components
  NormalizationContext norm;
};

namespace detail {

struct SgFamily {
  const char* name;
  double hardness;                 // reduces per-step success
  int needed;                      // ladder steps that must succeed
  std::array<double, 5> demand;    // raw (L, H, S, N, V) before normalization
};

inline const std::array<SgFamily, 3>& sg_families() {
  static const std::array<SgFamily, 3> fams = {{
      {"sg_easy", 0.05, 4, {4, 1.0, 4, 0.10, 0.55}},
      {"sg_medium", 0.15, 5, {5, 1.4, 5, 0.20, 0.45}},
      {"sg_hard", 0.25, 6, {6, 2.0, 6, 0.30, 0.35}},
  }};
  return fams;
}

inline StatusKind sg_ladder_status(int progress, int needed) {
  if (progress >= needed) return StatusKind::passed;
  double frac = static_cast<double>(progress) / needed;
  if (frac < 0.34) return StatusKind::runtime_error;
  if (frac < 0.67) return StatusKind::other;
  return StatusKind::assertion_error;
}

}  // namespace detail

inline StatusGenBatch generate_status_batch(const StatusGenConfig& cfg) {
  StatusGenBatch batch;
  const auto& fams = detail::sg_families();

  // normalize the demand tiers over the batch the same way the synthetic
  // layer normalizes templates: median division, 0.05 floor, V untouched
  std::array<double, 4> med{};
  for (int c = 0; c < 4; ++c) {
    std::vector<double> v;
    for (const auto& f : fams) v.push_back(f.demand[static_cast<std::size_t>(c)]);
    std::sort(v.begin(), v.end());
    med[static_cast<std::size_t>(c)] = v[v.size() / 2];
  }

  constexpr int kLadderSteps = 6;
  for (std::size_t fi = 0; fi < fams.size(); ++fi) {
    const auto& fam = fams[fi];
    std::string task_id = std::string(fam.name) + "-t" + std::to_string(fi);
    std::array<double, 5> norm_demand;
    for (int c = 0; c < 4; ++c) {
      norm_demand[static_cast<std::size_t>(c)] =
          std::max(0.05, fam.demand[static_cast<std::size_t>(c)] / med[static_cast<std::size_t>(c)]);
    }
    norm_demand[3] = 1.0 + norm_demand[3];       // (1 + N)
    norm_demand[4] = 1.0 - fam.demand[4];        // (1 - V), unnormalized V
    batch.demand_by_task[task_id] = norm_demand;

    for (std::size_t qi = 0; qi < cfg.quality_profiles.size(); ++qi) {
      double quality = cfg.quality_profiles.size() > 1
                           ? static_cast<double>(qi) /
                                 static_cast<double>(cfg.quality_profiles.size() - 1)
                           : 1.0;
      for (const auto& model : cfg.models) {
        for (const auto& level : cfg.length_levels) {
          for (int rep = 0; rep < cfg.replicates; ++rep) {
            std::uint64_t seed = mix_run_seed(
                cfg.master_seed ^ fnv1a64("statusgen" + fmt_num(cfg.batch_tag)), task_id,
                cfg.quality_profiles[qi], model.model_id, level.label,
                static_cast<std::uint64_t>(rep));
            Rng rng(seed);

            RunRecord run;
            run.task_id = task_id;
            run.family = fam.name;
            run.harness_id = cfg.quality_profiles[qi];
            run.model_id = model.model_id;
            run.budget_level = level.label;
            run.seed = seed;
            run.run_id = task_id + "." + run.harness_id + "." + run.model_id + "." +
                         level.label + ".b" + fmt_num(cfg.batch_tag) + ".r" +
                         std::to_string(rep);

            const int rounds = static_cast<int>(level.multiplier);
            const double p_step =
                clamp01((0.20 + 0.90 * quality * model.capability) * (1.0 - fam.hardness));
            const int needed = fam.needed;

            int progress = 0;
            std::int64_t attempt = 0, next_index = 1;
            StatusKind last_status = StatusKind::none;
            auto push = [&](EventType type, StatusKind status, std::int64_t tokens) {
              TraceEvent e;
              e.event_index = next_index++;
              e.event_type = type;
              e.status = status;
              e.attempt_index = attempt;
              run.budget.raw_tokens += tokens;
              run.budget.operations += 1;
              run.budget.wall_time += 0.4;
              if (type == EventType::tool_call) run.budget.tool_calls += 1;
              run.events.push_back(std::move(e));
              return &run.events.back();
            };

            push(EventType::generation, StatusKind::none, 160 + (rng.next_u64() % 60));
            attempt += 1;

            for (int r = 0; r < rounds; ++r) {
              bool ladder_round = r < kLadderSteps;
              bool advanced = ladder_round && progress < needed && rng.next_double() < p_step;
              bool degraded =
                  !advanced && rng.next_double() < 0.25 * (1.0 - quality);
              bool redundant = !ladder_round || (progress >= needed && r >= kLadderSteps);

              TraceEvent* tool = push(EventType::tool_call, StatusKind::none,
                                      40 + (rng.next_u64() % 25));
              tool->tool_name = "sg_tool_" + std::to_string(redundant ? 0 : (r % 4));
              tool->args = redundant ? "again" : ("step_" + std::to_string(progress));
              tool->obs_id = fnv1a64(tool->tool_name + "|" + tool->args);
              tool->consistency = clamp01(0.35 + 0.55 * quality + 0.1 * rng.next_double());
              tool->reported_progress = advanced ? 0.25 + 0.35 * rng.next_double()
                                                 : (redundant ? 0.0 : 0.05 * rng.next_double());
              std::int64_t tool_index = tool->event_index;

              if (rng.next_double() < 0.35 + 0.5 * quality) {
                TraceEvent* mem = push(EventType::memory_update, StatusKind::none, 10);
                bool retained = rng.next_double() < 0.3 + 0.6 * quality;
                mem->retained = retained ? 1 : 0;
                if (retained) mem->refs.push_back(tool_index);
              }

              bool failing_before = last_status != StatusKind::none &&
                                    last_status != StatusKind::passed;
              push(failing_before ? EventType::repair : EventType::generation, StatusKind::none,
                   150 + (rng.next_u64() % 80));
              attempt += 1;

              if (advanced) progress += 1;
              if (degraded && progress > 0) progress -= 1;
              StatusKind status = detail::sg_ladder_status(progress, needed);
              if (degraded && status != StatusKind::passed && rng.next_double() < 0.3) {
                status = rng.next_double() < 0.5 ? StatusKind::timeout : StatusKind::api_error;
              }
              TraceEvent* chk = push(EventType::checker, status, 25 + (rng.next_u64() % 15));
              chk->coverage = fam.demand[4];
              chk->consistency = clamp01(0.4 + 0.5 * quality);
              last_status = status;
            }

            run.success = progress >= needed ? 1 : 0;
            for (std::size_t i = 0; i < run.events.size(); ++i) {
              run.events[i].features = extract_features(run, static_cast<std::int64_t>(i + 1));
            }
            batch.runs.push_back(std::move(run));
          }
        }
      }
    }
  }
  detail::sort_runs(batch.runs);
  batch.norm = layer_normalization(batch.runs);
  fill_raw_costs(batch.runs, batch.norm);
  return batch;
}

/// RunMetrics over a status batch. Oracle EFC does not exist on this layer;
/// the NRS / stable / estimated variants and raw scalars are filled.
inline std::vector<RunMetrics> status_batch_metrics(const StatusGenBatch& batch,
                                                    const EstimatorParams& estimator,
                                                    const std::vector<ModelProfile>& models,
                                                    double kappa = 10.0) {
  std::map<std::string, double> cap_by_model;
  for (const auto& m : models) cap_by_model[m.model_id] = m.capability;
  std::vector<RunMetrics> out;
  out.reserve(batch.runs.size());
  for (const auto& run : batch.runs) {
    TaskInstance pseudo;  // only demand is consumed below
    pseudo.task_id = run.task_id;
    RunMetrics m = compute_run_metrics(run, pseudo, estimator,
                                       cap_by_model.count(run.model_id)
                                           ? cap_by_model.at(run.model_id)
                                           : 0.5,
                                       kappa);
    m.efc_oracle = 0;  // no hidden state on this layer
    auto it = batch.demand_by_task.find(run.task_id);
    if (it != batch.demand_by_task.end()) m.demand = it->second;
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace efclab
