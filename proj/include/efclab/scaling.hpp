#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "efclab/common.hpp"
#include "efclab/core.hpp"
#include "efclab/gates.hpp"
#include "efclab/suite.hpp"
#include "efclab/tasks.hpp"

namespace efclab {

// ---------------------------------------------------------------------------
// Small stats helpers
// ---------------------------------------------------------------------------

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0;
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

/// R^2 = 1 - SSE/SST. May be negative; zero observed variance is an error.
inline double r_squared(const std::vector<double>& observed,
                        const std::vector<double>& predicted) {
  if (observed.size() != predicted.size() || observed.size() < 2) {
    fail("degenerate-observations", "need equal-length vectors with >= 2 entries");
  }
  double mean = mean_of(observed);
  double sse = 0, sst = 0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    sse += (observed[i] - predicted[i]) * (observed[i] - predicted[i]);
    sst += (observed[i] - mean) * (observed[i] - mean);
  }
  if (sst <= 0) fail("degenerate-observations", "observed values have zero variance");
  return 1.0 - sse / sst;
}

inline double mae(const std::vector<double>& observed, const std::vector<double>& predicted) {
  if (observed.size() != predicted.size() || observed.empty()) {
    fail("degenerate-observations", "need equal-length nonempty vectors");
  }
  double s = 0;
  for (std::size_t i = 0; i < observed.size(); ++i) s += std::abs(observed[i] - predicted[i]);
  return s / static_cast<double>(observed.size());
}

/// Multi-split protocols report the average of per-split MAEs.
inline double mae_split_average(const std::vector<double>& split_maes) {
  if (split_maes.empty()) fail("degenerate-observations", "no splits");
  return mean_of(split_maes);
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) {
    fail("degenerate-observations", "need equal-length vectors with >= 2 entries");
  }
  double mx = mean_of(x), my = mean_of(y);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0 || syy <= 0) fail("degenerate-observations", "zero variance");
  return sxy / std::sqrt(sxx * syy);
}

inline std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  return pearson(average_ranks(x), average_ranks(y));
}

/// Divide by the median, floor at 1e-6. Returns the median used.
inline double median_normalize(std::vector<double>& values) {
  if (values.empty()) fail("degenerate-predictor", "no values");
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  std::size_t n = sorted.size();
  double med = n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  if (!(med > 0) || !std::isfinite(med)) {
    fail("degenerate-predictor", "median must be strictly positive");
  }
  for (double& v : values) v = std::max(1e-6, v / med);
  return med;
}

// ---------------------------------------------------------------------------
// Per-run metrics (the bridge from traces to scaling coordinates)
// ---------------------------------------------------------------------------

struct RunMetrics {
  std::string run_id, task_id, family, harness_id, model_id, budget_level;
  std::uint64_t seed = 0;
  int success = 0;
  double tokens = 0, tool_calls = 0, operations = 0, wall_time = 0, raw_cost = 0;
  double efc_oracle = 0, efc_estimated = 0, efc_stable = 0, efc_nrs = 0;
  std::array<double, 5> demand{1, 1, 1, 1, 1};  // normalized (L, H, S, 1+N, 1-V)
  double capability = 0;
  // trace statistics backing the SAS proxies
  double novelty_mean = 0;    // mean oracle novelty over tool events (1 when absent)
  double redundancy = 0;      // repeated (tool,args) fraction
  double referenced_frac = 0; // tool results later referenced
  double worsen_frac = 0;     // consecutive status pairs that dropped in severity
  double overhead = 0;        // non-tool operations share
  double effective_actions = 0;  // events with observable progress
};

inline RunMetrics compute_run_metrics(const RunRecord& run, const TaskInstance& task,
                                      const EstimatorParams& estimator, double capability,
                                      double kappa = 10.0) {
  RunMetrics m;
  m.run_id = run.run_id;
  m.task_id = run.task_id;
  m.family = run.family;
  m.harness_id = run.harness_id;
  m.model_id = run.model_id;
  m.budget_level = run.budget_level;
  m.seed = run.seed;
  m.success = run.success;
  m.tokens = static_cast<double>(run.budget.raw_tokens);
  m.tool_calls = static_cast<double>(run.budget.tool_calls);
  m.operations = static_cast<double>(run.budget.operations);
  m.wall_time = run.budget.wall_time;
  m.raw_cost = run.budget.raw_cost;
  m.capability = capability;

  EfcConfig ecfg{kappa};
  m.efc_oracle = oracle_run_efc(run, task, ecfg);
  RunScores scores = score_run(estimator, run);
  m.efc_estimated = scores.estimated;
  m.efc_stable = scores.stable;
  m.efc_nrs = scores.nrs;

  const auto& d = task.normalized_demand;
  m.demand = {d.min_steps, d.tool_entropy, d.state_demand, 1.0 + d.obs_noise,
              1.0 - d.oracle_visibility};

  // trace statistics
  std::map<std::string, int> seen_pairs;
  double tool_events = 0, novelty_sum = 0, repeats = 0, referenced = 0, progress = 0;
  StatusKind prev = StatusKind::none;
  double transitions = 0, worsened = 0;
  for (const auto& e : run.events) {
    if (e.event_type == EventType::tool_call) {
      tool_events += 1;
      novelty_sum += e.oracle_context ? e.oracle_context->novelty : 1.0;
      int k = seen_pairs[e.tool_name + "|" + e.args]++;
      if (k > 0) repeats += 1;
      if (e.features && e.features->z > 0) referenced += 1;
      if (e.reported_progress > 0.05) progress += 1;
    }
    if (e.status != StatusKind::none) {
      if (prev != StatusKind::none) {
        transitions += 1;
        if (severity(e.status) < severity(prev)) worsened += 1;
      }
      prev = e.status;
    }
  }
  m.novelty_mean = tool_events > 0 ? novelty_sum / tool_events : 1.0;
  m.redundancy = tool_events > 0 ? repeats / tool_events : 0.0;
  m.referenced_frac = tool_events > 0 ? referenced / tool_events : 0.0;
  m.worsen_frac = transitions > 0 ? worsened / transitions : 0.0;
  m.overhead = m.operations > 0 ? (m.operations - m.tool_calls) / m.operations : 1.0;
  m.effective_actions = progress;
  return m;
}

// ---------------------------------------------------------------------------
// Scalar coordinates
// ---------------------------------------------------------------------------

inline double demand_product(const std::array<double, 5>& comps, const DemandExponents* w) {
  double out = 1.0;
  if (w == nullptr) {
    for (double c : comps) out *= c;
  } else {
    auto e = w->as_array();
    for (std::size_t i = 0; i < comps.size(); ++i) out *= std::pow(comps[i], e[i]);
  }
  return out;
}

/// Named per-run scalar coordinates. Demand-normalized forms accept optional
/// fitted exponents; null means the hand-designed (all-ones) form.
inline double coordinate_value(const RunMetrics& m, const std::string& name,
                               const DemandExponents* w = nullptr) {
  if (name == "raw_tokens") return m.tokens;
  if (name == "wall_time") return m.wall_time;
  if (name == "raw_cost") return m.raw_cost;
  if (name == "operations") return m.operations;
  if (name == "tool_calls") return m.tool_calls;
  if (name == "oracle_efc") return m.efc_oracle;
  if (name == "estimated_efc") return m.efc_estimated;
  if (name == "stable_efc") return m.efc_stable;
  if (name == "nrs_efc") return m.efc_nrs;
  double d = demand_product(m.demand, w);
  if (d <= 0) fail("nonpositive-demand", "demand product must be > 0");
  if (name == "oracle_efc_dtask") return m.efc_oracle / d;
  if (name == "estimated_efc_dtask") return m.efc_estimated / d;
  if (name == "stable_efc_dtask") return m.efc_stable / d;
  if (name == "nrs_efc_dtask") return m.efc_nrs / d;
  fail("unknown-factor", "no coordinate named " + name);
}

struct CoordinateSet {
  double x_oracle = 0, x_estimated = 0;    // EFC / D_task
  double eta_oracle = 0, eta_estimated = 0;  // EFC / C_raw
  double tokens = 0, tool_calls = 0, operations = 0, wall_time = 0, raw_cost = 0;
};

/// X = EFC/D, eta = EFC/C_raw, plus the five raw scalars.
inline CoordinateSet compute_coordinates(const RunMetrics& m, const DemandExponents* w = nullptr) {
  double d = demand_product(m.demand, w);
  if (!(d > 0)) fail("nonpositive-denominator", "D_task must be > 0");
  if (!(m.raw_cost > 0)) fail("nonpositive-denominator", "C_raw must be > 0");
  CoordinateSet c;
  c.x_oracle = m.efc_oracle / d;
  c.x_estimated = m.efc_estimated / d;
  c.eta_oracle = m.efc_oracle / m.raw_cost;
  c.eta_estimated = m.efc_estimated / m.raw_cost;
  c.tokens = m.tokens;
  c.tool_calls = m.tool_calls;
  c.operations = m.operations;
  c.wall_time = m.wall_time;
  c.raw_cost = m.raw_cost;
  return c;
}

// ---------------------------------------------------------------------------
// Aggregation: per-model replicate means, then unweighted cross-model means
// ---------------------------------------------------------------------------

inline constexpr std::array<const char*, 9> kSasProxyNames = {
    "model_strength",   "tool_count", "agent_count",      "overhead",
    "coordination_eff", "redundancy", "error_amplification", "effective_actions",
    "single_agent_baseline"};

struct GroupCell {
  std::string family, harness_id, model_id, budget_level;  // model "*" after averaging
  double failure = 0;  // Ē
  double z = 0;        // mean predictor value
  std::array<double, 9> proxies{};
  std::size_t n_runs = 0;
  bool held_out = false;
};

/// Two-stage aggregation of failure, a scalar predictor, and the SAS proxies.
/// keep_model retains per-model cells (used for the model holdout axis).
inline std::vector<GroupCell> aggregate_cells(
    const std::vector<RunMetrics>& metrics,
    const std::function<double(const RunMetrics&)>& z_of, bool keep_model = false) {
  if (metrics.empty()) fail("no-runs", "cannot aggregate an empty run set");
  struct Acc {
    double failure = 0, z = 0;
    std::array<double, 9> proxies{};
    std::size_t n = 0;
  };
  // (family, harness, budget) -> model -> accumulator
  std::map<std::tuple<std::string, std::string, std::string>, std::map<std::string, Acc>> groups;
  for (const auto& m : metrics) {
    Acc& a = groups[{m.family, m.harness_id, m.budget_level}][m.model_id];
    a.failure += 1.0 - m.success;
    a.z += z_of(m);
    a.proxies[0] += m.capability;
    a.proxies[1] += m.tool_calls;
    a.proxies[2] += 1.0;  // agent count
    a.proxies[3] += m.overhead;
    a.proxies[4] += m.referenced_frac;
    a.proxies[5] += m.redundancy;
    a.proxies[6] += m.worsen_frac;
    a.proxies[7] += m.effective_actions;
    // proxies[8] (single-agent baseline) filled after aggregation
    a.n += 1;
  }

  std::vector<GroupCell> cells;
  for (const auto& [key, by_model] : groups) {
    if (keep_model) {
      for (const auto& [model, acc] : by_model) {
        GroupCell c;
        std::tie(c.family, c.harness_id, c.budget_level) = key;
        c.model_id = model;
        double n = static_cast<double>(acc.n);
        c.failure = acc.failure / n;
        c.z = acc.z / n;
        for (std::size_t i = 0; i < 9; ++i) c.proxies[i] = acc.proxies[i] / n;
        c.n_runs = acc.n;
        cells.push_back(c);
      }
    } else {
      GroupCell c;
      std::tie(c.family, c.harness_id, c.budget_level) = key;
      c.model_id = "*";
      double k = static_cast<double>(by_model.size());
      for (const auto& [model, acc] : by_model) {
        double n = static_cast<double>(acc.n);
        c.failure += acc.failure / n / k;
        c.z += acc.z / n / k;
        for (std::size_t i = 0; i < 9; ++i) c.proxies[i] += acc.proxies[i] / n / k;
        c.n_runs += acc.n;
      }
      cells.push_back(c);
    }
  }

  // single-agent baseline: per-family H0 failure, falling back to the pooled mean
  std::map<std::string, std::pair<double, int>> h0_by_family;
  double pooled = 0;
  for (const auto& c : cells) {
    pooled += c.failure;
    if (c.harness_id == "H0") {
      h0_by_family[c.family].first += c.failure;
      h0_by_family[c.family].second += 1;
    }
  }
  pooled /= static_cast<double>(cells.size());
  for (auto& c : cells) {
    auto it = h0_by_family.find(c.family);
    c.proxies[8] = it != h0_by_family.end() && it->second.second > 0
                       ? it->second.first / it->second.second
                       : pooled;
  }
  return cells;
}

// ---------------------------------------------------------------------------
// Power-law failure model E(z) = E_inf + A z^-alpha
// ---------------------------------------------------------------------------

struct PowerLawFit {
  double e_inf = 0;  // [0,1]
  double a = 1;      // (0,10]
  double alpha = 1;  // (0,5]
  double sse = 0;
  double r2 = 0;
  double mae = 0;

  double predict(double z) const {
    return clamp01(e_inf + a * std::pow(std::max(z, 1e-12), -alpha));
  }
};

namespace detail {

inline constexpr double kAMin = 1e-6, kAMax = 10.0;
inline constexpr double kAlphaMin = 1e-3, kAlphaMax = 5.0;

inline double power_law_sse(const std::vector<std::pair<double, double>>& pts, double e_inf,
                            double a, double alpha) {
  double sse = 0;
  for (const auto& [z, f] : pts) {
    double pred = clamp01(e_inf + a * std::pow(z, -alpha));
    sse += (f - pred) * (f - pred);
  }
  return sse;
}

struct PlCandidate {
  double sse = 1e300, e_inf = 0, a = kAMin, alpha = kAlphaMin;
  // deterministic tie-break: smaller alpha, then smaller A
  bool better_than(const PlCandidate& o) const {
    if (sse != o.sse) return sse < o.sse;
    if (alpha != o.alpha) return alpha < o.alpha;
    return a < o.a;
  }
};

}  // namespace detail

/// Deterministic box-constrained fit: coarse multi-start grid, a profiled
/// alpha search (the (E_inf, A) pair is linear given alpha and solved in
/// closed form, then projected into its boxes), and cyclic 1-D coordinate
/// polish to relative tolerance 1e-9.
inline PowerLawFit fit_power_law(const std::vector<std::pair<double, double>>& points) {
  using detail::kAlphaMax;
  using detail::kAlphaMin;
  using detail::kAMax;
  using detail::kAMin;
  if (points.size() < 4) fail("insufficient-points", "need >= 4 (z, failure) points");
  double zmin = 1e300, zmax = -1e300;
  for (const auto& [z, f] : points) {
    if (!(z > 0) || !std::isfinite(z) || !std::isfinite(f)) {
      fail("degenerate-predictor", "z must be positive and finite");
    }
    zmin = std::min(zmin, z);
    zmax = std::max(zmax, z);
  }
  if (!(zmax > zmin)) fail("degenerate-predictor", "z has zero variance");

  // best (e_inf, a) for a fixed alpha: unconstrained least squares on the
  // unclamped model, projected into the boxes
  auto linear_pair = [&](double alpha) {
    double su = 0, suu = 0, sf = 0, suf = 0;
    double n = static_cast<double>(points.size());
    for (const auto& [z, f] : points) {
      double u = std::pow(z, -alpha);
      su += u;
      suu += u * u;
      sf += f;
      suf += u * f;
    }
    double det = n * suu - su * su;
    double a = det != 0 ? (n * suf - su * sf) / det : kAMin;
    double e = (sf - a * su) / n;
    a = std::min(kAMax, std::max(kAMin, a));
    e = clamp01(e);
    return std::pair<double, double>(e, a);
  };

  detail::PlCandidate best;
  const int ne = 13, na = 13, nal = 13;
  for (int i = 0; i < ne; ++i) {
    double e = static_cast<double>(i) / (ne - 1);
    for (int j = 0; j < na; ++j) {
      double a = kAMin * std::pow(kAMax / kAMin, static_cast<double>(j) / (na - 1));
      for (int k = 0; k < nal; ++k) {
        double al = kAlphaMin + (kAlphaMax - kAlphaMin) * static_cast<double>(k) / (nal - 1);
        detail::PlCandidate c{detail::power_law_sse(points, e, a, al), e, a, al};
        if (c.better_than(best)) best = c;
      }
    }
  }

  // profiled alpha scan: shrink a bracket around the best alpha, with the
  // linear pair re-solved at every candidate
  {
    double lo = kAlphaMin, hi = kAlphaMax;
    double center = best.alpha, width = hi - lo;
    for (int iter = 0; iter < 24; ++iter) {
      const int n = 33;
      double l = std::max(lo, center - width / 2), r = std::min(hi, center + width / 2);
      for (int i = 0; i < n; ++i) {
        double al = l + (r - l) * static_cast<double>(i) / (n - 1);
        auto [e, a] = linear_pair(al);
        detail::PlCandidate c{detail::power_law_sse(points, e, a, al), e, a, al};
        if (c.better_than(best)) best = c;
      }
      center = best.alpha;
      width *= 0.3;
    }
  }

  auto refine_1d = [&](double lo, double hi, double cur,
                       const std::function<double(double)>& sse_of) {
    double span = hi - lo;
    double center = cur, best_v = cur, best_sse = sse_of(cur);
    double width = span;
    for (int iter = 0; iter < 18; ++iter) {
      const int n = 25;
      double l = std::max(lo, center - width / 2), r = std::min(hi, center + width / 2);
      for (int i = 0; i < n; ++i) {
        double v = l + (r - l) * static_cast<double>(i) / (n - 1);
        double s = sse_of(v);
        if (s < best_sse || (s == best_sse && v < best_v)) {
          best_sse = s;
          best_v = v;
        }
      }
      center = best_v;
      width *= 0.22;
    }
    return best_v;
  };

  for (int cycle = 0; cycle < 60; ++cycle) {
    detail::PlCandidate prev = best;
    best.e_inf = refine_1d(0.0, 1.0, best.e_inf, [&](double v) {
      return detail::power_law_sse(points, v, best.a, best.alpha);
    });
    best.a = refine_1d(kAMin, kAMax, best.a, [&](double v) {
      return detail::power_law_sse(points, best.e_inf, v, best.alpha);
    });
    best.alpha = refine_1d(kAlphaMin, kAlphaMax, best.alpha, [&](double v) {
      return detail::power_law_sse(points, best.e_inf, best.a, v);
    });
    auto [pe, pa] = linear_pair(best.alpha);
    detail::PlCandidate profiled{detail::power_law_sse(points, pe, pa, best.alpha), pe, pa,
                                 best.alpha};
    best.sse = detail::power_law_sse(points, best.e_inf, best.a, best.alpha);
    if (profiled.better_than(best)) best = profiled;
    double rel = std::abs(best.e_inf - prev.e_inf) / std::max(1e-12, std::abs(prev.e_inf) + 1e-9) +
                 std::abs(best.a - prev.a) / std::max(1e-12, std::abs(prev.a)) +
                 std::abs(best.alpha - prev.alpha) / std::max(1e-12, std::abs(prev.alpha));
    if (cycle > 1 && rel < 1e-9) break;
  }

  PowerLawFit fit;
  fit.e_inf = best.e_inf;
  fit.a = best.a;
  fit.alpha = best.alpha;
  fit.sse = best.sse;
  std::vector<double> obs, pred;
  for (const auto& [z, f] : points) {
    obs.push_back(f);
    pred.push_back(fit.predict(z));
  }
  double mean = mean_of(obs);
  double sst = 0;
  for (double o : obs) sst += (o - mean) * (o - mean);
  double sse_c = 0;
  for (std::size_t i = 0; i < obs.size(); ++i) sse_c += (obs[i] - pred[i]) * (obs[i] - pred[i]);
  fit.r2 = sst > 0 ? 1.0 - sse_c / sst : 0.0;
  fit.mae = mae(obs, pred);
  return fit;
}

// ---------------------------------------------------------------------------
// SAS baseline: linear fixed-effect regression over nine system proxies
// ---------------------------------------------------------------------------

struct SasModel {
  double intercept = 0;
  std::array<double, 9> coefficients{};
  std::vector<std::string> dropped;  // collinear columns removed with a diagnostic
  double train_r2 = 0;

  double predict(const std::array<double, 9>& proxies) const {
    double s = intercept;
    for (std::size_t i = 0; i < 9; ++i) s += coefficients[i] * proxies[i];
    return clamp01(s);
  }
};

inline SasModel fit_sas(const std::vector<GroupCell>& cells) {
  if (cells.size() < 18) fail("insufficient-calibration", "SAS needs >= 2x proxy-count cells");
  for (const auto& c : cells) {
    if (c.held_out) fail("protocol-violated", "held-out cell leaked into SAS fitting");
  }
  const std::size_t n = cells.size();
  Eigen::MatrixXd full(n, 10);
  Eigen::VectorXd y(n);
  for (std::size_t r = 0; r < n; ++r) {
    full(r, 0) = 1.0;
    for (std::size_t c = 0; c < 9; ++c) full(r, c + 1) = cells[r].proxies[c];
    y(r) = cells[r].failure;
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(full);
  qr.setThreshold(1e-8);
  Eigen::Index rank = qr.rank();

  SasModel model;
  std::vector<int> kept;  // column ids into `full`
  if (rank < 10) {
    const auto& perm = qr.colsPermutation().indices();
    std::vector<bool> keep(10, false);
    for (Eigen::Index k = 0; k < rank; ++k) keep[static_cast<std::size_t>(perm(k))] = true;
    keep[0] = true;  // always keep the intercept
    for (int c = 0; c < 10; ++c) {
      if (keep[static_cast<std::size_t>(c)]) {
        kept.push_back(c);
      } else {
        model.dropped.push_back(kSasProxyNames[static_cast<std::size_t>(c - 1)]);
      }
    }
  } else {
    for (int c = 0; c < 10; ++c) kept.push_back(c);
  }

  Eigen::MatrixXd design(n, static_cast<Eigen::Index>(kept.size()));
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < kept.size(); ++c) design(r, c) = full(r, kept[c]);
  }
  Eigen::VectorXd beta = design.colPivHouseholderQr().solve(y);
  for (std::size_t c = 0; c < kept.size(); ++c) {
    if (kept[c] == 0) {
      model.intercept = beta(static_cast<Eigen::Index>(c));
    } else {
      model.coefficients[static_cast<std::size_t>(kept[c] - 1)] =
          beta(static_cast<Eigen::Index>(c));
    }
  }

  std::vector<double> obs, pred;
  for (const auto& c : cells) {
    obs.push_back(c.failure);
    pred.push_back(model.predict(c.proxies));
  }
  double mean = mean_of(obs);
  double sst = 0, sse = 0;
  for (std::size_t i = 0; i < obs.size(); ++i) {
    sst += (obs[i] - mean) * (obs[i] - mean);
    sse += (obs[i] - pred[i]) * (obs[i] - pred[i]);
  }
  model.train_r2 = sst > 0 ? 1.0 - sse / sst : 0.0;
  return model;
}

// ---------------------------------------------------------------------------
// Coordinate evaluation over aggregated cells
// ---------------------------------------------------------------------------

struct CoordinateFit {
  std::string coordinate;
  PowerLawFit fit;
  double r2 = 0;   // on the evaluated cells
  double mae = 0;
  std::size_t n_cells = 0;
};

/// Aggregates metrics on the cross-model cells, median-normalizes z, fits the
/// power law, and reports fit quality for one named coordinate.
inline CoordinateFit evaluate_coordinate(const std::vector<RunMetrics>& metrics,
                                         const std::string& name,
                                         const DemandExponents* w = nullptr) {
  auto cells = aggregate_cells(
      metrics, [&](const RunMetrics& m) { return coordinate_value(m, name, w); });
  std::vector<double> z;
  std::vector<std::pair<double, double>> points;
  for (const auto& c : cells) z.push_back(c.z);
  median_normalize(z);
  for (std::size_t i = 0; i < cells.size(); ++i) points.emplace_back(z[i], cells[i].failure);
  CoordinateFit out;
  out.coordinate = name;
  out.fit = fit_power_law(points);
  out.r2 = out.fit.r2;
  out.mae = out.fit.mae;
  out.n_cells = cells.size();
  return out;
}

/// SAS evaluated directly as a multivariate failure predictor.
inline CoordinateFit evaluate_sas(const std::vector<RunMetrics>& metrics) {
  auto cells = aggregate_cells(metrics, [](const RunMetrics&) { return 0.0; });
  SasModel model = fit_sas(cells);
  std::vector<double> obs, pred;
  for (const auto& c : cells) {
    obs.push_back(c.failure);
    pred.push_back(model.predict(c.proxies));
  }
  CoordinateFit out;
  out.coordinate = "sas";
  out.r2 = model.train_r2;
  out.mae = mae(obs, pred);
  out.n_cells = cells.size();
  return out;
}

// ---------------------------------------------------------------------------
// Fitted demand exponents (coordinate descent; nested power-law refits)
// ---------------------------------------------------------------------------

struct DemandFitResult {
  DemandExponents exponents;
  double calibration_mae = 0;
};

/// Coordinate descent over w in [-1,2]^5: one full sweep at step 0.25 per
/// coordinate in order (L, H, S, N, V), then two refinement passes at 0.05.
/// Objective: calibration MAE of the power-law fit on EFC / prod(factor^w).
inline DemandFitResult fit_demand_exponents(const std::vector<RunMetrics>& calibration,
                                            const std::string& efc_coordinate) {
  auto cells_for = [&](const DemandExponents& w) {
    return aggregate_cells(calibration, [&](const RunMetrics& m) {
      return coordinate_value(m, efc_coordinate, nullptr) / demand_product(m.demand, &w);
    });
  };
  {
    auto probe = aggregate_cells(calibration, [](const RunMetrics&) { return 0.0; });
    if (probe.size() < 8) fail("insufficient-calibration", "need >= 8 calibration cells");
  }
  auto objective = [&](const DemandExponents& w) {
    auto cells = cells_for(w);
    std::vector<double> z;
    for (const auto& c : cells) z.push_back(c.z);
    median_normalize(z);
    std::vector<std::pair<double, double>> pts;
    for (std::size_t i = 0; i < cells.size(); ++i) pts.emplace_back(z[i], cells[i].failure);
    return fit_power_law(pts).mae;
  };

  DemandExponents w;  // start at the hand-designed all-ones form
  double best = objective(w);
  auto scan_coordinate = [&](double* slot, double lo, double hi, double step) {
    for (double v = lo; v <= hi + 1e-12; v += step) {
      double saved = *slot;
      *slot = v;
      double m = objective(w);
      if (m < best) {
        best = m;
      } else {
        *slot = saved;
      }
    }
  };
  std::array<double*, 5> slots = {&w.w_steps, &w.w_tool, &w.w_state, &w.w_noise, &w.w_oracle};
  for (double* s : slots) scan_coordinate(s, -1.0, 2.0, 0.25);
  for (int pass = 0; pass < 2; ++pass) {
    for (double* s : slots) {
      double lo = std::max(-1.0, *s - 0.2), hi = std::min(2.0, *s + 0.2);
      scan_coordinate(s, lo, hi, 0.05);
    }
  }
  return {w, best};
}

// ---------------------------------------------------------------------------
// Held-out evaluation
// ---------------------------------------------------------------------------

enum class HoldoutAxis { task_family, harness, model, combined };

inline const char* to_string(HoldoutAxis a) {
  switch (a) {
    case HoldoutAxis::task_family: return "task_family";
    case HoldoutAxis::harness: return "harness";
    case HoldoutAxis::model: return "model";
    case HoldoutAxis::combined: return "combined";
  }
  return "task_family";
}

struct HoldoutSplit {
  std::string held_out_group;
  double mae = 0;
  double r2 = 0;
  bool r2_defined = false;
  std::size_t n_eval_cells = 0;
};

struct HoldoutReport {
  std::string coordinate;
  HoldoutAxis axis = HoldoutAxis::task_family;
  std::vector<HoldoutSplit> splits;
  double split_mae = 0;  // average of per-split MAEs
  double split_r2 = 0;   // average over splits where defined
  // success-space calibration pairs (predicted 1-E vs observed 1-E)
  std::vector<std::pair<double, double>> success_calibration;
};

struct HoldoutOptions {
  bool fitted_demand = false;  // refit demand exponents on each training split
  double kappa = 10.0;
};

namespace detail {

inline std::string group_of(const RunMetrics& m, HoldoutAxis axis) {
  switch (axis) {
    case HoldoutAxis::task_family: return m.family;
    case HoldoutAxis::harness: return m.harness_id;
    case HoldoutAxis::model: return m.model_id;
    case HoldoutAxis::combined: return m.family + "|" + m.harness_id;
  }
  return m.family;
}

}  // namespace detail

/// Leave-one-group-out along the axis. Every fit (power law, SAS, demand
/// exponents) sees only the complement; held-out cells are tainted and
/// asserted never to enter a fit.
inline HoldoutReport holdout_evaluate(const std::vector<RunMetrics>& metrics, HoldoutAxis axis,
                                      const std::string& coordinate,
                                      const HoldoutOptions& opt = {}) {
  std::set<std::string> groups;
  for (const auto& m : metrics) groups.insert(detail::group_of(m, axis));
  if (groups.size() < 2) fail("nothing-to-hold-out", "axis has a single group");

  HoldoutReport report;
  report.coordinate = coordinate;
  report.axis = axis;

  for (const auto& g : groups) {
    std::vector<RunMetrics> train, eval;
    for (const auto& m : metrics) {
      (detail::group_of(m, axis) == g ? eval : train).push_back(m);
    }
    if (train.empty() || eval.empty()) continue;

    DemandExponents fitted;
    const DemandExponents* w = nullptr;
    bool uses_demand = coordinate.find("dtask") != std::string::npos;
    if (opt.fitted_demand && uses_demand) {
      std::string base = coordinate.substr(0, coordinate.find("_dtask"));
      fitted = fit_demand_exponents(train, base).exponents;
      w = &fitted;
    }

    std::vector<double> obs, pred;
    if (coordinate == "sas") {
      auto train_cells = aggregate_cells(train, [](const RunMetrics&) { return 0.0; });
      SasModel sas = fit_sas(train_cells);
      auto eval_cells = aggregate_cells(eval, [](const RunMetrics&) { return 0.0; });
      for (auto& c : eval_cells) c.held_out = true;
      for (const auto& c : eval_cells) {
        obs.push_back(c.failure);
        pred.push_back(sas.predict(c.proxies));
      }
    } else if (coordinate == "observed") {
      auto eval_cells = aggregate_cells(eval, [](const RunMetrics&) { return 0.0; });
      for (const auto& c : eval_cells) {
        obs.push_back(c.failure);
        pred.push_back(c.failure);
      }
    } else {
      auto z_of = [&](const RunMetrics& m) { return coordinate_value(m, coordinate, w); };
      auto train_cells = aggregate_cells(train, z_of);
      std::vector<double> z;
      for (const auto& c : train_cells) z.push_back(c.z);
      double med = median_normalize(z);
      std::vector<std::pair<double, double>> pts;
      for (std::size_t i = 0; i < train_cells.size(); ++i) {
        if (train_cells[i].held_out) fail("protocol-violated", "tainted cell in training fit");
        pts.emplace_back(z[i], train_cells[i].failure);
      }
      PowerLawFit fit = fit_power_law(pts);
      auto eval_cells = aggregate_cells(eval, z_of);
      for (auto& c : eval_cells) c.held_out = true;
      for (const auto& c : eval_cells) {
        obs.push_back(c.failure);
        pred.push_back(fit.predict(std::max(1e-6, c.z / med)));
      }
    }

    HoldoutSplit split;
    split.held_out_group = g;
    split.n_eval_cells = obs.size();
    split.mae = mae(obs, pred);
    double mean = mean_of(obs);
    double sst = 0, sse = 0;
    for (std::size_t i = 0; i < obs.size(); ++i) {
      sst += (obs[i] - mean) * (obs[i] - mean);
      sse += (obs[i] - pred[i]) * (obs[i] - pred[i]);
    }
    if (sst > 0 && obs.size() >= 2) {
      split.r2 = 1.0 - sse / sst;
      split.r2_defined = true;
    }
    for (std::size_t i = 0; i < obs.size(); ++i) {
      report.success_calibration.emplace_back(1.0 - pred[i], 1.0 - obs[i]);
    }
    report.splits.push_back(split);
  }

  std::vector<double> maes, r2s;
  for (const auto& s : report.splits) {
    maes.push_back(s.mae);
    if (s.r2_defined) r2s.push_back(s.r2);
  }
  report.split_mae = mae_split_average(maes);
  report.split_r2 = r2s.empty() ? 0.0 : mean_of(r2s);
  return report;
}

}  // namespace efclab
