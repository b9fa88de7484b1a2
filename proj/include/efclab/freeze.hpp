#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "efclab/common.hpp"
#include "efclab/gates.hpp"
#include "efclab/scaling.hpp"

namespace efclab {

// ---------------------------------------------------------------------------
// Frozen prediction protocol (prospective holdout)
//
// Everything the prediction pipeline depends on is captured in one manifest:
// kappa, estimator parameters, demand exponents, the literal gate tables, fit
// settings, the coordinate list, and the pre-freeze calibration batch. The
// fingerprint is a content hash of the canonical manifest; any change to a
// frozen parameter invalidates it.
// ---------------------------------------------------------------------------

namespace detail {

inline json gate_tables_json() {
  json q, g, gnr, l, lnr;
  for (StatusKind s : {StatusKind::passed, StatusKind::assertion_error, StatusKind::runtime_error,
                       StatusKind::timeout, StatusKind::static_reject, StatusKind::api_error,
                       StatusKind::other}) {
    q[to_string(s)] = status_quality(s);
  }
  g["first_attempt"] = progress_gate({StatusKind::none, StatusKind::other, 0}, false);
  g["newly_passed"] =
      progress_gate({StatusKind::runtime_error, StatusKind::passed, 1}, false);
  g["improved"] = progress_gate({StatusKind::runtime_error, StatusKind::assertion_error, 1}, false);
  g["repeated"] =
      progress_gate({StatusKind::assertion_error, StatusKind::assertion_error, 1}, false);
  g["worsened"] = progress_gate({StatusKind::assertion_error, StatusKind::runtime_error, 1}, false);
  gnr["repeated"] =
      progress_gate({StatusKind::assertion_error, StatusKind::assertion_error, 1}, true);
  gnr["worsened"] =
      progress_gate({StatusKind::assertion_error, StatusKind::runtime_error, 1}, true);
  l["repair"] = loop_gate(EventType::repair, StatusKind::none, false);
  l["generation_passed"] = loop_gate(EventType::generation, StatusKind::passed, false);
  l["generation_other"] = loop_gate(EventType::generation, StatusKind::none, false);
  lnr["repair"] = loop_gate(EventType::repair, StatusKind::none, true);
  json out;
  out["status_quality"] = q;
  out["progress_gate"] = g;
  out["progress_gate_nr"] = gnr;
  out["loop_gate"] = l;
  out["loop_gate_nr"] = lnr;
  out["nrs_attempt_penalty"] = 0.35;
  return out;
}

inline json metrics_to_json(const RunMetrics& m) {
  json j;
  j["run_id"] = m.run_id;
  j["task_id"] = m.task_id;
  j["family"] = m.family;
  j["harness_id"] = m.harness_id;
  j["model_id"] = m.model_id;
  j["budget_level"] = m.budget_level;
  j["seed"] = m.seed;
  j["success"] = m.success;
  j["tokens"] = m.tokens;
  j["tool_calls"] = m.tool_calls;
  j["operations"] = m.operations;
  j["wall_time"] = m.wall_time;
  j["raw_cost"] = m.raw_cost;
  j["efc_oracle"] = m.efc_oracle;
  j["efc_estimated"] = m.efc_estimated;
  j["efc_stable"] = m.efc_stable;
  j["efc_nrs"] = m.efc_nrs;
  j["demand"] = m.demand;
  j["capability"] = m.capability;
  j["novelty_mean"] = m.novelty_mean;
  j["redundancy"] = m.redundancy;
  j["referenced_frac"] = m.referenced_frac;
  j["worsen_frac"] = m.worsen_frac;
  j["overhead"] = m.overhead;
  j["effective_actions"] = m.effective_actions;
  return j;
}

inline RunMetrics metrics_from_json(const json& j) {
  RunMetrics m;
  m.run_id = j.at("run_id").get<std::string>();
  m.task_id = j.at("task_id").get<std::string>();
  m.family = j.at("family").get<std::string>();
  m.harness_id = j.at("harness_id").get<std::string>();
  m.model_id = j.at("model_id").get<std::string>();
  m.budget_level = j.at("budget_level").get<std::string>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.success = j.at("success").get<int>();
  m.tokens = j.at("tokens").get<double>();
  m.tool_calls = j.at("tool_calls").get<double>();
  m.operations = j.at("operations").get<double>();
  m.wall_time = j.at("wall_time").get<double>();
  m.raw_cost = j.at("raw_cost").get<double>();
  m.efc_oracle = j.at("efc_oracle").get<double>();
  m.efc_estimated = j.at("efc_estimated").get<double>();
  m.efc_stable = j.at("efc_stable").get<double>();
  m.efc_nrs = j.at("efc_nrs").get<double>();
  auto d = j.at("demand").get<std::vector<double>>();
  for (std::size_t i = 0; i < 5 && i < d.size(); ++i) m.demand[i] = d[i];
  m.capability = j.at("capability").get<double>();
  m.novelty_mean = j.at("novelty_mean").get<double>();
  m.redundancy = j.at("redundancy").get<double>();
  m.referenced_frac = j.at("referenced_frac").get<double>();
  m.worsen_frac = j.at("worsen_frac").get<double>();
  m.overhead = j.at("overhead").get<double>();
  m.effective_actions = j.at("effective_actions").get<double>();
  return m;
}

}  // namespace detail

struct FrozenProtocol {
  double kappa = 10.0;
  EstimatorParams estimator;
  DemandExponents exponents;
  std::vector<std::string> coordinates;
  std::vector<RunMetrics> calibration;  // pre-freeze batch
  std::set<std::string> frozen_run_ids;
  std::set<std::string> frozen_task_ids;
  std::set<std::uint64_t> frozen_seeds;
  std::string fingerprint;
};

inline json protocol_manifest(const FrozenProtocol& p) {
  json j;
  j["kappa"] = p.kappa;
  j["estimator"] = {{"theta0", p.estimator.theta0},
                    {"theta", p.estimator.theta},
                    {"training_rmse", p.estimator.training_rmse}};
  j["exponents"] = p.exponents.as_array();
  j["coordinates"] = p.coordinates;
  j["gate_tables"] = detail::gate_tables_json();
  j["fit_settings"] = {{"grid", 13}, {"refine_iters", 16}, {"refine_cycles", 40},
                       {"a_box", {detail::kAMin, detail::kAMax}},
                       {"alpha_box", {detail::kAlphaMin, detail::kAlphaMax}}};
  json cal = json::array();
  for (const auto& m : p.calibration) cal.push_back(detail::metrics_to_json(m));
  j["calibration"] = cal;
  j["frozen_run_ids"] = p.frozen_run_ids;
  j["frozen_task_ids"] = p.frozen_task_ids;
  j["frozen_seeds"] = p.frozen_seeds;
  return j;
}

inline std::string protocol_fingerprint(const FrozenProtocol& p) {
  return to_hex(fnv1a64(protocol_manifest(p).dump()));
}

/// Captures the full prediction protocol plus the pre-freeze batch.
inline FrozenProtocol freeze_protocol(double kappa, const EstimatorParams& estimator,
                                      const DemandExponents& exponents,
                                      const std::vector<std::string>& coordinates,
                                      const std::vector<RunMetrics>& calibration) {
  FrozenProtocol p;
  p.kappa = kappa;
  p.estimator = estimator;
  p.exponents = exponents;
  p.coordinates = coordinates;
  p.calibration = calibration;
  for (const auto& m : calibration) {
    p.frozen_run_ids.insert(m.run_id);
    p.frozen_task_ids.insert(m.task_id);
    p.frozen_seeds.insert(m.seed);
  }
  p.fingerprint = protocol_fingerprint(p);
  return p;
}

inline json protocol_to_json(const FrozenProtocol& p) {
  json j = protocol_manifest(p);
  j["fingerprint"] = p.fingerprint;
  return j;
}

inline FrozenProtocol protocol_from_json(const json& j) {
  FrozenProtocol p;
  p.kappa = j.at("kappa").get<double>();
  p.estimator.theta0 = j.at("estimator").at("theta0").get<double>();
  auto th = j.at("estimator").at("theta").get<std::vector<double>>();
  for (std::size_t i = 0; i < 9 && i < th.size(); ++i) p.estimator.theta[i] = th[i];
  p.estimator.training_rmse = j.at("estimator").at("training_rmse").get<double>();
  auto w = j.at("exponents").get<std::vector<double>>();
  if (w.size() == 5) {
    p.exponents = {w[0], w[1], w[2], w[3], w[4]};
  }
  p.coordinates = j.at("coordinates").get<std::vector<std::string>>();
  for (const auto& c : j.at("calibration")) p.calibration.push_back(detail::metrics_from_json(c));
  p.frozen_run_ids = j.at("frozen_run_ids").get<std::set<std::string>>();
  p.frozen_task_ids = j.at("frozen_task_ids").get<std::set<std::string>>();
  p.frozen_seeds = j.at("frozen_seeds").get<std::set<std::uint64_t>>();
  p.fingerprint = j.at("fingerprint").get<std::string>();
  return p;
}

// ---------------------------------------------------------------------------
// Prospective evaluation
// ---------------------------------------------------------------------------

struct ProspectiveRow {
  std::string coordinate;
  double r2 = 0;
  double mae = 0;
  std::size_t n_cells = 0;
};

struct ProspectiveReport {
  std::string fingerprint;                // echoes the frozen manifest
  std::vector<std::string> coordinates;   // identical set as frozen
  std::vector<ProspectiveRow> rows;
};

/// Held-out prediction with everything frozen: fits come from the pre-freeze
/// calibration batch only and are applied to the new batch. Refuses tampered
/// manifests, drifted parameters, and contaminated batches.
inline ProspectiveReport prospective_evaluate(const FrozenProtocol& protocol,
                                              double current_kappa,
                                              const EstimatorParams& current_estimator,
                                              const DemandExponents& current_exponents,
                                              const std::vector<RunMetrics>& new_batch) {
  if (protocol_fingerprint(protocol) != protocol.fingerprint) {
    fail("protocol-violated", "manifest content does not match its fingerprint");
  }
  if (current_kappa != protocol.kappa || !(current_estimator == protocol.estimator) ||
      !(current_exponents == protocol.exponents)) {
    fail("protocol-violated", "a frozen parameter changed after the freeze");
  }
  for (const auto& m : new_batch) {
    if (protocol.frozen_run_ids.count(m.run_id) || protocol.frozen_seeds.count(m.seed)) {
      fail("contaminated-batch", "run " + m.run_id + " overlaps the pre-freeze batch");
    }
  }

  ProspectiveReport report;
  report.fingerprint = protocol.fingerprint;
  report.coordinates = protocol.coordinates;

  for (const auto& name : protocol.coordinates) {
    std::vector<double> obs, pred;
    if (name == "sas") {
      auto train_cells =
          aggregate_cells(protocol.calibration, [](const RunMetrics&) { return 0.0; });
      SasModel sas = fit_sas(train_cells);
      auto eval_cells = aggregate_cells(new_batch, [](const RunMetrics&) { return 0.0; });
      for (const auto& c : eval_cells) {
        obs.push_back(c.failure);
        pred.push_back(sas.predict(c.proxies));
      }
    } else {
      const DemandExponents* w =
          name.find("dtask") != std::string::npos ? &protocol.exponents : nullptr;
      auto z_of = [&](const RunMetrics& m) { return coordinate_value(m, name, w); };
      auto train_cells = aggregate_cells(protocol.calibration, z_of);
      std::vector<double> z;
      for (const auto& c : train_cells) z.push_back(c.z);
      double med = median_normalize(z);
      std::vector<std::pair<double, double>> pts;
      for (std::size_t i = 0; i < train_cells.size(); ++i) {
        pts.emplace_back(z[i], train_cells[i].failure);
      }
      PowerLawFit fit = fit_power_law(pts);
      auto eval_cells = aggregate_cells(new_batch, z_of);
      for (const auto& c : eval_cells) {
        obs.push_back(c.failure);
        pred.push_back(fit.predict(std::max(1e-6, c.z / med)));
      }
    }
    ProspectiveRow row;
    row.coordinate = name;
    row.n_cells = obs.size();
    row.mae = mae(obs, pred);
    double mean = mean_of(obs);
    double sst = 0, sse = 0;
    for (std::size_t i = 0; i < obs.size(); ++i) {
      sst += (obs[i] - mean) * (obs[i] - mean);
      sse += (obs[i] - pred[i]) * (obs[i] - pred[i]);
    }
    row.r2 = sst > 0 ? 1.0 - sse / sst : 0.0;
    report.rows.push_back(row);
  }
  return report;
}

}  // namespace efclab
