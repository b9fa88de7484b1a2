// efclab: agent-harness scaling workbench CLI.
//
// Stage subcommands (gen-tasks, simulate, calibrate, score, fit, holdout,
// freeze, prospective, score-external) are independently runnable on prior
// stage outputs; `report --preset NAME` runs a full experiment preset end to
// end. EFC_LAB_DETERMINISTIC=1 forces --jobs 1 for bit-exact CI runs.

#include <CLI11.hpp>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "efclab/efclab.hpp"

namespace {

using namespace efclab;

struct CommonArgs {
  std::string config_path;
  std::string out_dir = "out";
  std::uint64_t seed = 0;
  bool seed_set = false;
  int replicates = 0;
  std::string budget_levels;
  int jobs = 0;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "JSON config file (defaults apply per key)");
  cmd->add_option("--out", args.out_dir, "output directory");
  cmd->add_option("--seed", args.seed, "master seed (overrides config)")
      ->each([&](const std::string&) { args.seed_set = true; });
  cmd->add_option("--replicates", args.replicates, "replicates per cell (overrides config)");
  cmd->add_option("--budget-levels", args.budget_levels,
                  "budget levels as label:mult,... e.g. x1:1,x2:2,x4:4,x8:8");
  cmd->add_option("--jobs", args.jobs, "worker threads for simulation");
}

SuiteConfig resolve_config(const CommonArgs& args) {
  SuiteConfig cfg = load_config(args.config_path);
  if (args.seed_set) cfg.master_seed = args.seed;
  if (args.replicates > 0) cfg.replicates = args.replicates;
  if (args.jobs > 0) cfg.jobs = args.jobs;
  if (!args.budget_levels.empty()) {
    cfg.budget_levels.clear();
    std::stringstream ss(args.budget_levels);
    std::string item;
    while (std::getline(ss, item, ',')) {
      auto colon = item.find(':');
      if (colon == std::string::npos) fail("invalid-config", "budget level needs label:mult");
      cfg.budget_levels.push_back({item.substr(0, colon), std::stod(item.substr(colon + 1))});
    }
  }
  const char* det = std::getenv("EFC_LAB_DETERMINISTIC");
  if (det && std::string(det) == "1") cfg.jobs = 1;
  return cfg;
}

std::vector<RunRecord> load_traces(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("invalid-config", "cannot read traces " + path);
  IngestResult res = ingest_traces(in);
  for (const auto& d : res.diagnostics) {
    std::cerr << "[ingest] line " << d.line << " " << d.code << ": " << d.message << "\n";
  }
  return std::move(res.runs);
}

SuiteResult rebuild_suite(const SuiteConfig& cfg, std::vector<RunRecord> runs) {
  SuiteResult suite;
  suite.tasks = generate_suite_tasks(cfg);
  for (std::size_t i = 0; i < suite.tasks.size(); ++i) {
    suite.task_index[suite.tasks[i].task_id] = i;
  }
  suite.runs = std::move(runs);
  suite.norm = layer_normalization(suite.runs);
  fill_raw_costs(suite.runs, suite.norm);
  return suite;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"efclab: effective-feedback-compute scaling workbench"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string preset = "controlled_scaling";
  std::string traces_path, scores_path, estimator_path, protocol_path, demand_path;
  std::string coordinates_csv;

  auto* gen = app.add_subcommand("gen-tasks", "generate the task manifest");
  add_common(gen, args);
  auto* sim = app.add_subcommand("simulate", "simulate the configured suite to traces.jsonl");
  add_common(sim, args);
  auto* cal = app.add_subcommand("calibrate", "fit the event-level estimator from traces");
  add_common(cal, args);
  cal->add_option("--traces", traces_path, "canonical traces.jsonl")->required();
  auto* score = app.add_subcommand("score", "score traces into per-run metrics (scores.csv)");
  add_common(score, args);
  score->add_option("--traces", traces_path, "canonical traces.jsonl")->required();
  score->add_option("--estimator", estimator_path, "estimator.json")->required();
  auto* fit = app.add_subcommand("fit", "fit scaling coordinates from scores.csv");
  add_common(fit, args);
  fit->add_option("--scores", scores_path, "scores.csv from the score stage")->required();
  fit->add_option("--coordinates", coordinates_csv, "comma-separated coordinate list");
  auto* hold = app.add_subcommand("holdout", "held-out evaluation along the four axes");
  add_common(hold, args);
  hold->add_option("--scores", scores_path, "scores.csv")->required();
  auto* frz = app.add_subcommand("freeze", "freeze the prediction protocol from scores.csv");
  add_common(frz, args);
  frz->add_option("--scores", scores_path, "pre-freeze scores.csv")->required();
  frz->add_option("--estimator", estimator_path, "estimator.json")->required();
  auto* pros = app.add_subcommand("prospective", "evaluate a fresh post-freeze batch");
  add_common(pros, args);
  pros->add_option("--protocol", protocol_path, "protocol.json from freeze")->required();
  pros->add_option("--estimator", estimator_path, "estimator.json")->required();
  auto* ext = app.add_subcommand("score-external", "score externally recorded canonical traces");
  add_common(ext, args);
  ext->add_option("--traces", traces_path, "canonical traces.jsonl")->required();
  ext->add_option("--estimator", estimator_path, "estimator.json")->required();
  ext->add_option("--demand", demand_path, "tasks.jsonl demand manifest (optional)");
  auto* rep = app.add_subcommand("report", "run a full experiment preset end to end");
  add_common(rep, args);
  rep->add_option("--preset", preset, "one of the paper-experiment presets")
      ->check(CLI::IsMember(preset_names()));

  CLI11_PARSE(app, argc, argv);

  try {
    SuiteConfig cfg = resolve_config(args);
    PipelineContext ctx = make_context(cfg, args.out_dir);
    std::error_code ec;
    std::filesystem::create_directories(ctx.out, ec);

    if (gen->parsed()) {
      write_tasks_manifest(ctx, generate_suite_tasks(cfg));
      std::cout << "wrote " << (ctx.out / "tasks.jsonl").string() << "\n";
    } else if (sim->parsed()) {
      SuiteResult suite = run_suite(cfg);
      write_traces(ctx, suite.runs);
      write_tasks_manifest(ctx, suite.tasks);
      std::cout << "simulated " << suite.runs.size() << " runs\n";
    } else if (cal->parsed()) {
      SuiteResult suite = rebuild_suite(cfg, load_traces(traces_path));
      EstimatorParams est = calibrate_on_suite(suite, cfg.kappa);
      atomic_write_file(ctx.out / "estimator.json", estimator_to_json(est).dump(2) + "\n");
      std::cout << "estimator rmse=" << est.training_rmse << "\n";
    } else if (score->parsed()) {
      SuiteResult suite = rebuild_suite(cfg, load_traces(traces_path));
      EstimatorParams est = load_estimator(estimator_path);
      auto metrics = suite_metrics(suite, est, cfg);
      write_metrics_csv(ctx, metrics);
      std::cout << "scored " << metrics.size() << " runs\n";
    } else if (fit->parsed()) {
      std::ifstream in(scores_path);
      if (!in) fail("invalid-config", "cannot read scores " + scores_path);
      auto metrics = metrics_from_csv(in);
      std::vector<std::string> coords = fig1_coordinates();
      if (!coordinates_csv.empty()) {
        coords.clear();
        std::stringstream ss(coordinates_csv);
        std::string c;
        while (std::getline(ss, c, ',')) coords.push_back(c);
      }
      write_fit_outputs(ctx, fit_coordinates(metrics, coords));
      std::cout << "fitted " << coords.size() << " coordinates\n";
    } else if (hold->parsed()) {
      std::ifstream in(scores_path);
      if (!in) fail("invalid-config", "cannot read scores " + scores_path);
      auto metrics = metrics_from_csv(in);
      CsvTable table;
      table.comment = ctx.comment;
      table.header = {"axis", "coordinate", "split_mae", "split_r2", "n_splits"};
      for (HoldoutAxis axis : {HoldoutAxis::task_family, HoldoutAxis::harness, HoldoutAxis::model,
                               HoldoutAxis::combined}) {
        for (const std::string& coord :
             {std::string("raw_tokens"), std::string("sas"), std::string("oracle_efc_dtask"),
              std::string("estimated_efc_dtask")}) {
          HoldoutOptions opt;
          opt.fitted_demand = coord == "estimated_efc_dtask";
          HoldoutReport r = holdout_evaluate(metrics, axis, coord, opt);
          table.rows.push_back({to_string(axis), coord, csv_num(r.split_mae),
                                csv_num(r.split_r2), std::to_string(r.splits.size())});
        }
      }
      atomic_write_file(ctx.out / "holdout.csv", table.render());
      std::cout << "wrote " << (ctx.out / "holdout.csv").string() << "\n";
    } else if (frz->parsed()) {
      std::ifstream in(scores_path);
      if (!in) fail("invalid-config", "cannot read scores " + scores_path);
      auto metrics = metrics_from_csv(in);
      EstimatorParams est = load_estimator(estimator_path);
      DemandFitResult fitted = fit_demand_exponents(metrics, "nrs_efc");
      FrozenProtocol protocol = freeze_protocol(cfg.kappa, est, fitted.exponents,
                                                detail::prospective_coordinates(), metrics);
      atomic_write_file(ctx.out / "protocol.json", protocol_to_json(protocol).dump() + "\n");
      std::cout << "fingerprint=" << protocol.fingerprint << "\n";
    } else if (pros->parsed()) {
      std::ifstream in(protocol_path);
      if (!in) fail("missing-params", "cannot read protocol " + protocol_path);
      FrozenProtocol protocol = protocol_from_json(json::parse(in));
      EstimatorParams est = load_estimator(estimator_path);
      StatusGenConfig post_cfg;
      post_cfg.master_seed = cfg.master_seed ^ 0xABCDEF1234567ull;
      post_cfg.batch_tag = 1;
      StatusGenBatch post = generate_status_batch(post_cfg);
      auto post_metrics = status_batch_metrics(post, est, post_cfg.models, cfg.kappa);
      ProspectiveReport report =
          prospective_evaluate(protocol, cfg.kappa, est, protocol.exponents, post_metrics);
      CsvTable summary;
      summary.comment = ctx.comment + " fingerprint=" + report.fingerprint;
      summary.header = {"coordinate", "r2", "mae", "n_cells"};
      for (const auto& row : report.rows) {
        summary.rows.push_back(
            {row.coordinate, csv_num(row.r2), csv_num(row.mae), std::to_string(row.n_cells)});
      }
      atomic_write_file(ctx.out / "prospective.csv", summary.render());
      std::cout << "fingerprint=" << report.fingerprint << "\n";
    } else if (ext->parsed()) {
      score_external(traces_path, estimator_path, demand_path, ctx.out, ctx.comment);
      std::cout << "wrote " << (ctx.out / "scores.csv").string() << "\n";
    } else if (rep->parsed()) {
      run_pipeline(preset, cfg, ctx.out);
      std::cout << "preset " << preset << " complete under " << ctx.out.string() << "\n";
    }
  } catch (const EfcError& e) {
    std::cerr << "error code=" << e.code() << " message=" << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error code=internal message=" << e.what() << "\n";
    return 1;
  }
  return 0;
}
