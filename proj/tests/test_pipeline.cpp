#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "efclab/pipeline.hpp"

using namespace efclab;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

SuiteConfig tiny_config(std::uint64_t seed) {
  SuiteConfig cfg = default_suite_config(seed);
  cfg.replicates = 2;
  cfg.models = {{"m-a", 0.6}, {"m-b", 0.85}};
  cfg.budget_levels = {{"x2", 2}, {"x8", 8}};
  return cfg;
}

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("efclab_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("config round-trips through JSON") {
  SuiteConfig cfg = default_suite_config(3);
  cfg.replicates = 7;
  cfg.kappa = 12.5;
  SuiteConfig back = suite_from_json(suite_to_json(cfg));
  CHECK(back.master_seed == cfg.master_seed);
  CHECK(back.replicates == 7);
  CHECK(back.kappa == 12.5);
  CHECK(back.templates.size() == cfg.templates.size());
  CHECK(config_hash(back) == config_hash(cfg));
}

TEST_CASE("metrics CSV round-trips") {
  SuiteConfig cfg = tiny_config(11);
  SuiteResult suite = run_suite(cfg);
  EstimatorParams est = calibrate_on_suite(suite, cfg.kappa);
  auto metrics = suite_metrics(suite, est, cfg);
  PipelineContext ctx = make_context(cfg, fresh_dir("metrics_csv"));
  write_metrics_csv(ctx, metrics);
  std::ifstream in(ctx.out / "scores.csv");
  auto back = metrics_from_csv(in);
  REQUIRE(back.size() == metrics.size());
  for (std::size_t i = 0; i < metrics.size(); ++i) {
    CHECK(back[i].run_id == metrics[i].run_id);
    CHECK(back[i].success == metrics[i].success);
    CHECK(back[i].efc_oracle == Catch::Approx(metrics[i].efc_oracle).epsilon(1e-9));
    CHECK(back[i].efc_nrs == Catch::Approx(metrics[i].efc_nrs).epsilon(1e-9));
  }
}

TEST_CASE("estimator params persist to JSON and back") {
  EstimatorParams p;
  p.theta0 = -0.25;
  p.theta = {1, 2, 3, 4, 5, 6, 7, 8, 9};
  p.training_rmse = 0.125;
  EstimatorParams back = estimator_from_json(estimator_to_json(p));
  CHECK(back.theta0 == p.theta0);
  CHECK(back.theta == p.theta);
  CHECK(back.training_rmse == p.training_rmse);
}

TEST_CASE("controlled_scaling preset emits the nine coordinates") {
  SuiteConfig cfg = tiny_config(21);
  fs::path out = fresh_dir("controlled");
  run_pipeline("controlled_scaling", cfg, out);
  std::string summary = slurp(out / "summary.csv");
  for (const auto& name : fig1_coordinates()) {
    INFO(name);
    CHECK(summary.find(name) != std::string::npos);
  }
  CHECK(fs::exists(out / "traces.jsonl"));
  CHECK(fs::exists(out / "scores.csv"));
  CHECK(fs::exists(out / "fits.csv"));
  CHECK(fs::exists(out / "oracle_efc.svg"));
  // comment line carries seed and config hash
  CHECK(summary.rfind("# master_seed=21", 0) == 0);
}

TEST_CASE("identical config and seed reproduce byte-identical artifacts") {
  SuiteConfig cfg = tiny_config(33);
  fs::path a = fresh_dir("det_a"), b = fresh_dir("det_b");
  run_pipeline("controlled_scaling", cfg, a);
  run_pipeline("controlled_scaling", cfg, b);
  for (const char* name : {"summary.csv", "fits.csv", "scores.csv", "traces.jsonl"}) {
    INFO(name);
    CHECK(slurp(a / name) == slurp(b / name));
  }
  // different worker counts must not change a single byte either
  SuiteConfig threaded = cfg;
  threaded.jobs = 4;
  fs::path c = fresh_dir("det_c");
  run_pipeline("controlled_scaling", threaded, c);
  CHECK(slurp(a / "summary.csv") == slurp(c / "summary.csv"));
}

TEST_CASE("unknown preset and unwritable output fail loudly without partial files") {
  SuiteConfig cfg = tiny_config(5);
  CHECK_THROWS_AS(run_pipeline("no_such_preset", cfg, fresh_dir("bad_preset")), EfcError);

  // a regular file as a path component makes the output dir uncreatable,
  // which holds even when the test runs as root
  fs::path base = fresh_dir("locked");
  std::ofstream(base / "blocker.txt") << "x";
  fs::path locked = base / "blocker.txt" / "out";
  bool failed = false;
  try {
    run_pipeline("controlled_scaling", cfg, locked);
  } catch (const EfcError&) {
    failed = true;
  } catch (const fs::filesystem_error&) {
    failed = true;
  }
  CHECK(failed);
  CHECK_FALSE(fs::exists(locked / "summary.csv"));
  CHECK_FALSE(fs::exists(locked / "traces.jsonl"));
}

TEST_CASE("score-external matches in-pipeline scoring on our own traces") {
  SuiteConfig cfg = tiny_config(44);
  fs::path out = fresh_dir("ext_src");
  SuiteResult suite = run_suite(cfg);
  EstimatorParams est = calibrate_on_suite(suite, cfg.kappa);
  PipelineContext ctx = make_context(cfg, out);
  write_traces(ctx, suite.runs);
  write_tasks_manifest(ctx, suite.tasks);
  atomic_write_file(out / "estimator.json", estimator_to_json(est).dump() + "\n");

  fs::path scored = fresh_dir("ext_out");
  score_external((out / "traces.jsonl").string(), (out / "estimator.json").string(),
                 (out / "tasks.jsonl").string(), scored, "test");

  // spot check: per-run NRS totals in the CSV equal direct score_run sums
  std::string csv = slurp(scored / "scores.csv");
  RunScores direct = score_run(est, suite.runs[0]);
  std::istringstream lines(csv);
  std::string line;
  std::getline(lines, line);  // comment
  std::getline(lines, line);  // header
  std::getline(lines, line);  // first run row
  std::stringstream row(line);
  std::vector<std::string> cells;
  std::string cell;
  while (std::getline(row, cell, ',')) cells.push_back(cell);
  REQUIRE(cells.size() >= 6);
  CHECK(cells[0] == suite.runs[0].run_id);
  CHECK(std::stod(cells[5]) == Catch::Approx(direct.nrs).epsilon(1e-9));
}

TEST_CASE("score-external with a missing estimator reports missing-params") {
  fs::path out = fresh_dir("ext_missing");
  try {
    score_external("/nonexistent/traces.jsonl", "/nonexistent/estimator.json", "", out, "t");
    FAIL("expected an error");
  } catch (const EfcError& e) {
    CHECK(e.code() == "missing-params");
  }
}

TEST_CASE("a trace with only api_error checkers has zero NRS total") {
  RunRecord r;
  r.run_id = "r-api";
  r.task_id = "t";
  r.family = "rule_filter";
  r.harness_id = "H1";
  r.model_id = "m";
  r.budget_level = "x1";
  for (int i = 1; i <= 6; ++i) {
    TraceEvent e;
    e.event_index = i;
    e.event_type = i % 2 == 1 ? EventType::tool_call : EventType::checker;
    e.status = StatusKind::api_error;  // every event carries a failed API status
    e.attempt_index = 0;
    e.consistency = 0.8;
    e.reported_progress = 0.5;
    r.events.push_back(e);
  }
  EstimatorParams est;
  est.theta0 = 1.0;  // nonzero base on every event
  RunScores scores = score_run(est, r);
  CHECK(scores.estimated > 0.0);
  CHECK(scores.nrs == 0.0);  // Q = 0 annihilates every event
  CHECK(scores.stable == 0.0);
}

TEST_CASE("stage subcommand compatibility: calibrate/score on emitted traces") {
  SuiteConfig cfg = tiny_config(55);
  SuiteResult suite = run_suite(cfg);
  std::string text = emit_runs(suite.runs);
  IngestResult back = ingest_traces(text);
  REQUIRE(back.diagnostics.empty());
  // rebuilding tasks from the same config reproduces identical task ids
  auto tasks = generate_suite_tasks(cfg);
  for (const auto& run : back.runs) {
    bool found = false;
    for (const auto& t : tasks) found |= t.task_id == run.task_id;
    REQUIRE(found);
  }
}
