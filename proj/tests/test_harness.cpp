#include <catch2/catch_amalgamated.hpp>

#include "efclab/harness.hpp"
#include "efclab/suite.hpp"
#include "efclab/trace_io.hpp"

using namespace efclab;

TEST_CASE("harness table honours the stated orderings") {
  HarnessConfig h0 = harness_config("H0");
  CHECK(h0.interaction_depth == 0);
  CHECK(h0.tool_budget == 0.0);

  HarnessConfig h4 = harness_config("H4");
  HarnessConfig h5 = harness_config("H5");
  HarnessConfig h6 = harness_config("H6");
  CHECK(h4.budget_multiplier > h5.budget_multiplier);
  CHECK(h4.b_route < h5.b_route);
  CHECK(h4.b_verify < h5.b_verify);
  CHECK(h4.b_mem < h5.b_mem);
  CHECK(h6.interaction_depth > h5.interaction_depth);
  CHECK(h6.b_route >= h5.b_route);
  CHECK(h6.b_verify >= h5.b_verify);
  CHECK(h6.b_mem >= h5.b_mem);

  CHECK_THROWS_AS(harness_config("H9"), EfcError);
}

namespace {

TaskInstance small_task(TaskFamily fam = TaskFamily::rule_filter, std::int64_t size = 4) {
  TaskParams p;
  p.family = fam;
  p.size = size;
  p.n_tools = 4;
  p.obs_noise = 0.2;
  p.oracle_visibility = 0.5;
  return generate_task(p, 11);
}

SimRequest request(const TaskInstance& task, const std::string& harness, double capability,
                   std::uint64_t seed, double level = 4) {
  SimRequest req;
  req.task = &task;
  req.harness = harness_config(harness);
  req.model = {"m", capability};
  req.budget_level = {"x", level};
  req.seed = seed;
  return req;
}

}  // namespace

TEST_CASE("H0 produces a single generation event and no tool calls") {
  TaskInstance task = small_task();
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    RunRecord run = simulate_run(request(task, "H0", 0.8, seed));
    CHECK(run.budget.tool_calls == 0);
    REQUIRE(run.events.size() == 1);
    CHECK(run.events[0].event_type == EventType::generation);
  }
}

TEST_CASE("simulate_run is deterministic") {
  TaskInstance task = small_task(TaskFamily::state_tracking, 5);
  RunRecord a = simulate_run(request(task, "H5", 0.7, 99));
  RunRecord b = simulate_run(request(task, "H5", 0.7, 99));
  CHECK(a == b);
  RunRecord c = simulate_run(request(task, "H5", 0.7, 100));
  CHECK_FALSE(a == c);
}

TEST_CASE("zero capability with no verifier never succeeds on L >= 1 tasks") {
  TaskInstance task = small_task();
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    SimRequest req = request(task, "H5", 0.0, seed);
    req.harness.b_verify = 0.0;
    RunRecord run = simulate_run(req);
    REQUIRE(run.success == 0);
  }
}

TEST_CASE("budget ceilings are never exceeded") {
  BaseCaps caps;
  for (const std::string& hid : all_harness_ids()) {
    HarnessConfig h = harness_config(hid);
    for (double level : {1.0, 2.0, 8.0}) {
      for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        TaskInstance task = small_task(TaskFamily::needle_lookup, 12);
        SimRequest req = request(task, hid, 0.9, seed, level);
        RunRecord run = simulate_run(req);
        double m = level * h.budget_multiplier;
        CHECK(run.budget.raw_tokens <= caps.tokens * m);
        CHECK(run.budget.operations <= caps.operations * m);
        CHECK(run.budget.wall_time <= caps.wall_time * m + 1e-9);
        CHECK(run.budget.tool_calls <=
              static_cast<double>(caps.tool_calls) * m * std::max(h.tool_budget, 1e-9) + 1e-9);
      }
    }
  }
}

TEST_CASE("attempt index increments exactly on repair and generation events") {
  TaskInstance task = small_task(TaskFamily::state_tracking, 6);
  RunRecord run = simulate_run(request(task, "H6", 0.6, 5));
  REQUIRE(run.events.size() > 4);
  for (std::size_t i = 1; i < run.events.size(); ++i) {
    std::int64_t delta = run.events[i].attempt_index - run.events[i - 1].attempt_index;
    EventType prev = run.events[i - 1].event_type;
    if (prev == EventType::repair || prev == EventType::generation) {
      CHECK(delta == 1);
    } else {
      CHECK(delta == 0);
    }
  }
  // event indices dense from 1
  for (std::size_t i = 0; i < run.events.size(); ++i) {
    CHECK(run.events[i].event_index == static_cast<std::int64_t>(i + 1));
  }
}

TEST_CASE("wall time equals operations times per-op latency") {
  TaskInstance task = small_task();
  RunRecord run = simulate_run(request(task, "H5", 0.7, 21));
  CHECK(run.budget.wall_time ==
        Catch::Approx(run.budget.operations * harness_config("H5").per_op_latency));
}

TEST_CASE("matched pairs share every raw budget scalar") {
  TaskInstance task = small_task(TaskFamily::rule_filter, 5);
  std::size_t checked = 0;
  for (std::uint64_t seed = 1; seed <= 60; ++seed) {
    MatchedPair pair = matched_pair(task, {"m", 0.75}, {"x4", 4}, seed);
    CHECK(pair.deltas.all_zero());
    CHECK(pair.low.budget.raw_tokens == pair.high.budget.raw_tokens);
    CHECK(pair.low.budget.tool_calls == pair.high.budget.tool_calls);
    CHECK(pair.low.budget.operations == pair.high.budget.operations);
    CHECK(pair.low.budget.wall_time == pair.high.budget.wall_time);
    CHECK(pair.low.events.size() == pair.high.events.size());
    ++checked;
  }
  CHECK(checked == 60);
}

TEST_CASE("low-quality member has strictly lower mean observation validity") {
  TaskInstance task = small_task(TaskFamily::rule_filter, 5);
  double low_sum = 0, high_sum = 0;
  int low_n = 0, high_n = 0;
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    MatchedPair pair = matched_pair(task, {"m", 0.75}, {"x4", 4}, seed);
    for (const auto& e : pair.low.events) {
      if (e.consistency >= 0) {
        low_sum += e.consistency;
        ++low_n;
      }
    }
    for (const auto& e : pair.high.events) {
      if (e.consistency >= 0) {
        high_sum += e.consistency;
        ++high_n;
      }
    }
  }
  CHECK(low_sum / low_n < high_sum / high_n);
}

TEST_CASE("matched pair needs at least one feedback round") {
  TaskInstance task = small_task();
  CHECK_THROWS_AS(matched_pair(task, {"m", 0.5}, {"tiny", 0.01}, 1), EfcError);
}

TEST_CASE("factor scans move efficiency in the documented directions") {
  SuiteConfig scan = default_suite_config(5);
  scan.replicates = 3;
  scan.models = {{"m", 0.75}};
  scan.budget_levels = {{"x4", 4}};
  scan.templates.resize(6);
  HarnessConfig base = harness_config("H5");

  FactorScanResult up = factor_scan(base, "B_route", {0.1, 0.9}, scan);
  CHECK(up.levels.back().mean_eta > up.levels.front().mean_eta);

  FactorScanResult down = factor_scan(base, "noise_level", {0.05, 0.6}, scan);
  CHECK(down.levels.back().mean_eta < down.levels.front().mean_eta);

  CHECK_THROWS_AS(factor_scan(base, "nonsense", {0.1, 0.9}, scan), EfcError);
  CHECK_THROWS_AS(factor_scan(base, "B_route", {0.5}, scan), EfcError);
}

TEST_CASE("suite runs merge deterministically regardless of worker count") {
  SuiteConfig cfg = default_suite_config(43);
  cfg.replicates = 2;
  cfg.templates.resize(4);
  cfg.models = {{"m", 0.6}};
  cfg.jobs = 1;
  SuiteResult serial = run_suite(cfg);
  cfg.jobs = 4;
  SuiteResult parallel = run_suite(cfg);
  REQUIRE(serial.runs.size() == parallel.runs.size());
  CHECK(emit_runs(serial.runs) == emit_runs(parallel.runs));
}
