#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "efclab/gates.hpp"
#include "efclab/trace_io.hpp"

using namespace efclab;

namespace {

const std::array<StatusKind, 7> kScored = {
    StatusKind::passed,        StatusKind::assertion_error, StatusKind::runtime_error,
    StatusKind::timeout,       StatusKind::static_reject,   StatusKind::api_error,
    StatusKind::other};

double expected_quality(StatusKind s) {
  switch (s) {
    case StatusKind::passed: return 1.00;
    case StatusKind::assertion_error: return 0.42;
    case StatusKind::runtime_error: return 0.12;
    case StatusKind::timeout: return 0.06;
    case StatusKind::static_reject: return 0.04;
    case StatusKind::api_error: return 0.00;
    case StatusKind::other: return 0.25;
    default: return -1;
  }
}

// independent re-statement of the progress-gate tables, evaluated top-down
double expected_gate(StatusKind prev, StatusKind cur, std::int64_t attempt, bool nr) {
  if (cur == StatusKind::none) return 1.00;
  if (attempt == 0) return 1.00;
  if (cur == StatusKind::passed && prev != StatusKind::passed) return 1.35;
  if (prev == StatusKind::none) return 1.00;
  if (severity(cur) > severity(prev)) return 1.15;
  if (severity(cur) == severity(prev) && cur != StatusKind::passed) return nr ? 0.16 : 0.62;
  if (severity(cur) < severity(prev)) return nr ? 0.10 : 0.45;
  return 1.00;
}

}  // namespace

TEST_CASE("status_quality reproduces the table exactly") {
  for (StatusKind s : kScored) {
    CHECK(status_quality(s) == expected_quality(s));
  }
  CHECK_THROWS_AS(status_quality(StatusKind::none), EfcError);
}

TEST_CASE("progress gate tables, exhaustive over status pairs and attempts") {
  for (StatusKind prev : kScored) {
    for (StatusKind cur : kScored) {
      for (std::int64_t a : {0, 1, 2, 5}) {
        for (bool nr : {false, true}) {
          GateContext ctx{prev, cur, a};
          REQUIRE(progress_gate(ctx, nr) == expected_gate(prev, cur, a, nr));
        }
      }
    }
  }
}

TEST_CASE("progress gate worked rows") {
  CHECK(progress_gate({StatusKind::runtime_error, StatusKind::passed, 1}) == 1.35);
  CHECK(progress_gate({StatusKind::assertion_error, StatusKind::assertion_error, 2}, true) ==
        0.16);
  CHECK(progress_gate({StatusKind::passed, StatusKind::api_error, 0}) == 1.00);  // A = 0 row
  CHECK(progress_gate({StatusKind::passed, StatusKind::none, 3}) == 1.00);  // no checker signal
  // staying passed is neither progress nor regress
  CHECK(progress_gate({StatusKind::passed, StatusKind::passed, 2}) == 1.00);
}

TEST_CASE("loop gate tables, exhaustive over event types and statuses") {
  for (EventType t : {EventType::model_action, EventType::tool_call, EventType::checker,
                      EventType::repair, EventType::generation, EventType::memory_update}) {
    for (StatusKind s : kScored) {
      for (bool nr : {false, true}) {
        double expected = 1.00;
        if (t == EventType::repair) {
          expected = nr ? 0.45 : 0.95;
        } else if (t == EventType::generation) {
          expected = s == StatusKind::passed ? 0.92 : 0.85;
        }
        REQUIRE(loop_gate(t, s, nr) == expected);
      }
    }
  }
  CHECK(loop_gate(EventType::repair, StatusKind::none, false) == 0.95);
  CHECK(loop_gate(EventType::repair, StatusKind::none, true) == 0.45);
  CHECK(loop_gate(EventType::checker, StatusKind::assertion_error, false) == 1.00);
}

TEST_CASE("stable and NRS event scores, worked values") {
  // first pass on a generation event
  CHECK(stable_event_efc(2.0, 1.00, 1.35, 0.92) == Catch::Approx(2.484).epsilon(1e-12));
  CHECK(stable_event_efc(5.0, 0.0, 1.35, 0.92) == 0.0);
  CHECK(stable_event_efc(3.25, 1, 1, 1) == 3.25);

  // worked NRS value: 1.0 * 0.42 * 0.16 * 0.45 / (1 + 0.35 * 2)
  CHECK(1.0 + 0.35 * 2 == Catch::Approx(1.70));
  CHECK(nrs_event_efc(1.0, 0.42, 0.16, 0.45, 2) ==
        Catch::Approx(0.42 * 0.16 * 0.45 / 1.7).epsilon(1e-12));
  CHECK(nrs_event_efc(1.0, 0.42, 0.16, 0.45, 2) == Catch::Approx(0.01778823529411765).epsilon(1e-9));
  CHECK(nrs_event_efc(7.5, 1, 1, 1, 0) == 7.5);
  CHECK_THROWS_AS(nrs_event_efc(1, 1, 1, 1, -1), EfcError);
}

TEST_CASE("NRS contributions strictly decrease over repeated identical failures") {
  for (StatusKind s : kScored) {
    if (status_quality(s) <= 0) continue;  // api_error annihilates; nothing to order
    double prev_score = 1e18;
    for (std::int64_t attempt = 1; attempt <= 6; ++attempt) {
      GateContext ctx{s, s, attempt};
      double g = progress_gate(ctx, true);
      double l = loop_gate(EventType::repair, s, true);
      double score = nrs_event_efc(1.0, status_quality(s), g, l, attempt);
      REQUIRE(score < prev_score);
      prev_score = score;
    }
  }
}

TEST_CASE("stable dominates NRS on repairs and repeated failures") {
  for (StatusKind s : kScored) {
    for (std::int64_t a : {1, 2, 4}) {
      GateContext ctx{s, s, a};
      double stable = stable_event_efc(1.0, status_quality(s), progress_gate(ctx, false),
                                       loop_gate(EventType::repair, s, false));
      double nrs = nrs_event_efc(1.0, status_quality(s), progress_gate(ctx, true),
                                 loop_gate(EventType::repair, s, true), a);
      REQUIRE(stable >= nrs);
    }
  }
}

TEST_CASE("score_run passes through events without checker evidence") {
  RunRecord r;
  r.run_id = "r";
  TraceEvent tool;
  tool.event_index = 1;
  tool.event_type = EventType::tool_call;
  tool.status = StatusKind::none;
  tool.consistency = 0.9;
  tool.reported_progress = 0.6;
  r.events = {tool};
  EstimatorParams params;
  params.theta0 = std::log(2.0);  // base = 1 for any zeroed features
  RunScores s = score_run(params, r);
  REQUIRE(s.events.size() == 1);
  CHECK(s.events[0].q == 1.0);
  CHECK(s.events[0].g == 1.0);
  CHECK(s.events[0].lambda == 1.0);
  CHECK(s.events[0].stable == s.events[0].base);
}

TEST_CASE("ingest reports orphans, duplicates, and bad lines without dropping the rest") {
  RunRecord r;
  r.run_id = "run-a";
  r.task_id = "t";
  r.family = "rule_filter";
  r.harness_id = "H1";
  r.model_id = "m";
  r.budget_level = "x1";
  TraceEvent e;
  e.event_index = 1;
  e.event_type = EventType::generation;
  r.events = {e};

  SECTION("event before its header is an orphan") {
    std::string text =
        R"({"run_id":"ghost","event_index":1,"event_type":"generation","status":"none","attempt_index":0})"
        "\n" +
        emit_runs({r});
    IngestResult res = ingest_traces(text);
    REQUIRE(res.diagnostics.size() == 1);
    CHECK(res.diagnostics[0].code == "orphan-event");
    CHECK(res.diagnostics[0].line == 1);
    CHECK(res.runs.size() == 1);
  }

  SECTION("duplicate run ids are flagged") {
    std::string text = emit_runs({r}) + emit_runs({r});
    IngestResult res = ingest_traces(text);
    bool found = false;
    for (const auto& d : res.diagnostics) found |= d.code == "duplicate-run";
    CHECK(found);
    CHECK(res.runs.size() == 1);
  }

  SECTION("one bad line among a hundred runs yields 99 records + 1 diagnostic") {
    std::vector<RunRecord> runs;
    for (int i = 0; i < 100; ++i) {
      RunRecord ri = r;
      ri.run_id = "run-" + std::to_string(i);
      runs.push_back(ri);
    }
    std::ostringstream os;
    for (int i = 0; i < 100; ++i) {
      if (i == 37) {
        os << "{this is not json}\n";
      } else {
        emit_run(os, runs[static_cast<std::size_t>(i)]);
      }
    }
    IngestResult res = ingest_traces(os.str());
    CHECK(res.runs.size() == 99);
    REQUIRE(res.diagnostics.size() == 1);
    CHECK(res.diagnostics[0].code == "parse-error");
  }
}
