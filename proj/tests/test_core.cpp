#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "efclab/core.hpp"
#include "efclab/harness.hpp"
#include "efclab/suite.hpp"
#include "efclab/trace_io.hpp"

using namespace efclab;

namespace {

const std::array<StatusKind, 7> kScored = {
    StatusKind::api_error,       StatusKind::static_reject, StatusKind::timeout,
    StatusKind::runtime_error,   StatusKind::other,         StatusKind::assertion_error,
    StatusKind::passed};

}  // namespace

TEST_CASE("severity endpoints and order") {
  CHECK(severity(StatusKind::api_error) == 0);
  CHECK(severity(StatusKind::passed) == 6);
  CHECK(severity(StatusKind::assertion_error) > severity(StatusKind::runtime_error));
  CHECK(severity(StatusKind::api_error) < severity(StatusKind::static_reject));
  CHECK(severity(StatusKind::static_reject) < severity(StatusKind::timeout));
  CHECK(severity(StatusKind::timeout) < severity(StatusKind::runtime_error));
  CHECK(severity(StatusKind::runtime_error) < severity(StatusKind::other));
  CHECK(severity(StatusKind::other) < severity(StatusKind::assertion_error));
  CHECK(severity(StatusKind::assertion_error) < severity(StatusKind::passed));
  CHECK_THROWS_AS(severity(StatusKind::none), EfcError);
}

TEST_CASE("severity is antisymmetric and transitive over the seven kinds") {
  for (auto a : kScored) {
    for (auto b : kScored) {
      if (a != b) CHECK(severity(a) != severity(b));
      for (auto c : kScored) {
        if (severity(a) < severity(b) && severity(b) < severity(c)) {
          CHECK(severity(a) < severity(c));
        }
      }
    }
  }
}

TEST_CASE("compose_raw_cost worked values") {
  NormalizationContext ctx{1000, 5, 20, 10};
  BudgetAccounting at_median{1000, 5, 10.0, 20, 0};
  CHECK(compose_raw_cost(at_median, ctx) == Catch::Approx(1.0).epsilon(1e-12));

  BudgetAccounting zero{};
  CHECK(compose_raw_cost(zero, ctx) == 0.0);

  BudgetAccounting doubled_tokens{2000, 5, 10.0, 20, 0};
  CHECK(compose_raw_cost(doubled_tokens, ctx) == Catch::Approx(1.4).epsilon(1e-12));
}

TEST_CASE("compose_raw_cost rejects degenerate medians") {
  CHECK_THROWS_AS(compose_raw_cost(BudgetAccounting{}, NormalizationContext{0, 1, 1, 1}),
                  EfcError);
  CHECK_THROWS_AS(compose_raw_cost(BudgetAccounting{}, NormalizationContext{1, 1, -2, 1}),
                  EfcError);
}

TEST_CASE("compose_raw_cost is monotone in each count") {
  NormalizationContext ctx{900, 4, 18, 9};
  Rng rng(11);
  for (int i = 0; i < 200; ++i) {
    BudgetAccounting b{static_cast<std::int64_t>(rng.next_below(5000)),
                       static_cast<std::int64_t>(rng.next_below(30)), rng.uniform(0, 50),
                       static_cast<std::int64_t>(rng.next_below(100)), 0};
    double base = compose_raw_cost(b, ctx);
    BudgetAccounting b2 = b;
    b2.raw_tokens += 1 + static_cast<std::int64_t>(rng.next_below(100));
    CHECK(compose_raw_cost(b2, ctx) > base);
    b2 = b;
    b2.tool_calls += 1;
    CHECK(compose_raw_cost(b2, ctx) > base);
    b2 = b;
    b2.operations += 2;
    CHECK(compose_raw_cost(b2, ctx) > base);
    b2 = b;
    b2.wall_time += 0.5;
    CHECK(compose_raw_cost(b2, ctx) > base);
  }
}

TEST_CASE("serialization round-trips every generated record") {
  SuiteConfig cfg = default_suite_config(17);
  cfg.replicates = 1;
  cfg.templates.resize(6);
  cfg.models = {{"m", 0.7}};
  SuiteResult suite = run_suite(cfg);
  REQUIRE(!suite.runs.empty());
  std::string text = emit_runs(suite.runs);
  IngestResult back = ingest_traces(text);
  REQUIRE(back.diagnostics.empty());
  REQUIRE(back.runs.size() == suite.runs.size());
  for (std::size_t i = 0; i < suite.runs.size(); ++i) {
    CHECK(back.runs[i] == suite.runs[i]);
  }
}

TEST_CASE("unknown keys are preserved on round-trip") {
  RunRecord r;
  r.run_id = "r1";
  r.task_id = "t1";
  r.family = "needle_lookup";
  r.harness_id = "H2";
  r.model_id = "m";
  r.budget_level = "x1";
  r.seed = 9;
  r.extra["custom_note"] = "\"hello\"";
  TraceEvent e;
  e.event_index = 1;
  e.event_type = EventType::tool_call;
  e.extra["vendor_tag"] = "123";
  r.events.push_back(e);

  IngestResult back = ingest_traces(emit_runs({r}));
  REQUIRE(back.runs.size() == 1);
  CHECK(back.runs[0].extra.at("custom_note") == "\"hello\"");
  CHECK(back.runs[0].events.at(0).extra.at("vendor_tag") == "123");
  CHECK(back.runs[0] == r);
}
