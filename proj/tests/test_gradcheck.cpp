#include "cnp3o/gradcheck.hpp"

#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <set>

using namespace cnp3o;

TEST_CASE("every stage passes on the default configuration") {
  RunConfig cfg = parse_run_config(nlohmann::json::object());
  const auto t0 = std::chrono::steady_clock::now();
  const GradCheckReport report = run_gradient_checks(cfg);
  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();

  const auto names = gradient_check_stage_names();
  REQUIRE(report.stages.size() == names.size());
  for (std::size_t i = 0; i < names.size(); ++i) {
    INFO("stage ", report.stages[i].name, " max rel err ",
         report.stages[i].max_rel_error);
    CHECK(report.stages[i].name == names[i]);
    CHECK(report.stages[i].passed);
    CHECK(report.stages[i].max_rel_error < 1e-4);
  }
  CHECK(report.all_passed());
  CHECK(report.first_failure().empty());
  CHECK(elapsed < 30.0);
}

TEST_CASE("stage names are unique and cover the published list") {
  const auto names = gradient_check_stage_names();
  const std::set<std::string> unique(names.begin(), names.end());
  CHECK(unique.size() == names.size());
  for (const char* required :
       {"basis_derivatives", "trajectory_time_derivatives", "manifold_chain",
        "ppo_surrogate"})
    CHECK(unique.count(required) == 1);
}

TEST_CASE("an injected fault fails exactly the named stage") {
  RunConfig cfg = parse_run_config(nlohmann::json::object());
  const GradCheckReport report = run_gradient_checks(cfg, "manifold_chain");
  CHECK(!report.all_passed());
  CHECK(report.first_failure() == "manifold_chain");
  for (const auto& stage : report.stages) {
    if (stage.name == "manifold_chain") {
      CHECK(!stage.passed);
      CHECK(stage.max_rel_error > 1e-3);
    } else {
      CHECK(stage.passed);
    }
  }
}

TEST_CASE("fault injection reaches the isolated stages too") {
  RunConfig cfg = parse_run_config(nlohmann::json::object());
  for (const char* stage : {"basis_derivatives", "ppo_surrogate"}) {
    const GradCheckReport report = run_gradient_checks(cfg, stage);
    CHECK(report.first_failure() == stage);
  }
}

TEST_CASE("unknown stage names are rejected") {
  RunConfig cfg = parse_run_config(nlohmann::json::object());
  CHECK_THROWS_AS(run_gradient_checks(cfg, "no_such_stage"),
                  std::invalid_argument);
}

TEST_CASE("the suite passes for the alternate basis family and prior mode") {
  nlohmann::json doc;
  doc["primitive"] = "promp_rbf";
  doc["mode"] = "prior";
  RunConfig cfg = parse_run_config(doc);
  const GradCheckReport report = run_gradient_checks(cfg);
  for (const auto& stage : report.stages) {
    INFO("stage ", stage.name, " max rel err ", stage.max_rel_error);
    CHECK(stage.passed);
  }
}

TEST_CASE("the suite passes with the two-segment head") {
  nlohmann::json doc;
  doc["two_segment"] = true;
  doc["mode"] = "prior";
  RunConfig cfg = parse_run_config(doc);
  const GradCheckReport report = run_gradient_checks(cfg);
  for (const auto& stage : report.stages) {
    INFO("stage ", stage.name, " max rel err ", stage.max_rel_error);
    CHECK(stage.passed);
  }
}
