#include <doctest.h>

#include <filesystem>
#include <sstream>

#include "riskshare/scenario.hpp"

using namespace riskshare;
using nlohmann::json;

namespace {

std::vector<std::string> issues_of(const std::string& body) {
  try {
    cli::parse_scenario_text(body);
  } catch (const ValidationError& e) {
    return e.issues();
  }
  return {};
}

bool mentions(const std::vector<std::string>& issues, const std::string& needle) {
  for (const auto& s : issues)
    if (s.find(needle) != std::string::npos) return true;
  return false;
}

const char* kTwoAgents = R"({
  "schema": 1,
  "task": "equilibrium",
  "space": {"probabilities": [0.5, 0.5], "values": [1, 2]},
  "agents": [{"name": "a", "count": 2, "utility": {"family": "power", "alpha": 2}}],
  "params": {"method": "homogeneous"}
})";

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("minimal scenario parses with defaults") {
    auto sc = cli::parse_scenario(std::string(RISKSHARE_SCENARIO_DIR) + "/examples/minimal.json");
    CHECK(sc.agents.size() == 1);
    CHECK(sc.total.size() == 1);
    CHECK(sc.seed == 0);
  }

  TEST_CASE("agent counts expand with suffixed names") {
    auto sc = cli::parse_scenario_text(kTwoAgents);
    REQUIRE(sc.agents.size() == 2);
    CHECK(sc.agents[0].name != sc.agents[1].name);
    REQUIRE(sc.endowments);
    CHECK(sc.endowments->values(0) == std::vector<double>{0.5, 1.0});
  }

  TEST_CASE("malformed JSON reports a line and column") {
    auto issues = issues_of("{\n  \"schema\": 1,\n  \"space\": [\n}");
    REQUIRE_FALSE(issues.empty());
    CHECK(mentions(issues, "line 4"));
  }

  TEST_CASE("every problem is reported with its path") {
    auto issues = issues_of(R"({
      "schema": 1,
      "colour": "blue",
      "space": {"probabilities": [0.5, 0.4], "values": [1, 2]},
      "agents": [{"utility": {"family": "power", "alpha": -1}}]
    })");
    CHECK(mentions(issues, "/colour"));
    CHECK(mentions(issues, "/space/probabilities"));
    CHECK(mentions(issues, "/agents/0/utility"));
  }

  TEST_CASE("endowment shares must lie on the simplex") {
    json doc = json::parse(kTwoAgents);
    doc["endowments"] = {{"mode", "proportional"}, {"theta", {0.9, 0.3}}};
    auto issues = issues_of(doc.dump());
    CHECK(mentions(issues, "/endowments/theta"));
  }

  TEST_CASE("fractions are accepted wherever numbers are") {
    json doc = json::parse(kTwoAgents);
    doc["space"]["probabilities"] = {"1/3", "2/3"};
    auto sc = cli::parse_scenario_text(doc.dump());
    CHECK(sc.space->prob(0) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  }

  TEST_CASE("space generators") {
    json doc = json::parse(kTwoAgents);
    doc["space"] = {{"generator", "uniform_grid"}, {"m", 4}, {"lo", 0}, {"hi", 2}};
    auto sc = cli::parse_scenario_text(doc.dump());
    REQUIRE(sc.total.size() == 4);
    CHECK(sc.total[0] == doctest::Approx(0.25));
    CHECK(sc.total[3] == doctest::Approx(1.75));
  }

  TEST_CASE("reports are deterministic and carry status") {
    auto sc = cli::parse_scenario_text(kTwoAgents);
    auto a = cli::to_json(cli::run_scenario(sc)).dump();
    auto b = cli::to_json(cli::run_scenario(sc)).dump();
    CHECK(a == b);
    auto doc = cli::run_scenario(sc);
    CHECK(doc.status == "ok");
    CHECK(cli::exit_code(doc) == 0);
    CHECK_FALSE(doc.timing_ms.has_value());
  }

  TEST_CASE("rejected certificates set a distinct status") {
    json doc = json::parse(kTwoAgents);
    doc["params"] = {{"method", "verify"}, {"allocation", {{0.5, 1.0}, {0.5, 1.0}}}, {"density", {1, 1}}};
    auto report = cli::run_scenario(cli::parse_scenario_text(doc.dump()));
    CHECK(report.status == "invalid_certificate");
    CHECK(cli::exit_code(report) == 3);
  }

  TEST_CASE("output formats") {
    auto report = cli::run_scenario(cli::parse_scenario_text(kTwoAgents));
    std::ostringstream text;
    cli::emit_report(report, cli::Format::text, std::nullopt, text);
    CHECK_FALSE(text.str().empty());
    REQUIRE_FALSE(report.tables.empty());
    auto csv = cli::render_csv(report.tables.front());
    CHECK(csv.find(report.tables.front().columns.front()) == 0);
    auto dir = std::filesystem::temp_directory_path() / "riskshare_cli_test";
    std::filesystem::remove_all(dir);
    std::ostringstream sink;
    cli::emit_report(report, cli::Format::csv, dir.string(), sink);
    CHECK(std::filesystem::exists(dir / "manifest.csv"));
    std::filesystem::remove_all(dir);
    CHECK_THROWS(cli::parse_format("xml"));
  }
}
