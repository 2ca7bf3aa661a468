#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "riskshare/equilibrium.hpp"
#include "riskshare/preferences.hpp"
#include "riskshare/prob_core.hpp"

namespace riskshare::cli {

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kEngineVersion = "riskshare 0.1.0";

struct Scenario {
  nlohmann::json document;
  std::string source;
  std::string name;
  std::string task;
  unsigned long long seed = 0;
  SpacePtr space;
  RandomVariable total;
  std::vector<Agent> agents;
  std::vector<std::string> groups;  // per agent, "" when unset
  std::optional<EndowmentVector> endowments;
  std::optional<std::vector<double>> lambda;  // params.lambda resolved per agent
  nlohmann::json params = nlohmann::json::object();
};

// Collects every problem it finds and throws one ValidationError listing
// them, each prefixed with a JSON-pointer path or a line/column.
Scenario parse_scenario_text(const std::string& text, const std::string& source = "<memory>");
Scenario parse_scenario(const std::string& path);

struct Table {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<nlohmann::json>> rows;
};

struct ReportDocument {
  nlohmann::json scenario;
  std::string task;
  std::string status = "ok";  // ok | invalid_certificate
  unsigned long long seed = 0;
  std::vector<Table> tables;
  nlohmann::json certificates = nlohmann::json::array();
  nlohmann::json values = nlohmann::json::object();
  std::vector<std::string> warnings;
  std::optional<double> timing_ms;  // only filled when requested; breaks byte-identity
};

struct RunOptions {
  bool oracle = false;
  bool timing = false;
  std::optional<unsigned long long> seed;
};

ReportDocument run_scenario(const Scenario& scenario, const RunOptions& options = {});

enum class Format { json, csv, text };

Format parse_format(const std::string& name);
nlohmann::json to_json(const ReportDocument& doc);
std::string render_csv(const Table& table);
std::string render_text(const ReportDocument& doc);

// Writes into `out_dir` (created if needed) or, without one, to `out`.
void emit_report(const ReportDocument& doc, Format format, const std::optional<std::string>& out_dir,
                 std::ostream& out);

int exit_code(const ReportDocument& doc);

}  // namespace riskshare::cli
