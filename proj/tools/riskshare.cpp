// riskshare <task> --scenario <file|dir> [--out <dir>] [--format json|csv|text] [--seed N] [--oracle]

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "riskshare/errors.hpp"
#include "riskshare/scenario.hpp"

namespace fs = std::filesystem;
using namespace riskshare;

namespace {

struct Job {
  fs::path scenario;
  std::optional<std::string> out_dir;
  std::string stdout_text;
  std::string stderr_text;
  int code = 0;
};

void run_job(Job& job, const std::string& task, cli::Format format, const cli::RunOptions& options) {
  std::ostringstream out, err;
  try {
    cli::Scenario sc = cli::parse_scenario(job.scenario.string());
    if (!sc.task.empty() && sc.task != task)
      throw ValidationError(job.scenario.string() + ": /task: file declares task '" + sc.task +
                            "' but '" + task + "' was requested");
    sc.task = task;
    cli::ReportDocument doc = cli::run_scenario(sc, options);
    cli::emit_report(doc, format, job.out_dir, out);
    for (const auto& w : doc.warnings) err << job.scenario.filename().string() << ": warning: " << w << "\n";
    job.code = cli::exit_code(doc);
    if (job.code != 0) err << job.scenario.filename().string() << ": status " << doc.status << "\n";
  } catch (const ValidationError& e) {
    for (const auto& issue : e.issues()) err << "validation error: " << issue << "\n";
    job.code = 2;
  } catch (const std::exception& e) {
    err << job.scenario.string() << ": error: " << e.what() << "\n";
    job.code = 1;
  }
  job.stdout_text = out.str();
  job.stderr_text = err.str();
}

std::size_t thread_cap() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("RISKSHARE_THREADS")) {
    try {
      long v = std::stol(env);
      if (v >= 1) n = std::min<std::size_t>(n, static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      std::cerr << "ignoring malformed RISKSHARE_THREADS\n";
    }
  }
  return n;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Risk sharing engine for risk-seeking and rank-dependent agents"};
  std::string task, scenario, format_name = "json";
  std::optional<std::string> out_dir;
  std::optional<unsigned long long> seed;
  bool oracle = false, timing = false;
  app.add_option("task", task, "improve | pareto | upf | equilibrium | rdu | reproduce")
      ->required()
      ->check(CLI::IsMember({"improve", "pareto", "upf", "equilibrium", "rdu", "reproduce"}));
  app.add_option("--scenario", scenario, "scenario JSON file, or a directory of them")->required();
  app.add_option("--out", out_dir, "output directory (default: stdout)");
  app.add_option("--format", format_name, "json | csv | text")->check(CLI::IsMember({"json", "csv", "text"}));
  app.add_option("--seed", seed, "override the scenario seed");
  app.add_flag("--oracle", oracle, "run brute-force cross-checks where available");
  app.add_flag("--timing", timing, "record wall time in the report (output is then not byte-stable)");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  const cli::Format format = cli::parse_format(format_name);
  const cli::RunOptions options{oracle, timing, seed};

  std::vector<Job> jobs;
  if (fs::is_directory(scenario)) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(scenario))
      if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) {
      std::cerr << scenario << ": no scenario files found\n";
      return 2;
    }
    for (const auto& f : files) {
      Job j;
      j.scenario = f;
      if (out_dir) j.out_dir = (fs::path(*out_dir) / f.stem()).string();
      jobs.push_back(std::move(j));
    }
  } else {
    Job j;
    j.scenario = scenario;
    j.out_dir = out_dir;
    jobs.push_back(std::move(j));
  }

  // One engine run per scenario; each job owns its output buffers.
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k; (k = next++) < jobs.size();) run_job(jobs[k], task, format, options);
  };
  const std::size_t threads = std::min(thread_cap(), jobs.size());
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  int code = 0;
  for (const auto& j : jobs) {
    if (jobs.size() > 1 && !j.stdout_text.empty()) std::cout << "## " << j.scenario.filename().string() << "\n";
    std::cout << j.stdout_text;
    std::cerr << j.stderr_text;
    code = std::max(code, j.code);
  }
  return code;
}
