#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "riskshare/preferences.hpp"
#include "riskshare/prob_core.hpp"

namespace riskshare {

struct RduAudit {
  bool utility_linear = false;  // u linear on [0, x0]
  double envelope_gap = 0.0;    // max of envelope - w on [0, 1/n]
  std::optional<double> inflection;
  std::vector<std::string> warnings;

  bool envelope_matches() const { return envelope_gap <= 1e-6; }
  bool passed() const { return utility_linear && envelope_matches(); }
};

// n identical rank-dependent agents sharing `total`.
struct RduScenario {
  std::size_t n = 1;
  Agent agent;
  RandomVariable total;
  double x0 = 1.0;
  Envelope envelope;
  RduAudit audit;
};

// Audit failures are recorded as warnings; the scenario is still usable.
RduScenario make_rdu_scenario(std::size_t n, Agent agent, RandomVariable total, double x0,
                              std::size_t envelope_grid = 10000);

enum class DominanceVerdict { jackpot_strictly_dominates, proportional_strictly_dominates, incomparable };

std::string to_string(DominanceVerdict v);

struct DominanceReport {
  DominanceVerdict verdict = DominanceVerdict::incomparable;
  double margin = 0.0;  // jackpot - proportional
  double jackpot_utility = 0.0;
  double proportional_utility = 0.0;
  double layer_value = 0.0;  // integral of w(P(u(X) > x)/n) dx
};

// Equal-probability independent jackpot versus X/n for every agent.
DominanceReport jackpot_vs_proportional(const RduScenario& scenario);

// n * slope * integral of envelope(P(X > x)/n) dx; needs X <= x0.
double rdu_sum_optimal_value(const RduScenario& scenario);

struct Y0Options {
  double theta_margin = 1e-3;
  double x_min = 1e-3;
  double x_max = 1e6;
  std::size_t per_decade = 64;
  TechConOptions tech;
};

struct Y0Result {
  std::optional<double> y0;
  double theta = 0.0;
  TechConReport tech;
  // (x, u(x/n) - w(1/n) u(x)): proportional minus jackpot utility at X = x.
  std::vector<std::pair<double, double>> flip_table;
};

Y0Result find_y0(const RduScenario& scenario, const Y0Options& options = {});

struct EpsilonReport {
  double utility = 0.0;       // agent 0 under (y - eps, y + (n-1) eps, ...) jackpot mix
  double base_utility = 0.0;  // u(y)
  double derivative_estimate = 0.0;
  double derivative_limit = 0.0;  // n u'(y) (w(1/n) - 1/n)
};

EpsilonReport epsilon_perturbation(double y, const RduScenario& scenario, double epsilon);

}  // namespace riskshare
