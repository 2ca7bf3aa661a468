#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "riskshare/preferences.hpp"
#include "riskshare/prob_core.hpp"

// Slow, independent reference computations used to cross-check the engine.
// They share only the utility and weighting evaluations with it.
namespace riskshare::oracle {

inline constexpr double kCombinationCap = 1e7;

struct OracleReport {
  std::string method;
  double best_value = 0.0;
  double resolution = 0.0;  // how far below the true optimum best_value may lie
  std::vector<std::vector<double>> witness;
  std::size_t combinations = 0;
  std::optional<double> engine_gap;  // engine value - best_value, when supplied
};

// Grid search of each atom's split; the last agent takes the remainder.
OracleReport brute_force_weighted_max(const std::vector<double>& lambda,
                                      const std::vector<Agent>& agents, const RandomVariable& total,
                                      std::size_t per_atom_grid,
                                      std::optional<double> engine_value = std::nullopt);

struct ParetoProbeReport {
  bool dominator_found = false;
  std::vector<double> base_utilities;
  std::vector<double> dominator_utilities;
  std::size_t evaluated = 0;
};

// Looks for an allocation that makes nobody worse off and somebody better
// off, on a refinement splitting each atom into `split` equal children.
ParetoProbeReport brute_force_pareto_probe(const std::vector<std::vector<double>>& components,
                                           const RandomVariable& total,
                                           const std::vector<Agent>& agents, std::size_t grid,
                                           std::size_t samples, unsigned long long seed,
                                           std::size_t split = 2);

struct JackpotEnumeration {
  double best_sum = 0.0;
  std::vector<std::size_t> best_owner;
  std::vector<double> best_utilities;
  std::size_t enumerated = 0;
  bool relabeling_reduced = false;  // identical agents: one owner map per relabeling class
};

JackpotEnumeration enumerate_jackpot_partitions(const RandomVariable& total,
                                                const std::vector<Agent>& agents);

// Explicit enumeration of all 2^m whole-atom subsets plus one partial atom,
// paid either as a partial amount or in full on part of its probability.
OracleReport vertex_individual_opt(const Agent& agent, const RandomVariable& total,
                                   const std::vector<double>& density, double budget);

// Rank-dependent utility via decision weights on ascending outcomes.
double reference_utility(const std::vector<double>& probs, const std::vector<double>& payoff,
                         const Agent& agent);

}  // namespace riskshare::oracle
