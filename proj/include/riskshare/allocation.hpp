#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "riskshare/preferences.hpp"
#include "riskshare/prob_core.hpp"

namespace riskshare {

struct ImprovementResult {
  Extension extension;
  Allocation allocation;  // lives on extension.space
  std::vector<std::vector<double>> cuts;
  ShiftForm form = ShiftForm::lower;
  std::vector<double> shifts;  // zero unless produced by shifted_improve
};

// Jackpot allocation on a randomized refinement: agent i receives the whole
// total on the child interval [Z_{i-1}, Z_i) of cumulative shares.
ImprovementResult counter_monotonic_improve(const Allocation& alloc);

enum class ShiftDirection { automatic, lower, upper };

// Shifts components to be nonnegative (by their minima) or nonpositive (by
// their maxima), improves, and shifts back.
ImprovementResult shifted_improve(const Allocation& alloc,
                                  ShiftDirection direction = ShiftDirection::automatic);

struct WeightedChoice {
  double value = 0.0;
  std::size_t argmax = 0;
};

// max_i lambda_i u_i(x); ties go to the lowest index.
WeightedChoice v_lambda(const std::vector<double>& lambda, const std::vector<Agent>& agents,
                        double x);

struct LambdaOptimum {
  Allocation allocation;
  double value = 0.0;               // E[sum_i lambda_i u_i(X_i)]
  std::vector<double> utilities;    // E[u_i(X_i)]
};

LambdaOptimum rs_lambda_optimal(const std::vector<double>& lambda,
                                const std::vector<Agent>& agents, const RandomVariable& total);

LambdaOptimum ra_lambda_optimal(const std::vector<double>& lambda,
                                const std::vector<Agent>& agents, const RandomVariable& total);

// Shares of x for `members` equalizing lambda_i u_i' where shares are interior.
std::vector<double> water_fill(const std::vector<double>& lambda, const std::vector<Agent>& agents,
                               const std::vector<std::size_t>& members, double x);

struct MixedOptions {
  std::size_t outer_grid = 2048;
  int refine_iters = 80;
};

struct SplitChoice {
  double seeking_share = 0.0;  // amount given to the risk-seeking group
  double value = 0.0;
};

SplitChoice optimal_split(const std::vector<double>& lambda, const std::vector<Agent>& agents,
                          const std::vector<std::size_t>& seeking,
                          const std::vector<std::size_t>& averse, double x,
                          const MixedOptions& options = {});

LambdaOptimum mixed_lambda_optimal(const std::vector<double>& lambda,
                                   const std::vector<Agent>& agents,
                                   const std::vector<std::size_t>& seeking,
                                   const std::vector<std::size_t>& averse,
                                   const RandomVariable& total, const MixedOptions& options = {});

// Total level where the seeking group switches from nothing to everything,
// located by bisection on [lo, hi].
double split_threshold(const std::vector<double>& lambda, const std::vector<Agent>& agents,
                       const std::vector<std::size_t>& seeking,
                       const std::vector<std::size_t>& averse, double lo, double hi,
                       const MixedOptions& options = {});

struct ParetoVerdict {
  bool jackpot = false;
  bool pareto_optimal = false;
  std::optional<DependenceViolation> jackpot_violation;
  std::vector<double> lambda;       // a supporting weight vector when optimal
  std::vector<std::size_t> cycle;   // agents on an infeasible weight cycle
};

// Risk-seeking expected-utility agents only.
ParetoVerdict pareto_check_rs(const Allocation& alloc, const std::vector<Agent>& agents);

struct UpfPoint {
  std::vector<double> lambda;
  std::vector<double> utilities;
  double weighted_value = 0.0;
};

// Dispatches on the agents' attitudes: all seeking, all averse, or mixed.
LambdaOptimum lambda_optimal(const std::vector<double>& lambda, const std::vector<Agent>& agents,
                             const RandomVariable& total, const MixedOptions& options = {});

std::vector<UpfPoint> upf_trace(const std::vector<Agent>& agents, const RandomVariable& total,
                                const std::vector<std::vector<double>>& lambda_grid,
                                const MixedOptions& options = {});

// Points on the simplex with coordinates in multiples of 1/steps.
std::vector<std::vector<double>> simplex_grid(std::size_t agents, std::size_t steps);

std::vector<UpfPoint> individually_rational(const std::vector<UpfPoint>& trace,
                                            const std::vector<double>& reservation);

}  // namespace riskshare
