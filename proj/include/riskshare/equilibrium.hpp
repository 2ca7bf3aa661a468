#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "riskshare/allocation.hpp"
#include "riskshare/preferences.hpp"
#include "riskshare/prob_core.hpp"

namespace riskshare {

// Initial endowments: a nonnegative allocation of the aggregate risk.
using EndowmentVector = Allocation;

void require_endowments(const EndowmentVector& endowments);
bool is_trivial_endowment(const EndowmentVector& endowments);

enum class VerificationMethod { exact_vertex, water_filling, heuristic };

std::string to_string(VerificationMethod m);

// Atoms the agent receives in full on only part of their probability mass,
// realized through an independent randomization of the space. All listed
// atoms share one total and one price density.
struct RandomizedAtom {
  std::vector<std::size_t> atoms;
  double share = 0.0;  // fraction of their probability that pays the total
};

struct IndividualOptimum {
  double value = 0.0;
  std::vector<double> choice;  // zero at the randomized atom, if any
  std::optional<RandomizedAtom> randomized;
  VerificationMethod method = VerificationMethod::heuristic;
};

// max U(Y) over 0 <= Y <= total with E^Q[Y] <= budget.
IndividualOptimum individual_optimum(const Agent& agent, const RandomVariable& total,
                                     const PriceMeasure& price, double budget);

struct AgentCheck {
  double budget_residual = 0.0;  // E^Q[endowment] - E^Q[allocation]
  double achieved = 0.0;
  double best_deviation = 0.0;
  double gap = 0.0;              // best_deviation - achieved
  VerificationMethod method = VerificationMethod::heuristic;
};

struct EquilibriumCertificate {
  std::string method;
  std::vector<AgentCheck> agents;
  double clearance_residual = 0.0;
  bool valid = false;
  std::vector<std::string> notes;

  bool exact() const;  // no agent was checked heuristically
};

inline constexpr double kBudgetTol = 1e-9;
inline constexpr double kClearanceTol = 1e-9;
inline constexpr double kDeviationTol = 1e-7;

EquilibriumCertificate verify_equilibrium(const Allocation& alloc, const PriceMeasure& price,
                                          const EndowmentVector& endowments,
                                          const std::vector<Agent>& agents,
                                          std::string method = "verify");

// Density proportional to V_lambda(X) / X, zero where X = 0.
PriceMeasure price_from_lambda(const std::vector<double>& lambda, const std::vector<Agent>& agents,
                               const RandomVariable& total);

struct EquilibriumResult {
  Allocation allocation;
  PriceMeasure price;
  EndowmentVector endowments;  // lifted to the allocation's space
  EquilibriumCertificate certificate;
  std::vector<double> utilities;
  std::vector<double> shares;  // E^Q[endowment_i] / E^Q[X]
  std::vector<std::string> notes;
};

// Identical risk-seeking agents.
EquilibriumResult homogeneous_equilibrium(const std::vector<Agent>& agents,
                                          const EndowmentVector& endowments);

// Two risk-seeking agents; agent 0 takes the event where u_0/u_1 is largest.
EquilibriumResult two_agent_equilibrium(const std::vector<Agent>& agents,
                                        const EndowmentVector& endowments);

struct FixedPointOptions {
  std::size_t max_iters = 20000;
  double tol = 1e-6;
  double damping = 0.5;
  std::size_t restarts = 10;
  unsigned long long seed = 1;
};

struct FixedPointResult {
  std::vector<double> lambda;
  double residual = 0.0;  // || f(lambda) - g(lambda) ||_1
  std::size_t iterations = 0;
  bool certified = false;
  std::optional<EquilibriumResult> equilibrium;
  std::vector<std::string> notes;
};

FixedPointResult fixed_point_search(const std::vector<Agent>& agents,
                                    const EndowmentVector& endowments,
                                    const FixedPointOptions& options = {});

struct TwoPointAnalysis {
  bool exists = false;
  double lower = 0.0;  // R: largest seeking-side ratio b u(a) / (a u(b))
  double upper = 0.0;  // L: smallest averse-side marginal ratio
  std::vector<double> averse_shares;
  double necessary_lhs = 0.0;  // max over averse agents of u'(a/n)/u'(0)
  bool necessary_holds = false;
};

// Aggregate risk a with probability p and b otherwise; the price density
// ratio alpha/beta between the two states must lie in [lower, upper].
TwoPointAnalysis two_point_mixed_equilibrium(double a, double b, double p,
                                             const std::vector<Agent>& seeking,
                                             const std::vector<Agent>& averse);

struct TwoPointInstance {
  std::vector<Agent> agents;  // seeking agents first
  Allocation allocation;
  PriceMeasure price;
};

// Allocation of the two-point construction priced with density (alpha, beta),
// rescaled to unit expectation.
TwoPointInstance build_two_point_instance(double a, double b, double p,
                                          const std::vector<Agent>& seeking,
                                          const std::vector<Agent>& averse, double alpha,
                                          double beta);

struct RduConstantResult {
  bool refused = false;
  std::string diagnostic;
  double beta_w = 0.0;
  std::optional<EquilibriumResult> equilibrium;
};

// Identical rank-dependent agents sharing a constant total x.
RduConstantResult rdu_constant_equilibrium(const std::vector<Agent>& agents,
                                           const EndowmentVector& endowments,
                                           std::size_t envelope_grid = 10000);

}  // namespace riskshare
