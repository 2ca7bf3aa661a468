#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include "riskshare/errors.hpp"

namespace riskshare {

inline constexpr double kProbTol = 1e-12;
inline constexpr double kMergeTol = 1e-9;
inline constexpr double kOrderTol = 1e-10;
inline constexpr double kDependenceTol = 1e-12;

class FiniteProbSpace;
using SpacePtr = std::shared_ptr<const FiniteProbSpace>;

// Atoms with strictly positive probabilities. A space produced by an
// extension remembers its parent and which parent atom each child refines.
class FiniteProbSpace {
 public:
  static SpacePtr create(std::vector<double> probs);
  static SpacePtr uniform(std::size_t atoms);
  static SpacePtr refine(const SpacePtr& parent, std::vector<double> probs,
                         std::vector<std::size_t> parent_atoms);

  std::size_t size() const { return probs_.size(); }
  double prob(std::size_t s) const { return probs_[s]; }
  const std::vector<double>& probabilities() const { return probs_; }

  const SpacePtr& parent() const { return parent_; }
  std::size_t parent_atom(std::size_t s) const { return parent_atoms_[s]; }

  // True when `ancestor` is this space or reachable through parent links.
  bool descends_from(const FiniteProbSpace& ancestor) const;
  // Maps each atom of this space to the atom of `ancestor` it refines.
  std::vector<std::size_t> ancestor_map(const FiniteProbSpace& ancestor) const;

 private:
  FiniteProbSpace(std::vector<double> probs, SpacePtr parent,
                  std::vector<std::size_t> parent_atoms);

  std::vector<double> probs_;
  SpacePtr parent_;
  std::vector<std::size_t> parent_atoms_;
};

class RandomVariable {
 public:
  RandomVariable() = default;
  RandomVariable(SpacePtr space, std::vector<double> values);

  const SpacePtr& space() const { return space_; }
  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t s) const { return values_[s]; }
  const std::vector<double>& values() const { return values_; }

  double min() const;
  double max() const;

  RandomVariable map(const std::function<double(double)>& f) const;
  RandomVariable scaled(double c) const;
  // Same variable viewed on a refinement of its space.
  RandomVariable lifted_to(const SpacePtr& finer) const;

 private:
  SpacePtr space_;
  std::vector<double> values_;
};

RandomVariable operator+(const RandomVariable& a, const RandomVariable& b);
RandomVariable operator-(const RandomVariable& a, const RandomVariable& b);

// Radon-Nikodym density of a pricing measure with respect to the base
// probability: nonnegative with unit expectation.
class PriceMeasure {
 public:
  PriceMeasure(SpacePtr space, std::vector<double> density);
  static PriceMeasure uniform(SpacePtr space);
  // Rescales nonnegative weights to unit expectation.
  static PriceMeasure normalized(SpacePtr space, std::vector<double> weights);

  const SpacePtr& space() const { return space_; }
  double operator[](std::size_t s) const { return density_[s]; }
  const std::vector<double>& density() const { return density_; }
  PriceMeasure lifted_to(const SpacePtr& finer) const;

 private:
  SpacePtr space_;
  std::vector<double> density_;
};

// Agent-major component vectors whose per-atom sum is the total.
class Allocation {
 public:
  Allocation(RandomVariable total, std::vector<std::vector<double>> components);

  std::size_t agents() const { return components_.size(); }
  const SpacePtr& space() const { return total_.space(); }
  const RandomVariable& total() const { return total_; }
  const std::vector<double>& values(std::size_t i) const { return components_[i]; }
  const std::vector<std::vector<double>>& components() const { return components_; }
  RandomVariable component(std::size_t i) const;
  Allocation lifted_to(const SpacePtr& finer) const;

 private:
  RandomVariable total_;
  std::vector<std::vector<double>> components_;
};

// Owner index per atom.
struct PartitionVector {
  SpacePtr space;
  std::vector<std::size_t> owner;
  std::size_t agents = 0;

  double probability_of(std::size_t agent) const;
};

struct Extension {
  SpacePtr space;
  PartitionVector partition;
};

// Splits atom s into the intervals of cuts[s]; child probability is
// parent probability times interval width and interval k belongs to agent k.
// Zero-width intervals produce no child.
Extension extend_with_uniform_cuts(const SpacePtr& space,
                                   const std::vector<std::vector<double>>& cuts);

// Every atom is split into one child per agent with theta_i > 0.
Extension extend_with_independent_categorical(const SpacePtr& space,
                                              const std::vector<double>& theta);

double expectation(const RandomVariable& x);
double expectation(const RandomVariable& x, const PriceMeasure& q);
double stop_loss(const RandomVariable& x, double t);

// Distinct values (ascending) with their probabilities; values closer than
// `tol` to the running group are merged at their probability-weighted mean.
std::vector<std::pair<double, double>> merged_distribution(const RandomVariable& x,
                                                           double tol = kMergeTol);
bool same_distribution(const RandomVariable& x, const RandomVariable& y,
                       double tol = kMergeTol);

struct OrderVerdict {
  bool holds = false;
  bool strict = false;
  double mean_gap = 0.0;  // E[Y] - E[X]
  // Largest stop-loss excess of x over y and where it occurs.
  std::optional<double> witness_t;
  double witness_gap = 0.0;
};

// x <=_cx y, tested on stop-loss transforms at every atom value of either.
OrderVerdict convex_order_leq(const RandomVariable& x, const RandomVariable& y);

enum class DependenceMode { comonotonic, counter_monotonic, jackpot };

struct DependenceViolation {
  std::size_t agent_i = 0;
  std::size_t agent_j = 0;
  std::size_t atom_s = 0;
  std::size_t atom_t = 0;
};

struct DependenceVerdict {
  bool holds = true;
  std::optional<DependenceViolation> violation;
};

DependenceVerdict check_dependence(const Allocation& alloc, DependenceMode mode);

enum class RepresentationStatus { represented, not_representable, deferred_to_pairwise };
enum class ShiftForm { lower, upper };

// X_i = (X - m) 1_{A_i} + m_i with m = sum m_i at or below ess inf X (lower
// form) or at or above ess sup X (upper form).
struct CounterMonotonicRepresentation {
  RepresentationStatus status = RepresentationStatus::not_representable;
  ShiftForm form = ShiftForm::lower;
  std::vector<double> shifts;
  std::optional<PartitionVector> partition;
};

CounterMonotonicRepresentation counter_monotonic_representation(const Allocation& alloc);

void require_same_space(const SpacePtr& a, const SpacePtr& b, const char* what);

}  // namespace riskshare
