#include "riskshare/prob_core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace riskshare {

namespace {

void check_probabilities(const std::vector<double>& probs) {
  if (probs.empty()) throw ValidationError("probability space needs at least one atom");
  double total = 0.0;
  for (std::size_t s = 0; s < probs.size(); ++s) {
    if (!std::isfinite(probs[s]) || probs[s] <= 0.0)
      throw ValidationError("atom " + std::to_string(s) + " has non-positive probability");
    total += probs[s];
  }
  if (std::abs(total - 1.0) > kProbTol)
    throw ValidationError("probabilities sum to " + std::to_string(total) + ", not 1");
}

}  // namespace

void require_same_space(const SpacePtr& a, const SpacePtr& b, const char* what) {
  if (a.get() != b.get()) throw SpaceMismatch(std::string(what) + ": operands live on different spaces");
}

FiniteProbSpace::FiniteProbSpace(std::vector<double> probs, SpacePtr parent,
                                 std::vector<std::size_t> parent_atoms)
    : probs_(std::move(probs)), parent_(std::move(parent)), parent_atoms_(std::move(parent_atoms)) {}

SpacePtr FiniteProbSpace::create(std::vector<double> probs) {
  check_probabilities(probs);
  return SpacePtr(new FiniteProbSpace(std::move(probs), nullptr, {}));
}

SpacePtr FiniteProbSpace::uniform(std::size_t atoms) {
  if (atoms == 0) throw ValidationError("uniform space needs at least one atom");
  return create(std::vector<double>(atoms, 1.0 / static_cast<double>(atoms)));
}

SpacePtr FiniteProbSpace::refine(const SpacePtr& parent, std::vector<double> probs,
                                 std::vector<std::size_t> parent_atoms) {
  if (!parent) throw ValidationError("refinement needs a parent space");
  if (probs.size() != parent_atoms.size())
    throw ValidationError("refinement: probability and parent-link lengths differ");
  check_probabilities(probs);
  std::vector<double> mass(parent->size(), 0.0);
  for (std::size_t c = 0; c < probs.size(); ++c) {
    if (parent_atoms[c] >= parent->size())
      throw ValidationError("refinement: parent link out of range");
    mass[parent_atoms[c]] += probs[c];
  }
  for (std::size_t s = 0; s < mass.size(); ++s) {
    if (std::abs(mass[s] - parent->prob(s)) > kProbTol)
      throw ValidationError("refinement: children of atom " + std::to_string(s) +
                            " do not carry its probability");
  }
  return SpacePtr(new FiniteProbSpace(std::move(probs), parent, std::move(parent_atoms)));
}

bool FiniteProbSpace::descends_from(const FiniteProbSpace& ancestor) const {
  const FiniteProbSpace* cur = this;
  while (cur) {
    if (cur == &ancestor) return true;
    cur = cur->parent_.get();
  }
  return false;
}

std::vector<std::size_t> FiniteProbSpace::ancestor_map(const FiniteProbSpace& ancestor) const {
  std::vector<std::size_t> map(size());
  std::iota(map.begin(), map.end(), std::size_t{0});
  const FiniteProbSpace* cur = this;
  while (cur != &ancestor) {
    if (!cur->parent_) throw SpaceMismatch("space is not a refinement of the requested ancestor");
    for (auto& a : map) a = cur->parent_atoms_[a];
    cur = cur->parent_.get();
  }
  return map;
}

// ---------------------------------------------------------------------------

RandomVariable::RandomVariable(SpacePtr space, std::vector<double> values)
    : space_(std::move(space)), values_(std::move(values)) {
  if (!space_) throw ValidationError("random variable needs a space");
  if (values_.size() != space_->size())
    throw ValidationError("random variable length " + std::to_string(values_.size()) +
                          " does not match " + std::to_string(space_->size()) + " atoms");
  for (double v : values_)
    if (!std::isfinite(v)) throw ValidationError("random variable has a non-finite value");
}

double RandomVariable::min() const { return *std::min_element(values_.begin(), values_.end()); }
double RandomVariable::max() const { return *std::max_element(values_.begin(), values_.end()); }

RandomVariable RandomVariable::map(const std::function<double(double)>& f) const {
  std::vector<double> out(values_.size());
  std::transform(values_.begin(), values_.end(), out.begin(), f);
  return {space_, std::move(out)};
}

RandomVariable RandomVariable::scaled(double c) const {
  return map([c](double v) { return c * v; });
}

RandomVariable RandomVariable::lifted_to(const SpacePtr& finer) const {
  if (finer.get() == space_.get()) return *this;
  auto map = finer->ancestor_map(*space_);
  std::vector<double> out(map.size());
  for (std::size_t c = 0; c < map.size(); ++c) out[c] = values_[map[c]];
  return {finer, std::move(out)};
}

RandomVariable operator+(const RandomVariable& a, const RandomVariable& b) {
  require_same_space(a.space(), b.space(), "sum");
  std::vector<double> out(a.size());
  for (std::size_t s = 0; s < a.size(); ++s) out[s] = a[s] + b[s];
  return {a.space(), std::move(out)};
}

RandomVariable operator-(const RandomVariable& a, const RandomVariable& b) {
  require_same_space(a.space(), b.space(), "difference");
  std::vector<double> out(a.size());
  for (std::size_t s = 0; s < a.size(); ++s) out[s] = a[s] - b[s];
  return {a.space(), std::move(out)};
}

// ---------------------------------------------------------------------------

PriceMeasure::PriceMeasure(SpacePtr space, std::vector<double> density)
    : space_(std::move(space)), density_(std::move(density)) {
  if (!space_) throw ValidationError("price measure needs a space");
  if (density_.size() != space_->size())
    throw ValidationError("price density length does not match the space");
  double mean = 0.0;
  for (std::size_t s = 0; s < density_.size(); ++s) {
    if (!std::isfinite(density_[s]) || density_[s] < 0.0)
      throw ValidationError("price density must be finite and nonnegative");
    mean += space_->prob(s) * density_[s];
  }
  if (std::abs(mean - 1.0) > kProbTol)
    throw ValidationError("price density has expectation " + std::to_string(mean) + ", not 1");
}

PriceMeasure PriceMeasure::uniform(SpacePtr space) {
  std::size_t m = space->size();
  return {std::move(space), std::vector<double>(m, 1.0)};
}

PriceMeasure PriceMeasure::normalized(SpacePtr space, std::vector<double> weights) {
  if (weights.size() != space->size())
    throw ValidationError("price weights length does not match the space");
  double mean = 0.0;
  for (std::size_t s = 0; s < weights.size(); ++s) {
    if (!std::isfinite(weights[s]) || weights[s] < 0.0)
      throw ValidationError("price weights must be finite and nonnegative");
    mean += space->prob(s) * weights[s];
  }
  if (!(mean > 0.0)) throw DomainError("price weights vanish everywhere");
  for (auto& w : weights) w /= mean;
  return {std::move(space), std::move(weights)};
}

PriceMeasure PriceMeasure::lifted_to(const SpacePtr& finer) const {
  if (finer.get() == space_.get()) return *this;
  auto map = finer->ancestor_map(*space_);
  std::vector<double> out(map.size());
  for (std::size_t c = 0; c < map.size(); ++c) out[c] = density_[map[c]];
  return {finer, std::move(out)};
}

// ---------------------------------------------------------------------------

Allocation::Allocation(RandomVariable total, std::vector<std::vector<double>> components)
    : total_(std::move(total)), components_(std::move(components)) {
  if (components_.empty()) throw ValidationError("allocation needs at least one agent");
  for (const auto& c : components_)
    if (c.size() != total_.size())
      throw ValidationError("allocation component length does not match the space");
  for (std::size_t s = 0; s < total_.size(); ++s) {
    double sum = 0.0, scale = 1.0;
    for (const auto& c : components_) {
      if (!std::isfinite(c[s])) throw ValidationError("allocation has a non-finite value");
      sum += c[s];
      scale += std::abs(c[s]);
    }
    if (std::abs(sum - total_[s]) > kProbTol * std::max(scale, std::abs(total_[s])))
      throw ValidationError("allocation components do not sum to the total at atom " +
                            std::to_string(s));
  }
}

RandomVariable Allocation::component(std::size_t i) const {
  return {total_.space(), components_.at(i)};
}

Allocation Allocation::lifted_to(const SpacePtr& finer) const {
  if (finer.get() == space().get()) return *this;
  auto map = finer->ancestor_map(*space());
  std::vector<std::vector<double>> comps(agents(), std::vector<double>(map.size()));
  for (std::size_t i = 0; i < agents(); ++i)
    for (std::size_t c = 0; c < map.size(); ++c) comps[i][c] = components_[i][map[c]];
  return {total_.lifted_to(finer), std::move(comps)};
}

double PartitionVector::probability_of(std::size_t agent) const {
  double p = 0.0;
  for (std::size_t s = 0; s < owner.size(); ++s)
    if (owner[s] == agent) p += space->prob(s);
  return p;
}

// ---------------------------------------------------------------------------

Extension extend_with_uniform_cuts(const SpacePtr& space,
                                   const std::vector<std::vector<double>>& cuts) {
  if (cuts.size() != space->size())
    throw ValidationError("cut lists: expected one list per atom (" +
                          std::to_string(space->size()) + "), got " + std::to_string(cuts.size()));
  const std::size_t width = cuts.front().size();
  if (width < 2) throw ValidationError("cut list needs at least the endpoints 0 and 1");
  std::vector<double> probs;
  std::vector<std::size_t> parents, owners;
  for (std::size_t s = 0; s < cuts.size(); ++s) {
    const auto& c = cuts[s];
    if (c.size() != width) throw ValidationError("cut lists must all have the same length");
    if (std::abs(c.front()) > kProbTol || std::abs(c.back() - 1.0) > kProbTol)
      throw ValidationError("cut list for atom " + std::to_string(s) + " must run from 0 to 1");
    for (std::size_t k = 1; k < c.size(); ++k)
      if (!(c[k] >= c[k - 1]))
        throw ValidationError("cut list for atom " + std::to_string(s) + " is not nondecreasing");
    for (std::size_t k = 0; k + 1 < c.size(); ++k) {
      double lo = k == 0 ? 0.0 : c[k];
      double hi = k + 2 == c.size() ? 1.0 : c[k + 1];
      double w = hi - lo;
      if (w <= 0.0) continue;
      probs.push_back(space->prob(s) * w);
      parents.push_back(s);
      owners.push_back(k);
    }
  }
  auto child = FiniteProbSpace::refine(space, std::move(probs), std::move(parents));
  return {child, PartitionVector{child, std::move(owners), width - 1}};
}

Extension extend_with_independent_categorical(const SpacePtr& space,
                                              const std::vector<double>& theta) {
  if (theta.empty()) throw ValidationError("categorical weights are empty");
  double total = 0.0;
  for (double t : theta) {
    if (!std::isfinite(t) || t < -kProbTol)
      throw ValidationError("categorical weights must be nonnegative");
    total += t;
  }
  if (std::abs(total - 1.0) > kProbTol)
    throw ValidationError("categorical weights sum to " + std::to_string(total) + ", not 1");
  std::vector<double> probs;
  std::vector<std::size_t> parents, owners;
  for (std::size_t s = 0; s < space->size(); ++s) {
    for (std::size_t i = 0; i < theta.size(); ++i) {
      if (theta[i] <= 0.0) continue;
      probs.push_back(space->prob(s) * theta[i]);
      parents.push_back(s);
      owners.push_back(i);
    }
  }
  auto child = FiniteProbSpace::refine(space, std::move(probs), std::move(parents));
  return {child, PartitionVector{child, std::move(owners), theta.size()}};
}

// ---------------------------------------------------------------------------

double expectation(const RandomVariable& x) {
  double e = 0.0;
  for (std::size_t s = 0; s < x.size(); ++s) e += x.space()->prob(s) * x[s];
  return e;
}

double expectation(const RandomVariable& x, const PriceMeasure& q) {
  require_same_space(x.space(), q.space(), "priced expectation");
  double e = 0.0;
  for (std::size_t s = 0; s < x.size(); ++s) e += x.space()->prob(s) * q[s] * x[s];
  return e;
}

double stop_loss(const RandomVariable& x, double t) {
  double e = 0.0;
  for (std::size_t s = 0; s < x.size(); ++s)
    if (x[s] > t) e += x.space()->prob(s) * (x[s] - t);
  return e;
}

std::vector<std::pair<double, double>> merged_distribution(const RandomVariable& x, double tol) {
  std::vector<std::pair<double, double>> atoms;
  atoms.reserve(x.size());
  for (std::size_t s = 0; s < x.size(); ++s) atoms.emplace_back(x[s], x.space()->prob(s));
  std::sort(atoms.begin(), atoms.end());
  std::vector<std::pair<double, double>> out;
  std::size_t k = 0;
  while (k < atoms.size()) {
    double anchor = atoms[k].first, mass = 0.0, moment = 0.0;
    while (k < atoms.size() && atoms[k].first - anchor <= tol) {
      mass += atoms[k].second;
      moment += atoms[k].second * atoms[k].first;
      ++k;
    }
    out.emplace_back(moment / mass, mass);
  }
  return out;
}

bool same_distribution(const RandomVariable& x, const RandomVariable& y, double tol) {
  auto a = merged_distribution(x, tol), b = merged_distribution(y, tol);
  if (a.size() != b.size()) return false;
  for (std::size_t k = 0; k < a.size(); ++k)
    if (std::abs(a[k].first - b[k].first) > tol || std::abs(a[k].second - b[k].second) > tol)
      return false;
  return true;
}

namespace {

// Stop-loss transform evaluated at ascending points in one sweep.
std::vector<double> stop_loss_at(const RandomVariable& x, const std::vector<double>& ts) {
  std::vector<std::pair<double, double>> atoms;
  for (std::size_t s = 0; s < x.size(); ++s) atoms.emplace_back(x[s], x.space()->prob(s));
  std::sort(atoms.begin(), atoms.end());
  // Tail sums from the top: mass and first moment strictly above a point.
  std::vector<double> tail_mass(atoms.size() + 1, 0.0), tail_moment(atoms.size() + 1, 0.0);
  for (std::size_t k = atoms.size(); k-- > 0;) {
    tail_mass[k] = tail_mass[k + 1] + atoms[k].second;
    tail_moment[k] = tail_moment[k + 1] + atoms[k].second * atoms[k].first;
  }
  std::vector<double> out(ts.size());
  std::size_t k = 0;
  for (std::size_t j = 0; j < ts.size(); ++j) {
    while (k < atoms.size() && atoms[k].first <= ts[j]) ++k;
    out[j] = std::max(0.0, tail_moment[k] - ts[j] * tail_mass[k]);
  }
  return out;
}

}  // namespace

OrderVerdict convex_order_leq(const RandomVariable& x, const RandomVariable& y) {
  OrderVerdict v;
  v.mean_gap = expectation(y) - expectation(x);
  std::vector<double> ts(x.values());
  ts.insert(ts.end(), y.values().begin(), y.values().end());
  std::sort(ts.begin(), ts.end());
  ts.erase(std::unique(ts.begin(), ts.end()), ts.end());
  auto sx = stop_loss_at(x, ts), sy = stop_loss_at(y, ts);
  double worst = -std::numeric_limits<double>::infinity();
  std::size_t at = 0;
  for (std::size_t j = 0; j < ts.size(); ++j) {
    double gap = sx[j] - sy[j];
    if (gap > worst) {
      worst = gap;
      at = j;
    }
  }
  if (worst > kOrderTol) {
    v.witness_t = ts[at];
    v.witness_gap = worst;
  }
  v.holds = std::abs(v.mean_gap) <= kOrderTol && worst <= kOrderTol;
  v.strict = v.holds && !same_distribution(x, y);
  return v;
}

// ---------------------------------------------------------------------------

namespace {

// Finds atoms s, t with a[s] < a[t] - tol and b[s] > b[t] + tol.
std::optional<std::pair<std::size_t, std::size_t>> discordant_pair(const std::vector<double>& a,
                                                                   const std::vector<double>& b) {
  std::vector<std::size_t> order(a.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t l, std::size_t r) { return a[l] < a[r]; });
  double best = -std::numeric_limits<double>::infinity();
  std::size_t best_atom = 0, p = 0;
  for (std::size_t t : order) {
    while (p < order.size() && a[order[p]] < a[t] - kDependenceTol) {
      if (b[order[p]] > best) {
        best = b[order[p]];
        best_atom = order[p];
      }
      ++p;
    }
    if (best > b[t] + kDependenceTol) return std::make_pair(best_atom, t);
  }
  return std::nullopt;
}

}  // namespace

DependenceVerdict check_dependence(const Allocation& alloc, DependenceMode mode) {
  DependenceVerdict v;
  const std::size_t n = alloc.agents();
  if (mode == DependenceMode::jackpot) {
    for (std::size_t s = 0; s < alloc.space()->size(); ++s) {
      std::optional<std::size_t> positive;
      for (std::size_t i = 0; i < n; ++i) {
        double val = alloc.values(i)[s];
        if (val < -kDependenceTol) {
          v.holds = false;
          v.violation = DependenceViolation{i, i, s, s};
          return v;
        }
        if (val > kDependenceTol) {
          if (positive) {
            v.holds = false;
            v.violation = DependenceViolation{*positive, i, s, s};
            return v;
          }
          positive = i;
        }
      }
    }
    return v;
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      std::vector<double> b = alloc.values(j);
      if (mode == DependenceMode::counter_monotonic)
        for (auto& x : b) x = -x;
      if (auto pair = discordant_pair(alloc.values(i), b)) {
        v.holds = false;
        v.violation = DependenceViolation{i, j, pair->first, pair->second};
        return v;
      }
    }
  }
  return v;
}

CounterMonotonicRepresentation counter_monotonic_representation(const Allocation& alloc) {
  CounterMonotonicRepresentation rep;
  const std::size_t n = alloc.agents(), m = alloc.space()->size();
  std::size_t live = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& v = alloc.values(i);
    auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    if (*hi - *lo > kDependenceTol) ++live;
  }
  if (live < 3) {
    rep.status = RepresentationStatus::deferred_to_pairwise;
    return rep;
  }
  for (ShiftForm form : {ShiftForm::lower, ShiftForm::upper}) {
    std::vector<double> shift(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& v = alloc.values(i);
      shift[i] = form == ShiftForm::lower ? *std::min_element(v.begin(), v.end())
                                          : *std::max_element(v.begin(), v.end());
    }
    const double base = std::accumulate(shift.begin(), shift.end(), 0.0);
    std::vector<std::size_t> owner(m, 0);
    bool ok = true;
    for (std::size_t s = 0; s < m && ok; ++s) {
      std::optional<std::size_t> found;
      for (std::size_t i = 0; i < n; ++i) {
        double dev = alloc.values(i)[s] - shift[i];
        bool off = form == ShiftForm::lower ? dev > kOrderTol : dev < -kOrderTol;
        if (!off) continue;
        if (found) {
          ok = false;
          break;
        }
        found = i;
      }
      if (found) owner[s] = *found;
    }
    if (!ok) continue;
    for (std::size_t s = 0; s < m && ok; ++s)
      for (std::size_t i = 0; i < n; ++i) {
        double rebuilt = (owner[s] == i ? alloc.total()[s] - base : 0.0) + shift[i];
        if (std::abs(rebuilt - alloc.values(i)[s]) > kOrderTol) {
          ok = false;
          break;
        }
      }
    if (!ok) continue;
    rep.status = RepresentationStatus::represented;
    rep.form = form;
    rep.shifts = std::move(shift);
    rep.partition = PartitionVector{alloc.space(), std::move(owner), n};
    return rep;
  }
  rep.status = RepresentationStatus::not_representable;
  return rep;
}

}  // namespace riskshare
