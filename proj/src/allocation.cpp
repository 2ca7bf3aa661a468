#include "riskshare/allocation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <string>

namespace riskshare {

namespace {

void require_nonnegative_total(const RandomVariable& total) {
  for (double v : total.values())
    if (v < -kDependenceTol) throw DomainError("aggregate risk takes a negative value");
}

void require_lambda(const std::vector<double>& lambda, std::size_t n) {
  if (lambda.size() != n)
    throw ValidationError("weight vector has " + std::to_string(lambda.size()) +
                          " entries for " + std::to_string(n) + " agents");
  for (double l : lambda)
    if (!std::isfinite(l) || l < 0.0) throw ValidationError("weights must be nonnegative");
}

void require_eu(const std::vector<Agent>& agents, Attitude wanted, const char* op) {
  for (const auto& a : agents) {
    if (!a.expected_utility())
      throw PreconditionError(std::string(op) + ": agent " + a.name + " is not an expected-utility agent");
    bool ok = a.attitude == wanted ||
              (wanted == Attitude::risk_averse && a.attitude == Attitude::neutral);
    if (!ok)
      throw PreconditionError(std::string(op) + ": agent " + a.name + " is " +
                              to_string(a.attitude) + ", expected " + to_string(wanted));
  }
}

std::vector<double> utilities_of(const Allocation& alloc, const std::vector<Agent>& agents) {
  std::vector<double> u(agents.size());
  for (std::size_t i = 0; i < agents.size(); ++i)
    u[i] = agent_utility(alloc.component(i), agents[i]);
  return u;
}

double weighted(const std::vector<double>& lambda, const std::vector<double>& u) {
  double v = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) v += lambda[i] * u[i];
  return v;
}

}  // namespace

// ---------------------------------------------------------------------------

ImprovementResult counter_monotonic_improve(const Allocation& alloc) {
  const std::size_t n = alloc.agents(), m = alloc.space()->size();
  std::vector<std::vector<double>> cuts(m, std::vector<double>(n + 1, 1.0));
  for (std::size_t s = 0; s < m; ++s) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double v = alloc.values(i)[s];
      if (v < -kDependenceTol)
        throw DomainError("component " + std::to_string(i) + " is negative at atom " +
                          std::to_string(s));
      total += std::max(v, 0.0);
    }
    cuts[s][0] = 0.0;
    if (total <= 0.0) continue;  // nothing to share: agent 0 owns the atom
    double run = 0.0;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      run += std::max(alloc.values(i)[s], 0.0);
      cuts[s][i + 1] = std::min(run / total, 1.0);
    }
  }
  Extension ext = extend_with_uniform_cuts(alloc.space(), cuts);
  const RandomVariable total = alloc.total().lifted_to(ext.space);
  std::vector<std::vector<double>> comps(n, std::vector<double>(ext.space->size(), 0.0));
  for (std::size_t c = 0; c < ext.space->size(); ++c) comps[ext.partition.owner[c]][c] = total[c];
  Allocation improved(total, std::move(comps));
  return ImprovementResult{std::move(ext), std::move(improved), std::move(cuts), ShiftForm::lower,
                           std::vector<double>(n, 0.0)};
}

ImprovementResult shifted_improve(const Allocation& alloc, ShiftDirection direction) {
  const std::size_t n = alloc.agents();
  if (direction == ShiftDirection::automatic) {
    bool nonneg = true, nonpos = true;
    for (const auto& c : alloc.components())
      for (double v : c) {
        nonneg = nonneg && v >= -kDependenceTol;
        nonpos = nonpos && v <= kDependenceTol;
      }
    if (nonneg) return counter_monotonic_improve(alloc);
    direction = nonpos ? ShiftDirection::upper : ShiftDirection::lower;
  }
  const bool lower = direction == ShiftDirection::lower;
  std::vector<double> shift(n);
  std::vector<std::vector<double>> moved(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& v = alloc.values(i);
    shift[i] = lower ? *std::min_element(v.begin(), v.end()) : *std::max_element(v.begin(), v.end());
    moved[i].resize(v.size());
    for (std::size_t s = 0; s < v.size(); ++s)
      moved[i][s] = lower ? std::max(v[s] - shift[i], 0.0) : std::max(shift[i] - v[s], 0.0);
  }
  std::vector<double> moved_total(alloc.space()->size(), 0.0);
  for (const auto& c : moved)
    for (std::size_t s = 0; s < c.size(); ++s) moved_total[s] += c[s];
  ImprovementResult inner = counter_monotonic_improve(
      Allocation(RandomVariable(alloc.space(), moved_total), std::move(moved)));
  const SpacePtr& ext = inner.extension.space;
  std::vector<std::vector<double>> back(n, std::vector<double>(ext->size()));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < ext->size(); ++c) {
      double y = inner.allocation.values(i)[c];
      back[i][c] = lower ? y + shift[i] : shift[i] - y;
    }
  inner.allocation = Allocation(alloc.total().lifted_to(ext), std::move(back));
  inner.form = lower ? ShiftForm::lower : ShiftForm::upper;
  inner.shifts = std::move(shift);
  return inner;
}

// ---------------------------------------------------------------------------

WeightedChoice v_lambda(const std::vector<double>& lambda, const std::vector<Agent>& agents,
                        double x) {
  require_lambda(lambda, agents.size());
  WeightedChoice best{-std::numeric_limits<double>::infinity(), 0};
  for (std::size_t i = 0; i < agents.size(); ++i) {
    double v = lambda[i] * agents[i].utility(x);
    if (v > best.value) best = {v, i};
  }
  return best;
}

LambdaOptimum rs_lambda_optimal(const std::vector<double>& lambda,
                                const std::vector<Agent>& agents, const RandomVariable& total) {
  require_lambda(lambda, agents.size());
  require_eu(agents, Attitude::risk_seeking, "risk-seeking optimum");
  require_nonnegative_total(total);
  const std::size_t n = agents.size(), m = total.size();
  std::vector<std::vector<double>> comps(n, std::vector<double>(m, 0.0));
  double value = 0.0;
  for (std::size_t s = 0; s < m; ++s) {
    auto choice = v_lambda(lambda, agents, std::max(total[s], 0.0));
    comps[choice.argmax][s] = total[s];
    value += total.space()->prob(s) * choice.value;
  }
  Allocation alloc(total, std::move(comps));
  auto u = utilities_of(alloc, agents);
  return {std::move(alloc), value, std::move(u)};
}

std::vector<double> water_fill(const std::vector<double>& lambda, const std::vector<Agent>& agents,
                               const std::vector<std::size_t>& members, double x) {
  const std::size_t k = members.size();
  std::vector<double> shares(k, 0.0);
  if (k == 0 || x <= 0.0) return shares;
  if (k == 1) {
    shares[0] = x;
    return shares;
  }
  bool any_weight = false;
  for (auto i : members) any_weight = any_weight || lambda[i] > 0.0;
  if (!any_weight) {
    std::fill(shares.begin(), shares.end(), x / static_cast<double>(k));
    return shares;
  }
  auto demand = [&](double mu, std::vector<double>& out) {
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t i = members[j];
      if (lambda[i] <= 0.0)
        out[j] = mu <= 0.0 ? x : 0.0;
      else
        out[j] = agents[i].utility.inverse_derivative(mu / lambda[i], x);
      sum += out[j];
    }
    return sum;
  };
  // Above this level every member demands at most x/k.
  double hi = 0.0;
  for (auto i : members)
    hi = std::max(hi, lambda[i] * agents[i].utility.derivative(x / static_cast<double>(k), Side::left));
  hi = hi * (1.0 + 1e-12) + std::numeric_limits<double>::min();
  double lo = 0.0;
  std::vector<double> dlo(k), dhi(k);
  double slo = demand(lo, dlo), shi = demand(hi, dhi);
  for (int it = 0; it < 200 && hi - lo > 1e-17 * hi; ++it) {
    double mid = 0.5 * (lo + hi);
    std::vector<double> d(k);
    double sm = demand(mid, d);
    if (sm >= x) {
      lo = mid;
      slo = sm;
      dlo.swap(d);
    } else {
      hi = mid;
      shi = sm;
      dhi.swap(d);
    }
  }
  // Blend the bracketing demands so the shares add up to x exactly; this
  // also splits flat stretches of a derivative.
  double theta = slo > shi ? (x - shi) / (slo - shi) : 1.0;
  theta = std::clamp(theta, 0.0, 1.0);
  double sum = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    shares[j] = dhi[j] + theta * (dlo[j] - dhi[j]);
    sum += shares[j];
  }
  if (sum > 0.0)
    for (auto& s : shares) s *= x / sum;
  return shares;
}

LambdaOptimum ra_lambda_optimal(const std::vector<double>& lambda,
                                const std::vector<Agent>& agents, const RandomVariable& total) {
  require_lambda(lambda, agents.size());
  require_eu(agents, Attitude::risk_averse, "risk-averse optimum");
  require_nonnegative_total(total);
  const std::size_t n = agents.size(), m = total.size();
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::vector<std::vector<double>> comps(n, std::vector<double>(m, 0.0));
  std::map<double, std::vector<double>> cache;
  double value = 0.0;
  for (std::size_t s = 0; s < m; ++s) {
    double x = std::max(total[s], 0.0);
    auto it = cache.find(x);
    if (it == cache.end()) it = cache.emplace(x, water_fill(lambda, agents, all, x)).first;
    double v = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      comps[i][s] = it->second[i];
      v += lambda[i] * agents[i].utility(it->second[i]);
    }
    value += total.space()->prob(s) * v;
  }
  Allocation alloc(total, std::move(comps));
  auto u = utilities_of(alloc, agents);
  return {std::move(alloc), value, std::move(u)};
}

// ---------------------------------------------------------------------------

namespace {

double seeking_value(const std::vector<double>& lambda, const std::vector<Agent>& agents,
                     const std::vector<std::size_t>& seeking, double y, std::size_t* who) {
  double best = 0.0;
  std::size_t arg = seeking.empty() ? 0 : seeking.front();
  bool first = true;
  for (auto i : seeking) {
    double v = lambda[i] * agents[i].utility(y);
    if (first || v > best) {
      best = v;
      arg = i;
      first = false;
    }
  }
  if (who) *who = arg;
  return best;
}

double averse_value(const std::vector<double>& lambda, const std::vector<Agent>& agents,
                    const std::vector<std::size_t>& averse, double z) {
  auto shares = water_fill(lambda, agents, averse, z);
  double v = 0.0;
  for (std::size_t j = 0; j < averse.size(); ++j) v += lambda[averse[j]] * agents[averse[j]].utility(shares[j]);
  return v;
}

}  // namespace

SplitChoice optimal_split(const std::vector<double>& lambda, const std::vector<Agent>& agents,
                          const std::vector<std::size_t>& seeking,
                          const std::vector<std::size_t>& averse, double x,
                          const MixedOptions& options) {
  if (x < -kDependenceTol) throw DomainError("cannot split a negative amount");
  x = std::max(x, 0.0);
  if (averse.empty()) return {x, seeking_value(lambda, agents, seeking, x, nullptr)};
  if (seeking.empty()) return {0.0, averse_value(lambda, agents, averse, x)};
  if (x == 0.0) return {0.0, 0.0};
  const std::size_t g = std::max<std::size_t>(options.outer_grid, 2);
  auto f = [&](double y) {
    y = std::clamp(y, 0.0, x);
    return seeking_value(lambda, agents, seeking, y, nullptr) +
           averse_value(lambda, agents, averse, x - y);
  };
  std::vector<double> ys(g + 1), fs(g + 1);
  for (std::size_t k = 0; k <= g; ++k) {
    ys[k] = k == g ? x : x * static_cast<double>(k) / static_cast<double>(g);
    fs[k] = f(ys[k]);
  }
  std::vector<std::size_t> peaks;
  for (std::size_t k = 0; k <= g; ++k) {
    bool left = k == 0 || fs[k] >= fs[k - 1];
    bool right = k == g || fs[k] >= fs[k + 1];
    if (left && right) peaks.push_back(k);
  }
  std::sort(peaks.begin(), peaks.end(), [&](std::size_t a, std::size_t b) { return fs[a] > fs[b]; });
  if (peaks.size() > 8) peaks.resize(8);
  SplitChoice best{ys[peaks.front()], fs[peaks.front()]};
  const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
  for (auto k : peaks) {
    double a = ys[k == 0 ? 0 : k - 1], b = ys[k == g ? g : k + 1];
    double c = b - phi * (b - a), d = a + phi * (b - a);
    double fc = f(c), fd = f(d);
    for (int it = 0; it < options.refine_iters; ++it) {
      if (fc >= fd) {
        b = d;
        d = c;
        fd = fc;
        c = b - phi * (b - a);
        fc = f(c);
      } else {
        a = c;
        c = d;
        fc = fd;
        d = a + phi * (b - a);
        fd = f(d);
      }
    }
    for (double y : {c, d}) {
      double v = f(y);
      if (v > best.value) best = {std::clamp(y, 0.0, x), v};
    }
  }
  return best;
}

LambdaOptimum mixed_lambda_optimal(const std::vector<double>& lambda,
                                   const std::vector<Agent>& agents,
                                   const std::vector<std::size_t>& seeking,
                                   const std::vector<std::size_t>& averse,
                                   const RandomVariable& total, const MixedOptions& options) {
  require_lambda(lambda, agents.size());
  require_nonnegative_total(total);
  std::vector<bool> seen(agents.size(), false);
  for (auto group : {&seeking, &averse})
    for (auto i : *group) {
      if (i >= agents.size() || seen[i]) throw ValidationError("groups must partition the agents");
      seen[i] = true;
    }
  if (std::find(seen.begin(), seen.end(), false) != seen.end())
    throw ValidationError("groups must partition the agents");
  std::vector<Agent> group_s, group_t;
  for (auto i : seeking) group_s.push_back(agents[i]);
  for (auto i : averse) group_t.push_back(agents[i]);
  require_eu(group_s, Attitude::risk_seeking, "mixed optimum");
  require_eu(group_t, Attitude::risk_averse, "mixed optimum");
  if (seeking.empty()) return ra_lambda_optimal(lambda, agents, total);
  if (averse.empty()) return rs_lambda_optimal(lambda, agents, total);

  const std::size_t n = agents.size(), m = total.size();
  std::vector<std::vector<double>> comps(n, std::vector<double>(m, 0.0));
  std::map<double, std::vector<double>> cache;
  double value = 0.0;
  for (std::size_t s = 0; s < m; ++s) {
    double x = std::max(total[s], 0.0);
    auto it = cache.find(x);
    if (it == cache.end()) {
      std::vector<double> row(n, 0.0);
      SplitChoice split = optimal_split(lambda, agents, seeking, averse, x, options);
      double y = split.seeking_share;
      if (!seeking.empty()) {
        std::size_t who = seeking.front();
        seeking_value(lambda, agents, seeking, y, &who);
        row[who] = y;
      }
      auto shares = water_fill(lambda, agents, averse, x - y);
      for (std::size_t j = 0; j < averse.size(); ++j) row[averse[j]] = shares[j];
      it = cache.emplace(x, std::move(row)).first;
    }
    double v = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      comps[i][s] = it->second[i];
      v += lambda[i] * agents[i].utility(it->second[i]);
    }
    value += total.space()->prob(s) * v;
  }
  Allocation alloc(total, std::move(comps));
  auto u = utilities_of(alloc, agents);
  return {std::move(alloc), value, std::move(u)};
}

double split_threshold(const std::vector<double>& lambda, const std::vector<Agent>& agents,
                       const std::vector<std::size_t>& seeking,
                       const std::vector<std::size_t>& averse, double lo, double hi,
                       const MixedOptions& options) {
  auto seeking_takes_most = [&](double x) {
    return optimal_split(lambda, agents, seeking, averse, x, options).seeking_share > 0.5 * x;
  };
  bool at_lo = seeking_takes_most(lo), at_hi = seeking_takes_most(hi);
  if (at_lo == at_hi) throw PreconditionError("split does not switch inside the bracket");
  for (int it = 0; it < 200 && hi - lo > 1e-15 * std::max(1.0, hi); ++it) {
    double mid = 0.5 * (lo + hi);
    if (seeking_takes_most(mid) == at_lo)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

// ---------------------------------------------------------------------------

ParetoVerdict pareto_check_rs(const Allocation& alloc, const std::vector<Agent>& agents) {
  const std::size_t n = agents.size();
  if (alloc.agents() != n) throw ValidationError("allocation and agent counts differ");
  require_eu(agents, Attitude::risk_seeking, "Pareto check");
  ParetoVerdict verdict;
  auto jp = check_dependence(alloc, DependenceMode::jackpot);
  verdict.jackpot = jp.holds;
  if (!jp.holds) {
    verdict.jackpot_violation = jp.violation;
    return verdict;
  }
  // Difference constraints y_j - y_i <= log u_i(x) - log u_j(x) for every
  // atom owned by i, with y = log lambda.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> bound(n, std::vector<double>(n, inf));
  for (std::size_t s = 0; s < alloc.space()->size(); ++s) {
    const double x = alloc.total()[s];
    if (x <= kDependenceTol) continue;
    std::size_t owner = n;
    for (std::size_t i = 0; i < n; ++i)
      if (alloc.values(i)[s] > kDependenceTol) owner = i;
    if (owner == n) continue;
    const double ui = agents[owner].utility(x);
    if (!(ui > 0.0)) continue;  // zero-utility atoms impose no weight constraint
    for (std::size_t j = 0; j < n; ++j) {
      if (j == owner) continue;
      const double uj = agents[j].utility(x);
      if (uj <= 0.0) continue;
      bound[owner][j] = std::min(bound[owner][j], std::log(ui) - std::log(uj) + 1e-9);
    }
  }
  std::vector<double> dist(n, 0.0);
  std::vector<std::size_t> pred(n, n);
  std::size_t touched = n;
  for (std::size_t round = 0; round <= n; ++round) {
    touched = n;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        if (bound[i][j] == inf) continue;
        if (dist[i] + bound[i][j] < dist[j] - 1e-15) {
          dist[j] = dist[i] + bound[i][j];
          pred[j] = i;
          touched = j;
        }
      }
    if (touched == n) break;
  }
  if (touched != n) {
    std::size_t v = touched;
    for (std::size_t k = 0; k < n; ++k) v = pred[v];
    std::size_t start = v;
    do {
      verdict.cycle.push_back(v);
      v = pred[v];
    } while (v != start && verdict.cycle.size() <= n);
    std::reverse(verdict.cycle.begin(), verdict.cycle.end());
    return verdict;
  }
  const double top = *std::max_element(dist.begin(), dist.end());
  verdict.lambda.resize(n);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += verdict.lambda[i] = std::exp(dist[i] - top);
  for (auto& l : verdict.lambda) l /= sum;
  verdict.pareto_optimal = true;
  return verdict;
}

// ---------------------------------------------------------------------------

LambdaOptimum lambda_optimal(const std::vector<double>& lambda, const std::vector<Agent>& agents,
                             const RandomVariable& total, const MixedOptions& options) {
  std::vector<std::size_t> seeking, averse, other;
  for (std::size_t i = 0; i < agents.size(); ++i) {
    if (!agents[i].expected_utility()) {
      other.push_back(i);
      continue;
    }
    switch (agents[i].attitude) {
      case Attitude::risk_seeking: seeking.push_back(i); break;
      case Attitude::risk_averse:
      case Attitude::neutral: averse.push_back(i); break;
      case Attitude::mixed: other.push_back(i); break;
    }
  }
  if (!other.empty())
    throw PreconditionError("weighted optimum needs risk-seeking or risk-averse expected-utility agents");
  if (averse.empty()) return rs_lambda_optimal(lambda, agents, total);
  if (seeking.empty()) return ra_lambda_optimal(lambda, agents, total);
  return mixed_lambda_optimal(lambda, agents, seeking, averse, total, options);
}

std::vector<UpfPoint> upf_trace(const std::vector<Agent>& agents, const RandomVariable& total,
                                const std::vector<std::vector<double>>& lambda_grid,
                                const MixedOptions& options) {
  std::vector<UpfPoint> out;
  out.reserve(lambda_grid.size());
  for (const auto& lambda : lambda_grid) {
    auto opt = lambda_optimal(lambda, agents, total, options);
    out.push_back({lambda, opt.utilities, weighted(lambda, opt.utilities)});
  }
  return out;
}

std::vector<std::vector<double>> simplex_grid(std::size_t agents, std::size_t steps) {
  if (agents == 0 || steps == 0) throw ValidationError("simplex grid needs agents and steps");
  std::vector<std::vector<double>> out;
  std::vector<std::size_t> counts(agents, 0);
  // Enumerate compositions of `steps` into `agents` parts in lexicographic order.
  auto rec = [&](auto&& self, std::size_t i, std::size_t left) -> void {
    if (i + 1 == agents) {
      counts[i] = left;
      std::vector<double> point(agents);
      for (std::size_t k = 0; k < agents; ++k)
        point[k] = static_cast<double>(counts[k]) / static_cast<double>(steps);
      out.push_back(std::move(point));
      return;
    }
    for (std::size_t c = 0; c <= left; ++c) {
      counts[i] = c;
      self(self, i + 1, left - c);
    }
  };
  rec(rec, 0, steps);
  return out;
}

std::vector<UpfPoint> individually_rational(const std::vector<UpfPoint>& trace,
                                            const std::vector<double>& reservation) {
  std::vector<UpfPoint> out;
  for (const auto& p : trace) {
    if (p.utilities.size() != reservation.size())
      throw ValidationError("reservation utilities do not match the agent count");
    bool ok = true;
    for (std::size_t i = 0; i < reservation.size(); ++i)
      ok = ok && p.utilities[i] >= reservation[i] - 1e-12;
    if (ok) out.push_back(p);
  }
  return out;
}

}  // namespace riskshare
