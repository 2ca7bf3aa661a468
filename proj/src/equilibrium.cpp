#include "riskshare/equilibrium.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <functional>
#include <limits>
#include <numeric>
#include <random>

namespace riskshare {

namespace {

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

void require_rs_eu(const std::vector<Agent>& agents, const char* op) {
  for (const auto& a : agents)
    if (!a.expected_utility() || a.attitude != Attitude::risk_seeking)
      throw PreconditionError(std::string(op) + " needs risk-seeking expected-utility agents (" +
                              a.name + " is not)");
}

void require_identical(const std::vector<Agent>& agents, const char* op) {
  if (agents.empty()) throw ValidationError(std::string(op) + " needs at least one agent");
  for (const auto& a : agents)
    if (!(a.utility == agents.front().utility) || !(a.weighting == agents.front().weighting))
      throw PreconditionError(std::string(op) + " needs identical agents");
}

std::vector<double> unit_costs(const RandomVariable& total, const PriceMeasure& price) {
  std::vector<double> c(total.size());
  for (std::size_t s = 0; s < c.size(); ++s) c[s] = total.space()->prob(s) * price[s];
  return c;
}

double eu_value(const Agent& agent, const RandomVariable& total, const std::vector<double>& y) {
  double v = 0.0;
  for (std::size_t s = 0; s < y.size(); ++s) v += total.space()->prob(s) * agent.utility(y[s]);
  return v;
}

constexpr std::size_t kVertexGroupCap = 18;

// Priced atoms counted up to equal (total, density) pairs.
std::size_t distinct_priced_atoms(const RandomVariable& total, const std::vector<double>& cost) {
  std::vector<std::pair<double, double>> keys;
  for (std::size_t s = 0; s < total.size(); ++s) {
    if (cost[s] <= 0.0 || total[s] <= 0.0) continue;
    const double density = cost[s] / total.space()->prob(s);
    auto same = [&](const auto& k) {
      return k.first == total[s] && std::abs(k.second - density) <= 1e-13 * std::max(1.0, density);
    };
    if (std::none_of(keys.begin(), keys.end(), same)) keys.emplace_back(total[s], density);
  }
  return keys.size();
}

double any_value(const Agent& agent, const RandomVariable& total, const std::vector<double>& y) {
  return agent_utility(RandomVariable(total.space(), y), agent);
}

// Exact maximum of a convex expected utility over the budget polytope by
// enumerating its vertices: every coordinate at a bound except at most one.
// Atoms with the same total and price density are interchangeable once the
// binding atom may be randomized, so they are enumerated as one group.
IndividualOptimum vertex_search(const Agent& agent, const RandomVariable& total,
                                const std::vector<double>& cost, double budget) {
  const std::size_t m = total.size();
  const auto& sp = *total.space();
  std::vector<double> base(m, 0.0);
  struct Group {
    double value = 0.0, density = 0.0, prob = 0.0, cost = 0.0;
    std::vector<std::size_t> atoms;
  };
  std::vector<Group> groups;
  for (std::size_t s = 0; s < m; ++s) {
    if (cost[s] <= 0.0 || total[s] <= 0.0) {
      base[s] = std::max(total[s], 0.0);
      continue;
    }
    const double density = cost[s] / sp.prob(s);
    auto same = [&](const Group& g) {
      return g.value == total[s] && std::abs(g.density - density) <= 1e-13 * std::max(1.0, density);
    };
    auto it = std::find_if(groups.begin(), groups.end(), same);
    if (it == groups.end()) {
      groups.push_back(Group{total[s], density, 0.0, 0.0, {}});
      it = groups.end() - 1;
    }
    it->prob += sp.prob(s);
    it->cost += cost[s];
    it->atoms.push_back(s);
  }
  if (groups.size() > kVertexGroupCap) throw BudgetExceeded("vertex search: too many distinct atoms");
  const std::size_t g_count = groups.size();
  const double slack = 1e-15 * std::max(1.0, budget);
  std::vector<double> whole(g_count), gain(g_count);
  for (std::size_t g = 0; g < g_count; ++g) {
    whole[g] = groups[g].cost * groups[g].value;
    gain[g] = groups[g].prob * agent.utility(groups[g].value);
  }
  double best = -std::numeric_limits<double>::infinity();
  std::vector<char> in(g_count, 0), best_in;
  std::size_t best_frac = g_count;
  double best_amount = 0.0;
  bool best_mixed = false;
  std::function<void(std::size_t, double, double)> dfs = [&](std::size_t k, double spent, double value) {
    if (k == g_count) {
      double left = budget - spent;
      if (value > best) {
        best = value;
        best_in.assign(in.begin(), in.end());
        best_frac = g_count;
      }
      // The budget-binding group pays either a partial amount everywhere or
      // the full amount on part of its mass.
      for (std::size_t t = 0; t < g_count; ++t) {
        if (in[t] || whole[t] <= left) continue;
        const double amount = std::max(left, 0.0) / groups[t].cost;
        const double partial = groups[t].prob * agent.utility(amount);
        const double mixed = amount / groups[t].value * gain[t];
        const double v = value + std::max(partial, mixed);
        if (v > best) {
          best = v;
          best_in.assign(in.begin(), in.end());
          best_frac = t;
          best_amount = amount;
          best_mixed = mixed > partial;
        }
      }
      return;
    }
    if (spent + whole[k] <= budget + slack) {
      in[k] = 1;
      dfs(k + 1, spent + whole[k], value + gain[k]);
      in[k] = 0;
    }
    dfs(k + 1, spent, value);
  };
  double free_value = 0.0;
  for (std::size_t s = 0; s < m; ++s) free_value += sp.prob(s) * agent.utility(base[s]);
  dfs(0, 0.0, free_value);
  IndividualOptimum out;
  out.choice = base;
  for (std::size_t g = 0; g < g_count; ++g)
    if (best_in[g])
      for (auto s : groups[g].atoms) out.choice[s] = total[s];
  if (best_frac < g_count && !best_mixed)
    for (auto s : groups[best_frac].atoms) out.choice[s] = best_amount;
  out.value = eu_value(agent, total, out.choice);
  if (best_frac < g_count && best_mixed) {
    out.randomized = RandomizedAtom{groups[best_frac].atoms, best_amount / groups[best_frac].value};
    out.value += out.randomized->share * gain[best_frac];
  }
  out.method = VerificationMethod::exact_vertex;
  return out;
}

// Whole atoms in decreasing order of utility per unit cost, then one partial.
IndividualOptimum ratio_greedy(const Agent& agent, const RandomVariable& total,
                               const std::vector<double>& cost, double budget) {
  const std::size_t m = total.size();
  std::vector<double> y(m, 0.0);
  std::vector<std::size_t> order;
  for (std::size_t s = 0; s < m; ++s) {
    if (total[s] <= 0.0) continue;
    if (cost[s] <= 0.0)
      y[s] = total[s];
    else
      order.push_back(s);
  }
  auto score = [&](std::size_t s) { return agent.utility(total[s]) / (cost[s] / total.space()->prob(s) * total[s]); };
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return score(a) > score(b); });
  double left = budget;
  std::size_t partial_atom = m;
  for (auto s : order) {
    double need = cost[s] * total[s];
    if (need <= left) {
      y[s] = total[s];
      left -= need;
    } else {
      partial_atom = s;
      y[s] = std::max(left, 0.0) / cost[s];
      break;
    }
  }
  IndividualOptimum out;
  out.choice = y;
  out.value = eu_value(agent, total, y);
  if (partial_atom < m) {
    const std::size_t s = partial_atom;
    const double p = total.space()->prob(s);
    const double share = y[s] / total[s];
    const double mixed = out.value - p * agent.utility(y[s]) + share * p * agent.utility(total[s]);
    if (mixed > out.value) {
      out.choice[s] = 0.0;
      out.randomized = RandomizedAtom{{s}, share};
      out.value = mixed;
    }
  }
  return out;
}

IndividualOptimum lagrangian_fill(const Agent& agent, const RandomVariable& total,
                                  const PriceMeasure& price, const std::vector<double>& cost,
                                  double budget) {
  const std::size_t m = total.size();
  auto demand = [&](double nu, std::vector<double>& y) {
    double spent = 0.0;
    for (std::size_t s = 0; s < m; ++s) {
      double cap = std::max(total[s], 0.0);
      y[s] = price[s] <= 0.0 ? cap : agent.utility.inverse_derivative(nu * price[s], cap);
      spent += cost[s] * y[s];
    }
    return spent;
  };
  std::vector<double> ylo(m), yhi(m);
  double slo = demand(0.0, ylo);
  IndividualOptimum out;
  out.method = VerificationMethod::water_filling;
  if (slo <= budget) {
    out.choice = ylo;
    out.value = eu_value(agent, total, ylo);
    return out;
  }
  double lo = 0.0, hi = 1.0, shi = demand(hi, yhi);
  for (int k = 0; k < 4000 && shi > budget; ++k) {
    lo = hi;
    slo = shi;
    ylo = yhi;
    hi *= 2.0;
    shi = demand(hi, yhi);
  }
  for (int it = 0; it < 200 && hi - lo > 1e-16 * hi; ++it) {
    double mid = 0.5 * (lo + hi);
    std::vector<double> y(m);
    double sm = demand(mid, y);
    if (sm > budget) {
      lo = mid;
      slo = sm;
      ylo.swap(y);
    } else {
      hi = mid;
      shi = sm;
      yhi.swap(y);
    }
  }
  double theta = slo > shi ? std::clamp((budget - shi) / (slo - shi), 0.0, 1.0) : 0.0;
  out.choice.resize(m);
  for (std::size_t s = 0; s < m; ++s) out.choice[s] = yhi[s] + theta * (ylo[s] - yhi[s]);
  out.value = eu_value(agent, total, out.choice);
  return out;
}

// Candidate vertices plus coordinate-transfer local search. No optimality
// guarantee; used for rank-dependent and non-convex, non-concave agents.
IndividualOptimum heuristic_search(const Agent& agent, const RandomVariable& total,
                                   const std::vector<double>& cost, double budget) {
  const std::size_t m = total.size();
  std::vector<std::vector<double>> candidates;
  double full = 0.0;
  for (std::size_t s = 0; s < m; ++s) full += cost[s] * std::max(total[s], 0.0);
  {
    double c = full > 0.0 ? std::min(1.0, budget / full) : 1.0;
    std::vector<double> y(m);
    for (std::size_t s = 0; s < m; ++s) y[s] = c * std::max(total[s], 0.0);
    candidates.push_back(std::move(y));
  }
  {
    IndividualOptimum g = ratio_greedy(agent, total, cost, budget);
    if (g.randomized)
      for (auto s : g.randomized->atoms) g.choice[s] = g.randomized->share * total[s];
    candidates.push_back(std::move(g.choice));
  }
  if (m <= 14) {
    for (std::size_t mask = 0; mask < (std::size_t{1} << m); ++mask) {
      std::vector<double> y(m, 0.0);
      double spent = 0.0;
      for (std::size_t s = 0; s < m; ++s)
        if ((mask >> s & 1) || cost[s] <= 0.0) {
          y[s] = std::max(total[s], 0.0);
          spent += cost[s] * y[s];
        }
      if (spent > budget * (1.0 + 1e-15) + 1e-300) continue;
      candidates.push_back(y);
      for (std::size_t t = 0; t < m; ++t) {
        if (y[t] > 0.0 || cost[t] <= 0.0) continue;
        std::vector<double> z = y;
        z[t] = std::min(std::max(total[t], 0.0), (budget - spent) / cost[t]);
        candidates.push_back(std::move(z));
      }
    }
  }
  IndividualOptimum out;
  out.method = VerificationMethod::heuristic;
  out.value = -std::numeric_limits<double>::infinity();
  for (auto& c : candidates) {
    double v = any_value(agent, total, c);
    if (v > out.value) {
      out.value = v;
      out.choice = c;
    }
  }
  double scale = std::max(1e-12, total.max());
  for (double step = scale; step > 1e-10 * scale; step *= 0.5) {
    bool improved = true;
    for (int sweep = 0; sweep < 4 && improved; ++sweep) {
      improved = false;
      double spent = 0.0;
      for (std::size_t s = 0; s < m; ++s) spent += cost[s] * out.choice[s];
      for (std::size_t s = 0; s < m; ++s) {
        double up = std::min(step, std::max(total[s], 0.0) - out.choice[s]);
        if (up <= 0.0) continue;
        // Spend slack first, otherwise fund the increase from another atom.
        for (std::size_t t = 0; t <= m; ++t) {
          std::vector<double> y = out.choice;
          y[s] += up;
          double extra = cost[s] * up - std::max(0.0, budget - spent);
          if (t == m) {
            if (extra > 0.0) continue;
          } else {
            if (t == s || cost[t] <= 0.0 || extra <= 0.0) continue;
            double down = extra / cost[t];
            if (down > y[t]) continue;
            y[t] -= down;
          }
          double v = any_value(agent, total, y);
          if (v > out.value + 1e-15 * std::max(1.0, std::abs(out.value))) {
            out.value = v;
            out.choice = std::move(y);
            spent = 0.0;
            for (std::size_t r = 0; r < m; ++r) spent += cost[r] * out.choice[r];
            improved = true;
            break;
          }
        }
      }
    }
  }
  return out;
}

}  // namespace

std::string to_string(VerificationMethod m) {
  switch (m) {
    case VerificationMethod::exact_vertex: return "exact_vertex";
    case VerificationMethod::water_filling: return "water_filling";
    case VerificationMethod::heuristic: return "heuristic";
  }
  return "?";
}

IndividualOptimum individual_optimum(const Agent& agent, const RandomVariable& total,
                                     const PriceMeasure& price, double budget) {
  require_same_space(total.space(), price.space(), "individual problem");
  budget = std::max(budget, 0.0);
  const auto cost = unit_costs(total, price);
  if (agent.expected_utility()) {
    const Curvature c = agent.utility.curvature();
    if (agent.attitude == Attitude::risk_averse) return lagrangian_fill(agent, total, price, cost, budget);
    if (agent.attitude == Attitude::neutral ||
        (agent.attitude == Attitude::risk_seeking && c == Curvature::strictly_convex)) {
      if (distinct_priced_atoms(total, cost) <= kVertexGroupCap) return vertex_search(agent, total, cost, budget);
      IndividualOptimum out = ratio_greedy(agent, total, cost, budget);
      // The greedy fill solves the linear problem exactly.
      out.method = agent.attitude == Attitude::neutral ? VerificationMethod::exact_vertex
                                                       : VerificationMethod::heuristic;
      return out;
    }
    if (agent.attitude == Attitude::risk_seeking && distinct_priced_atoms(total, cost) <= kVertexGroupCap) {
      auto out = vertex_search(agent, total, cost, budget);
      out.method = VerificationMethod::heuristic;
      return out;
    }
  }
  return heuristic_search(agent, total, cost, budget);
}

bool EquilibriumCertificate::exact() const {
  return std::none_of(agents.begin(), agents.end(),
                      [](const AgentCheck& a) { return a.method == VerificationMethod::heuristic; });
}

void require_endowments(const EndowmentVector& e) {
  for (const auto& c : e.components())
    for (double v : c)
      if (v < -kDependenceTol) throw ValidationError("endowments must be nonnegative");
}

bool is_trivial_endowment(const EndowmentVector& e) {
  std::size_t nonzero = 0;
  for (const auto& c : e.components())
    if (std::any_of(c.begin(), c.end(), [](double v) { return v > kDependenceTol; })) ++nonzero;
  return nonzero <= 1;
}

EquilibriumCertificate verify_equilibrium(const Allocation& alloc, const PriceMeasure& price_in,
                                          const EndowmentVector& endowments_in,
                                          const std::vector<Agent>& agents, std::string method) {
  const std::size_t n = agents.size();
  if (alloc.agents() != n || endowments_in.agents() != n)
    throw ValidationError("allocation, endowments and agents disagree on the agent count");
  const SpacePtr& space = alloc.space();
  PriceMeasure price = price_in.lifted_to(space);
  EndowmentVector endowments = endowments_in.lifted_to(space);
  const RandomVariable& total = alloc.total();
  for (std::size_t s = 0; s < total.size(); ++s)
    if (std::abs(total[s] - endowments.total()[s]) > kDependenceTol * std::max(1.0, std::abs(total[s])))
      throw ValidationError("endowments and allocation share different aggregate risks");

  EquilibriumCertificate cert;
  cert.method = std::move(method);
  for (std::size_t s = 0; s < total.size(); ++s) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double v = alloc.values(i)[s];
      sum += v;
      cert.clearance_residual = std::max({cert.clearance_residual, -v, v - total[s]});
    }
    cert.clearance_residual = std::max(cert.clearance_residual, std::abs(sum - total[s]));
  }
  bool valid = cert.clearance_residual <= kClearanceTol;
  for (std::size_t i = 0; i < n; ++i) {
    AgentCheck check;
    const double budget = expectation(endowments.component(i), price);
    check.budget_residual = budget - expectation(alloc.component(i), price);
    check.achieved = agent_utility(alloc.component(i), agents[i]);
    IndividualOptimum best = individual_optimum(agents[i], total, price, budget);
    check.best_deviation = best.value;
    check.gap = best.value - check.achieved;
    check.method = best.method;
    valid = valid && check.budget_residual >= -kBudgetTol && check.gap <= kDeviationTol;
    cert.agents.push_back(check);
  }
  cert.valid = valid;
  return cert;
}

PriceMeasure price_from_lambda(const std::vector<double>& lambda, const std::vector<Agent>& agents,
                               const RandomVariable& total) {
  std::vector<double> weights(total.size(), 0.0);
  for (std::size_t s = 0; s < total.size(); ++s) {
    if (total[s] < -kDependenceTol) throw DomainError("aggregate risk takes a negative value");
    if (total[s] <= 0.0) continue;
    weights[s] = v_lambda(lambda, agents, total[s]).value / total[s];
  }
  return PriceMeasure::normalized(total.space(), std::move(weights));
}

// ---------------------------------------------------------------------------

namespace {

std::vector<double> budget_shares(const EndowmentVector& e, const PriceMeasure& q) {
  const double whole = expectation(e.total(), q);
  if (!(whole > 0.0)) throw DomainError("aggregate risk has zero value under the price");
  std::vector<double> shares(e.agents());
  for (std::size_t i = 0; i < e.agents(); ++i) shares[i] = expectation(e.component(i), q) / whole;
  return shares;
}

std::vector<double> to_simplex(std::vector<double> v) {
  double sum = 0.0;
  for (auto& x : v) sum += x = std::max(x, 0.0);
  for (auto& x : v) x /= sum;
  return v;
}

// Agent i receives the whole total on child atoms it owns.
Allocation jackpot_on(const Extension& ext, const RandomVariable& total, std::size_t n) {
  RandomVariable lifted = total.lifted_to(ext.space);
  std::vector<std::vector<double>> comps(n, std::vector<double>(ext.space->size(), 0.0));
  for (std::size_t c = 0; c < ext.space->size(); ++c) comps[ext.partition.owner[c]][c] = lifted[c];
  return {lifted, std::move(comps)};
}

std::vector<double> utilities_of(const Allocation& alloc, const std::vector<Agent>& agents) {
  std::vector<double> u(agents.size());
  for (std::size_t i = 0; i < agents.size(); ++i) u[i] = agent_utility(alloc.component(i), agents[i]);
  return u;
}

EquilibriumResult finish(Allocation alloc, const PriceMeasure& price, const EndowmentVector& endowments,
                         const std::vector<Agent>& agents, std::vector<double> shares,
                         const std::string& method) {
  PriceMeasure q = price.lifted_to(alloc.space());
  EndowmentVector e = endowments.lifted_to(alloc.space());
  auto cert = verify_equilibrium(alloc, q, e, agents, method);
  auto u = utilities_of(alloc, agents);
  return EquilibriumResult{std::move(alloc), std::move(q), std::move(e), std::move(cert),
                           std::move(u), std::move(shares), {}};
}

}  // namespace

EquilibriumResult homogeneous_equilibrium(const std::vector<Agent>& agents,
                                          const EndowmentVector& endowments) {
  require_rs_eu(agents, "homogeneous equilibrium");
  require_identical(agents, "homogeneous equilibrium");
  require_endowments(endowments);
  const std::size_t n = agents.size();
  if (endowments.agents() != n) throw ValidationError("endowment count differs from agent count");
  const RandomVariable& total = endowments.total();
  std::vector<double> weights(total.size(), 0.0);
  for (std::size_t s = 0; s < total.size(); ++s)
    if (total[s] > 0.0) weights[s] = agents.front().utility(total[s]) / total[s];
  PriceMeasure q = PriceMeasure::normalized(total.space(), std::move(weights));
  auto shares = budget_shares(endowments, q);
  if (is_trivial_endowment(endowments)) {
    auto r = finish(endowments, q, endowments, agents, shares, "homogeneous");
    r.notes.push_back("trivial endowment: it is already an equilibrium and the price is not pinned down");
    return r;
  }
  Extension ext = extend_with_independent_categorical(total.space(), to_simplex(shares));
  return finish(jackpot_on(ext, total, n), q, endowments, agents, shares, "homogeneous");
}

EquilibriumResult two_agent_equilibrium(const std::vector<Agent>& agents,
                                        const EndowmentVector& endowments) {
  if (agents.size() != 2) throw PreconditionError("two-agent construction needs exactly two agents");
  require_rs_eu(agents, "two-agent equilibrium");
  require_endowments(endowments);
  if (endowments.agents() != 2) throw ValidationError("endowment count differs from agent count");
  const RandomVariable& total = endowments.total();
  const SpacePtr& space = total.space();
  std::vector<double> weights(total.size(), 0.0);
  for (std::size_t s = 0; s < total.size(); ++s)
    if (total[s] > 0.0) weights[s] = agents[0].utility(total[s]) / total[s];
  PriceMeasure q = PriceMeasure::normalized(space, std::move(weights));
  auto shares = budget_shares(endowments, q);

  std::vector<std::vector<double>> cuts(total.size(), {0.0, 0.0, 1.0});
  std::vector<std::size_t> order;
  for (std::size_t s = 0; s < total.size(); ++s)
    if (total[s] > 0.0) order.push_back(s);
  auto ratio = [&](std::size_t s) {
    return agents[0].utility(total[s]) / agents[1].utility(total[s]);
  };
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return ratio(a) > ratio(b); });
  const double target = expectation(endowments.component(0), q);
  double spent = 0.0;
  std::string note;
  if (target <= kDependenceTol) {
    note = "agent 0 has a worthless endowment: corner allocation";
  } else {
    for (auto s : order) {
      double c = space->prob(s) * q[s] * total[s];
      if (spent + c <= target) {
        cuts[s][1] = 1.0;
        spent += c;
        continue;
      }
      cuts[s][1] = std::clamp((target - spent) / c, 0.0, 1.0);
      break;
    }
  }
  Extension ext = extend_with_uniform_cuts(space, cuts);
  auto r = finish(jackpot_on(ext, total, 2), q, endowments, agents, shares, "two_agent");
  if (!note.empty()) r.notes.push_back(note);
  return r;
}

// ---------------------------------------------------------------------------

namespace {

// Max-flow on a small dense graph (Edmonds-Karp).
struct FlowNetwork {
  explicit FlowNetwork(std::size_t nodes) : cap(nodes, std::vector<double>(nodes, 0.0)) {}
  std::vector<std::vector<double>> cap;

  double run(std::size_t src, std::size_t dst) {
    const std::size_t n = cap.size();
    double flow = 0.0;
    while (true) {
      std::vector<std::size_t> prev(n, n);
      prev[src] = src;
      std::deque<std::size_t> queue{src};
      while (!queue.empty() && prev[dst] == n) {
        std::size_t u = queue.front();
        queue.pop_front();
        for (std::size_t v = 0; v < n; ++v)
          if (prev[v] == n && cap[u][v] > 1e-18) {
            prev[v] = u;
            queue.push_back(v);
          }
      }
      if (prev[dst] == n) return flow;
      double push = std::numeric_limits<double>::infinity();
      for (std::size_t v = dst; v != src; v = prev[v]) push = std::min(push, cap[prev[v]][v]);
      for (std::size_t v = dst; v != src; v = prev[v]) {
        cap[prev[v]][v] -= push;
        cap[v][prev[v]] += push;
      }
      flow += push;
    }
  }
};

struct Market {
  std::vector<std::size_t> goods;          // atoms with positive total
  std::vector<std::vector<double>> value;  // value[i][g] = p u_i(x)
};

struct Assignment {
  std::vector<double> lambda;
  std::vector<std::vector<double>> share;  // share[g][i]
  double residual = std::numeric_limits<double>::infinity();
  std::vector<double> demand;
};

// Proportional-response bidding for the linear market of atoms; returns
// bang-per-buck based weights lambda_i = B_i / U_i.
std::vector<double> proportional_response(const Market& mk, const std::vector<double>& budget,
                                          std::vector<std::vector<double>>& bids,
                                          std::size_t max_iters, std::size_t& used) {
  const std::size_t n = budget.size(), g = mk.goods.size();
  std::vector<double> price(g), util(n);
  for (used = 0; used < max_iters; ++used) {
    std::fill(price.begin(), price.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < g; ++k) price[k] += bids[i][k];
    double worst = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      util[i] = 0.0;
      if (budget[i] <= 0.0) continue;
      double bang = 0.0;
      for (std::size_t k = 0; k < g; ++k) {
        if (price[k] <= 0.0) continue;
        util[i] += mk.value[i][k] * bids[i][k] / price[k];
        bang = std::max(bang, mk.value[i][k] / price[k]);
      }
      worst = std::max(worst, 1.0 - util[i] / (budget[i] * bang));
    }
    if (worst <= 1e-15) break;
    for (std::size_t i = 0; i < n; ++i) {
      if (budget[i] <= 0.0 || util[i] <= 0.0) continue;
      for (std::size_t k = 0; k < g; ++k)
        bids[i][k] = price[k] > 0.0 ? budget[i] * mk.value[i][k] * bids[i][k] / price[k] / util[i] : 0.0;
    }
  }
  std::vector<double> lambda(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    if (budget[i] > 0.0 && util[i] > 0.0) lambda[i] = budget[i] / util[i];
  return to_simplex(lambda);
}

std::vector<double> demand_shares(const std::vector<double>& lambda, const std::vector<Agent>& agents,
                                  const EndowmentVector& e) {
  return budget_shares(e, price_from_lambda(lambda, agents, e.total()));
}

// Splits every atom among agents attaining V_lambda there (up to a relative
// tolerance) so that priced spending matches the demand shares.
Assignment settle(const std::vector<double>& lambda, const std::vector<Agent>& agents,
                  const EndowmentVector& e, const Market& mk) {
  const std::size_t n = agents.size(), g = mk.goods.size();
  const RandomVariable& total = e.total();
  Assignment best;
  best.lambda = lambda;
  best.demand = demand_shares(lambda, agents, e);
  std::vector<double> top(g), money(g);
  double whole = 0.0;
  for (std::size_t k = 0; k < g; ++k) {
    const std::size_t s = mk.goods[k];
    top[k] = v_lambda(lambda, agents, total[s]).value;
    money[k] = total.space()->prob(s) * top[k];
    whole += money[k];
  }
  for (auto& mny : money) mny /= whole;
  for (double tau = 1e-13; tau <= 1.01e-6; tau *= 10.0) {
    FlowNetwork net(g + n + 2);
    const std::size_t src = g + n, dst = g + n + 1;
    for (std::size_t k = 0; k < g; ++k) {
      net.cap[src][k] = money[k];
      for (std::size_t i = 0; i < n; ++i)
        if (lambda[i] * agents[i].utility(total[mk.goods[k]]) >= top[k] * (1.0 - tau))
          net.cap[k][g + i] = 2.0;
    }
    for (std::size_t i = 0; i < n; ++i) net.cap[g + i][dst] = best.demand[i];
    auto initial = net.cap;
    net.run(src, dst);
    std::vector<std::vector<double>> share(g, std::vector<double>(n, 0.0));
    std::vector<double> spent(n, 0.0);
    for (std::size_t k = 0; k < g; ++k) {
      double assigned = 0.0;
      std::size_t arg = v_lambda(lambda, agents, total[mk.goods[k]]).argmax;
      for (std::size_t i = 0; i < n; ++i) {
        double f = std::max(0.0, initial[k][g + i] - net.cap[k][g + i]);
        share[k][i] = money[k] > 0.0 ? f / money[k] : 0.0;
        assigned += share[k][i];
      }
      if (assigned < 1.0) share[k][arg] += 1.0 - assigned;  // unplaced mass goes to the argmax
      double norm = 0.0;
      for (double v : share[k]) norm += v;
      for (std::size_t i = 0; i < n; ++i) {
        share[k][i] /= norm;
        spent[i] += money[k] * share[k][i];
      }
    }
    double residual = 0.0;
    for (std::size_t i = 0; i < n; ++i) residual += std::abs(spent[i] - best.demand[i]);
    if (residual < best.residual) {
      best.residual = residual;
      best.share = std::move(share);
    }
    if (best.residual <= 1e-12) break;
  }
  return best;
}

}  // namespace

FixedPointResult fixed_point_search(const std::vector<Agent>& agents,
                                    const EndowmentVector& endowments,
                                    const FixedPointOptions& options) {
  require_rs_eu(agents, "fixed-point search");
  require_endowments(endowments);
  const std::size_t n = agents.size();
  if (endowments.agents() != n) throw ValidationError("endowment count differs from agent count");
  const RandomVariable& total = endowments.total();
  FixedPointResult out;

  Market mk;
  for (std::size_t s = 0; s < total.size(); ++s)
    if (total[s] > kDependenceTol) mk.goods.push_back(s);
  if (mk.goods.empty()) throw DomainError("aggregate risk vanishes everywhere");
  mk.value.assign(n, std::vector<double>(mk.goods.size()));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < mk.goods.size(); ++k)
      mk.value[i][k] = total.space()->prob(mk.goods[k]) * agents[i].utility(total[mk.goods[k]]);

  // Flat stretches of u_i/u_j make ties persistent; ties are split below, so
  // this is reported rather than refused.
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double hi = total.max();
      double r1 = agents[i].utility(hi) / agents[j].utility(hi);
      double r2 = agents[i].utility(hi / 2) / agents[j].utility(hi / 2);
      double r3 = agents[i].utility(hi / 3) / agents[j].utility(hi / 3);
      if (std::abs(r1 - r2) <= 1e-12 * r1 && std::abs(r1 - r3) <= 1e-12 * r1)
        out.notes.push_back("agents " + std::to_string(i) + " and " + std::to_string(j) +
                            " have proportional utilities on the support; atoms are split between them");
    }

  std::mt19937_64 rng(options.seed);
  Assignment best;
  for (std::size_t restart = 0; restart <= options.restarts; ++restart) {
    std::vector<double> lambda(n, 1.0 / static_cast<double>(n));
    if (restart > 0) {
      std::exponential_distribution<double> expo(1.0);
      for (auto& l : lambda) l = expo(rng);
      lambda = to_simplex(lambda);
    }
    std::vector<double> budget = demand_shares(lambda, agents, endowments);
    std::vector<std::vector<double>> bids(n, std::vector<double>(mk.goods.size(), 0.0));
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t support = 0;
      for (double v : mk.value[i]) support += v > 0.0;
      for (std::size_t k = 0; k < mk.goods.size(); ++k)
        if (mk.value[i][k] > 0.0) bids[i][k] = budget[i] / static_cast<double>(support);
    }
    for (int outer = 0; outer < 200; ++outer) {
      std::size_t used = 0;
      lambda = proportional_response(mk, budget, bids, options.max_iters, used);
      out.iterations += used;
      std::vector<double> next = demand_shares(lambda, agents, endowments);
      double move = 0.0;
      for (std::size_t i = 0; i < n; ++i) move += std::abs(next[i] - budget[i]);
      if (move <= 1e-14) break;
      for (std::size_t i = 0; i < n; ++i) {
        double b = (1.0 - options.damping) * budget[i] + options.damping * next[i];
        double scale = budget[i] > 0.0 ? b / budget[i] : 0.0;
        for (std::size_t k = 0; k < mk.goods.size(); ++k) {
          if (budget[i] > 0.0)
            bids[i][k] *= scale;
          else if (mk.value[i][k] > 0.0)
            bids[i][k] = b / static_cast<double>(mk.goods.size());
        }
        budget[i] = b;
      }
    }
    Assignment a = settle(lambda, agents, endowments, mk);
    if (a.residual < best.residual) best = std::move(a);
    if (best.residual <= options.tol) break;
  }

  out.lambda = best.lambda;
  out.residual = best.residual;
  std::vector<std::vector<double>> cuts(total.size(), std::vector<double>(n + 1, 1.0));
  for (auto& c : cuts) c[0] = 0.0;
  for (std::size_t k = 0; k < mk.goods.size(); ++k) {
    double run = 0.0;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      run += best.share[k][i];
      cuts[mk.goods[k]][i + 1] = std::min(run, 1.0);
    }
  }
  Extension ext = extend_with_uniform_cuts(total.space(), cuts);
  PriceMeasure q = price_from_lambda(best.lambda, agents, total);
  auto eq = finish(jackpot_on(ext, total, n), q, endowments, agents, best.demand, "fixed_point");
  out.certified = out.residual <= options.tol && eq.certificate.valid;
  out.equilibrium = std::move(eq);
  return out;
}

// ---------------------------------------------------------------------------

TwoPointAnalysis two_point_mixed_equilibrium(double a, double b, double p,
                                             const std::vector<Agent>& seeking,
                                             const std::vector<Agent>& averse) {
  if (!(a > 0.0 && b > a)) throw ValidationError("two-point risk needs 0 < a < b");
  if (!(p > 0.0 && p < 1.0)) throw ValidationError("two-point risk needs 0 < p < 1");
  if (seeking.empty() || averse.empty())
    throw PreconditionError("two-point construction needs both risk-seeking and risk-averse agents");
  for (const auto& s : seeking)
    if (!s.expected_utility() || s.attitude != Attitude::risk_seeking)
      throw PreconditionError("agent " + s.name + " is not a risk-seeking expected-utility agent");
  for (const auto& t : averse)
    if (!t.expected_utility() || t.attitude != Attitude::risk_averse)
      throw PreconditionError("agent " + t.name + " is not a risk-averse expected-utility agent");
  TwoPointAnalysis r;
  std::vector<std::size_t> members(averse.size());
  std::iota(members.begin(), members.end(), std::size_t{0});
  r.averse_shares = water_fill(std::vector<double>(averse.size(), 1.0), averse, members, a);
  r.upper = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < averse.size(); ++j) {
    const auto& u = averse[j].utility;
    r.upper = std::min(r.upper, u.derivative(r.averse_shares[j], Side::left) / u.derivative(0.0, Side::right));
  }
  r.lower = 0.0;
  for (const auto& s : seeking) r.lower = std::max(r.lower, b * s.utility(a) / (a * s.utility(b)));
  r.exists = r.upper >= r.lower;
  const double n = static_cast<double>(seeking.size() + averse.size());
  for (const auto& t : averse)
    r.necessary_lhs = std::max(r.necessary_lhs, t.utility.derivative(a / n, Side::left) /
                                                    t.utility.derivative(0.0, Side::right));
  r.necessary_holds = r.necessary_lhs >= r.lower;
  return r;
}

TwoPointInstance build_two_point_instance(double a, double b, double p,
                                          const std::vector<Agent>& seeking,
                                          const std::vector<Agent>& averse, double alpha,
                                          double beta) {
  auto analysis = two_point_mixed_equilibrium(a, b, p, seeking, averse);
  const std::size_t ns = seeking.size(), nt = averse.size();
  SpacePtr space = FiniteProbSpace::create({p, 1.0 - p});
  RandomVariable total(space, {a, b});
  std::vector<std::vector<double>> cuts(2, std::vector<double>(ns + 1, 1.0));
  cuts[0][0] = 0.0;
  for (std::size_t k = 0; k <= ns; ++k) cuts[1][k] = static_cast<double>(k) / static_cast<double>(ns);
  cuts[1][ns] = 1.0;
  Extension ext = extend_with_uniform_cuts(space, cuts);
  RandomVariable lifted = total.lifted_to(ext.space);
  std::vector<std::vector<double>> comps(ns + nt, std::vector<double>(ext.space->size(), 0.0));
  for (std::size_t c = 0; c < ext.space->size(); ++c) {
    if (ext.space->parent_atom(c) == 0) {
      for (std::size_t j = 0; j < nt; ++j) comps[ns + j][c] = analysis.averse_shares[j];
    } else {
      comps[ext.partition.owner[c]][c] = b;
    }
  }
  std::vector<Agent> all(seeking);
  all.insert(all.end(), averse.begin(), averse.end());
  PriceMeasure q = PriceMeasure::normalized(space, {alpha, beta}).lifted_to(ext.space);
  return {std::move(all), Allocation(lifted, std::move(comps)), std::move(q)};
}

// ---------------------------------------------------------------------------

RduConstantResult rdu_constant_equilibrium(const std::vector<Agent>& agents,
                                           const EndowmentVector& endowments,
                                           std::size_t envelope_grid) {
  require_identical(agents, "constant-risk equilibrium");
  require_endowments(endowments);
  const std::size_t n = agents.size();
  if (endowments.agents() != n) throw ValidationError("endowment count differs from agent count");
  const RandomVariable& total = endowments.total();
  const double x = total.max();
  if (!(x > 0.0) || x - total.min() > kProbTol * std::max(1.0, x))
    throw PreconditionError("constant-risk equilibrium needs a positive constant aggregate risk");
  const Agent& agent = agents.front();
  RduConstantResult r;
  Envelope env = concave_envelope(agent.weighting, envelope_grid);
  r.beta_w = env.beta;
  if (n == 1) {
    // Nothing to trade: the agent keeps the total at any price.
    r.equilibrium = finish(endowments, PriceMeasure::uniform(total.space()), endowments, agents, {1.0},
                           "rdu_constant");
    return r;
  }

  double envelope_gap = 0.0;
  const double nn = static_cast<double>(n);
  for (int k = 0; k <= 1000; ++k) {
    double t = k / 1000.0 / nn;
    envelope_gap = std::max(envelope_gap, env(t) - agent.weighting(t));
  }
  const double slope = agent.utility(x) / x;
  bool linear = true;
  for (int k = 1; k < 8; ++k) {
    double y = x * k / 8.0;
    linear = linear && std::abs(agent.utility(y) / y - slope) <= 1e-9 * slope;
  }
  if (envelope_gap > 1e-6 || !linear) {
    r.refused = true;
    r.diagnostic = envelope_gap > 1e-6
                       ? "weighting differs from its concave envelope on [0, 1/n] by " + num(envelope_gap)
                       : "utility is not linear on [0, x]";
    return r;
  }
  std::vector<double> theta(n);
  for (std::size_t i = 0; i < n; ++i) {
    double mean = expectation(endowments.component(i));
    if (mean > x * env.beta + kProbTol) {
      r.refused = true;
      r.diagnostic = "agent " + std::to_string(i) + " has endowment mean " + num(mean) +
                     " above x * beta_w = " + num(x * env.beta) +
                     "; this construction does not apply and existence is left open";
      return r;
    }
    theta[i] = mean / x;
  }
  Extension ext = extend_with_independent_categorical(total.space(), to_simplex(theta));
  auto eq = finish(jackpot_on(ext, total, n), PriceMeasure::uniform(total.space()), endowments,
                   agents, theta, "rdu_constant");
  r.equilibrium = std::move(eq);
  return r;
}

}  // namespace riskshare
