#include "riskshare/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace riskshare::oracle {

double reference_utility(const std::vector<double>& probs, const std::vector<double>& payoff,
                         const Agent& agent) {
  if (agent.expected_utility()) {
    double e = 0.0;
    for (std::size_t s = 0; s < probs.size(); ++s) e += probs[s] * agent.utility(payoff[s]);
    return e;
  }
  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return payoff[a] < payoff[b]; });
  // Outcome k (ascending) gets weight w(P(>= its rank)) - w(P(> its rank)),
  // with equal payoffs pooled.
  double total = 0.0, above = 1.0;
  std::size_t k = 0;
  while (k < order.size()) {
    std::size_t j = k;
    double mass = 0.0;
    while (j < order.size() && payoff[order[j]] - payoff[order[k]] <= 1e-9) mass += probs[order[j++]];
    double upper = std::clamp(above, 0.0, 1.0), lower = std::clamp(above - mass, 0.0, 1.0);
    if (j == order.size()) lower = 0.0;
    total += agent.utility(std::max(payoff[order[k]], 0.0)) *
             (agent.weighting(upper) - agent.weighting(lower));
    above -= mass;
    k = j;
  }
  return total;
}

OracleReport brute_force_weighted_max(const std::vector<double>& lambda,
                                      const std::vector<Agent>& agents, const RandomVariable& total,
                                      std::size_t per_atom_grid, std::optional<double> engine_value) {
  const std::size_t n = agents.size(), m = total.size();
  if (n == 0 || lambda.size() != n) throw ValidationError("oracle: weights and agents disagree");
  if (per_atom_grid < 2) throw ValidationError("oracle: grid needs at least two points");
  const double per_atom = std::pow(static_cast<double>(per_atom_grid), static_cast<double>(n - 1));
  if (per_atom * static_cast<double>(m) > kCombinationCap)
    throw BudgetExceeded("oracle: weighted-max grid exceeds the combination cap");
  OracleReport r;
  r.method = "grid_enumeration";
  r.witness.assign(n, std::vector<double>(m, 0.0));
  for (std::size_t s = 0; s < m; ++s) {
    const double x = total[s];
    if (x < 0.0) throw DomainError("oracle: negative aggregate risk");
    const double h = x / static_cast<double>(per_atom_grid - 1);
    std::vector<std::size_t> idx(n - 1, 0);
    double best = -1.0;
    std::vector<double> arg(n, 0.0);
    while (true) {
      double used = 0.0;
      for (auto k : idx) used += h * static_cast<double>(k);
      if (used <= x * (1.0 + 1e-12)) {
        double v = 0.0;
        for (std::size_t i = 0; i + 1 < n; ++i) v += lambda[i] * agents[i].utility(h * static_cast<double>(idx[i]));
        v += lambda[n - 1] * agents[n - 1].utility(std::max(x - used, 0.0));
        ++r.combinations;
        if (v > best) {
          best = v;
          for (std::size_t i = 0; i + 1 < n; ++i) arg[i] = h * static_cast<double>(idx[i]);
          arg[n - 1] = std::max(x - used, 0.0);
        }
      }
      std::size_t d = 0;
      while (d < idx.size() && ++idx[d] == per_atom_grid) idx[d++] = 0;
      if (d == idx.size()) break;
    }
    r.best_value += total.space()->prob(s) * best;
    for (std::size_t i = 0; i < n; ++i) r.witness[i][s] = arg[i];
    // Rounding the first n-1 coordinates down to the grid costs at most
    // h * lambda_i * (largest slope) each.
    double slopes = 0.0;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      double top = 0.0;
      for (int k = 0; k <= 64; ++k) {
        double y = x * k / 64.0;
        double d1 = agents[i].utility.derivative(y, Side::right);
        if (std::isfinite(d1)) top = std::max(top, d1);
        if (y > 0.0) top = std::max(top, agents[i].utility.derivative(y, Side::left));
      }
      if (!std::isfinite(agents[i].utility.derivative(0.0, Side::right)))
        top = std::max(top, agents[i].utility(h) / std::max(h, 1e-300));
      slopes += lambda[i] * top;
    }
    r.resolution += total.space()->prob(s) * h * slopes;
  }
  if (engine_value) r.engine_gap = *engine_value - r.best_value;
  return r;
}

ParetoProbeReport brute_force_pareto_probe(const std::vector<std::vector<double>>& components,
                                           const RandomVariable& total,
                                           const std::vector<Agent>& agents, std::size_t grid,
                                           std::size_t samples, unsigned long long seed,
                                           std::size_t split) {
  const std::size_t n = agents.size(), m = total.size();
  if (components.size() != n) throw ValidationError("oracle: allocation and agents disagree");
  if (grid < 2 || split == 0) throw ValidationError("oracle: malformed probe grid");
  ParetoProbeReport r;
  std::vector<double> probs(m);
  for (std::size_t s = 0; s < m; ++s) probs[s] = total.space()->prob(s);
  for (std::size_t i = 0; i < n; ++i) r.base_utilities.push_back(reference_utility(probs, components[i], agents[i]));

  // Refined space: every atom split into `split` equal children.
  const std::size_t mm = m * split;
  std::vector<double> cprob(mm), cx(mm);
  for (std::size_t c = 0; c < mm; ++c) {
    cprob[c] = probs[c / split] / static_cast<double>(split);
    cx[c] = total[c / split];
  }
  auto dominates = [&](const std::vector<std::vector<double>>& y, std::vector<double>& u) {
    bool better = false;
    for (std::size_t i = 0; i < n; ++i) {
      u[i] = reference_utility(cprob, y[i], agents[i]);
      if (u[i] < r.base_utilities[i] - 1e-12) return false;
      better = better || u[i] > r.base_utilities[i] + 1e-9;
    }
    return better;
  };
  std::vector<std::vector<double>> y(n, std::vector<double>(mm, 0.0));
  std::vector<double> u(n);
  const double combos = std::pow(static_cast<double>(grid), static_cast<double>(mm * (n - 1)));
  if (n > 1 && combos <= kCombinationCap) {
    std::vector<std::size_t> idx(mm * (n - 1), 0);
    while (true) {
      bool ok = true;
      for (std::size_t c = 0; c < mm && ok; ++c) {
        double h = cx[c] / static_cast<double>(grid - 1), used = 0.0;
        for (std::size_t i = 0; i + 1 < n; ++i) {
          y[i][c] = h * static_cast<double>(idx[c * (n - 1) + i]);
          used += y[i][c];
        }
        if (used > cx[c] * (1.0 + 1e-12)) ok = false;
        y[n - 1][c] = std::max(cx[c] - used, 0.0);
      }
      if (ok) {
        ++r.evaluated;
        if (dominates(y, u)) {
          r.dominator_found = true;
          r.dominator_utilities = u;
          return r;
        }
      }
      std::size_t d = 0;
      while (d < idx.size() && ++idx[d] == grid) idx[d++] = 0;
      if (d == idx.size()) break;
    }
  }
  std::mt19937_64 rng(seed);
  std::exponential_distribution<double> expo(1.0);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::bernoulli_distribution coin(0.5);
  for (std::size_t k = 0; k < samples; ++k) {
    for (std::size_t c = 0; c < mm; ++c) {
      if (coin(rng)) {
        std::size_t owner = pick(rng);
        for (std::size_t i = 0; i < n; ++i) y[i][c] = i == owner ? cx[c] : 0.0;
      } else {
        double sum = 0.0;
        std::vector<double> g(n);
        for (auto& v : g) sum += v = expo(rng);
        for (std::size_t i = 0; i < n; ++i) y[i][c] = cx[c] * g[i] / sum;
      }
    }
    ++r.evaluated;
    if (dominates(y, u)) {
      r.dominator_found = true;
      r.dominator_utilities = u;
      return r;
    }
  }
  return r;
}

JackpotEnumeration enumerate_jackpot_partitions(const RandomVariable& total,
                                                const std::vector<Agent>& agents) {
  const std::size_t n = agents.size(), m = total.size();
  if (n == 0) throw ValidationError("oracle: no agents");
  JackpotEnumeration r;
  r.relabeling_reduced = std::all_of(agents.begin(), agents.end(), [&](const Agent& a) {
    return a.utility == agents.front().utility && a.weighting == agents.front().weighting;
  });
  if (!r.relabeling_reduced &&
      std::pow(static_cast<double>(n), static_cast<double>(m)) > kCombinationCap)
    throw BudgetExceeded("oracle: owner-map enumeration exceeds the combination cap");
  std::vector<double> probs(m);
  for (std::size_t s = 0; s < m; ++s) probs[s] = total.space()->prob(s);
  std::vector<std::size_t> owner(m, 0);
  r.best_sum = -1.0;
  std::vector<double> pay(m);
  auto score = [&]() {
    double sum = 0.0;
    std::vector<double> u(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t s = 0; s < m; ++s) pay[s] = owner[s] == i ? total[s] : 0.0;
      sum += u[i] = reference_utility(probs, pay, agents[i]);
    }
    ++r.enumerated;
    if (r.enumerated > kCombinationCap)
      throw BudgetExceeded("oracle: owner-map enumeration exceeds the combination cap");
    if (sum > r.best_sum) {
      r.best_sum = sum;
      r.best_owner = owner;
      r.best_utilities = u;
    }
  };
  // With identical agents only restricted-growth labelings are visited: each
  // atom's owner is at most one more than the largest label used before it.
  auto rec = [&](auto&& self, std::size_t s, std::size_t used) -> void {
    if (s == m) {
      score();
      return;
    }
    std::size_t limit = r.relabeling_reduced ? std::min(n, used + 1) : n;
    for (std::size_t i = 0; i < limit; ++i) {
      owner[s] = i;
      self(self, s + 1, std::max(used, i + 1));
    }
  };
  rec(rec, 0, 0);
  return r;
}

OracleReport vertex_individual_opt(const Agent& agent, const RandomVariable& total,
                                   const std::vector<double>& density, double budget) {
  const std::size_t m = total.size();
  if (m > 18) throw BudgetExceeded("oracle: vertex enumeration is capped at 18 atoms");
  if (density.size() != m) throw ValidationError("oracle: density length mismatch");
  std::vector<double> probs(m), cost(m);
  for (std::size_t s = 0; s < m; ++s) {
    probs[s] = total.space()->prob(s);
    cost[s] = probs[s] * density[s];
  }
  OracleReport r;
  r.method = "vertex_enumeration";
  r.best_value = -1.0;
  std::vector<double> y(m);
  for (std::size_t mask = 0; mask < (std::size_t{1} << m); ++mask) {
    double spent = 0.0;
    for (std::size_t s = 0; s < m; ++s) {
      y[s] = (mask >> s & 1) || cost[s] == 0.0 ? total[s] : 0.0;
      spent += cost[s] * y[s];
    }
    if (spent > budget + 1e-15 * std::max(1.0, budget)) continue;
    for (std::size_t t = 0; t <= m; ++t) {
      std::vector<double> z = y;
      double extra = 0.0;  // randomized alternative: full payoff on part of atom t
      if (t < m) {
        if (z[t] > 0.0 || cost[t] == 0.0) continue;
        z[t] = std::min(total[t], (budget - spent) / cost[t]);
        if (total[t] > 0.0) {
          std::vector<double> p2 = probs, y2 = y;
          const double share = z[t] / total[t];
          // split atom t into a paying part and a zero part
          p2[t] = probs[t] * share;
          y2[t] = total[t];
          p2.push_back(probs[t] * (1.0 - share));
          y2.push_back(0.0);
          extra = reference_utility(p2, y2, agent);
        }
      }
      ++r.combinations;
      double v = std::max(reference_utility(probs, z, agent), extra);
      if (v > r.best_value) {
        r.best_value = v;
        r.witness = {z};
      }
    }
  }
  return r;
}

}  // namespace riskshare::oracle
