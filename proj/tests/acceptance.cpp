// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>

#include "generators.hpp"
#include "riskshare/allocation.hpp"
#include "riskshare/equilibrium.hpp"
#include "riskshare/oracle.hpp"
#include "riskshare/preferences.hpp"
#include "riskshare/prob_core.hpp"
#include "riskshare/rdu_analysis.hpp"

using namespace riskshare;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok && pass) detail << "; first failure: " << what;
    pass = pass && ok;
  }
};

int failures = 0;

void criterion(int number, const std::string& title, const std::function<void(Outcome&)>& body) {
  Outcome o;
  try {
    body(o);
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail << "exception: " << e.what();
  }
  std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << number << ": " << title;
  const std::string d = o.detail.str();
  if (!d.empty()) std::cout << " [" << d << "]";
  std::cout << std::endl;
  if (!o.pass) ++failures;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

RandomVariable uniform_midpoints(std::size_t m, double lo, double hi) {
  std::vector<double> v(m);
  for (std::size_t k = 0; k < m; ++k) v[k] = lo + (hi - lo) * (static_cast<double>(k) + 0.5) / static_cast<double>(m);
  return RandomVariable(FiniteProbSpace::uniform(m), v);
}

// Stop-loss transform computed directly, independent of the library's.
double direct_stop_loss(const RandomVariable& x, double t) {
  double e = 0.0;
  for (std::size_t s = 0; s < x.size(); ++s) e += x.space()->prob(s) * std::max(x[s] - t, 0.0);
  return e;
}

bool direct_convex_leq(const RandomVariable& x, const RandomVariable& y) {
  double mx = 0.0, my = 0.0;
  for (std::size_t s = 0; s < x.size(); ++s) mx += x.space()->prob(s) * x[s];
  for (std::size_t s = 0; s < y.size(); ++s) my += y.space()->prob(s) * y[s];
  if (std::abs(mx - my) > 1e-12 * std::max(1.0, std::abs(mx))) return false;
  std::vector<double> pts = x.values();
  pts.insert(pts.end(), y.values().begin(), y.values().end());
  for (double t : pts)
    if (direct_stop_loss(x, t) > direct_stop_loss(y, t) + 1e-12) return false;
  return true;
}

std::vector<double> conditional_means(const std::vector<double>& y, const SpacePtr& child, const SpacePtr& parent) {
  const auto map = child->ancestor_map(*parent);
  std::vector<double> mass(parent->size(), 0.0), sum(parent->size(), 0.0);
  for (std::size_t c = 0; c < y.size(); ++c) {
    mass[map[c]] += child->prob(c);
    sum[map[c]] += child->prob(c) * y[c];
  }
  for (std::size_t s = 0; s < sum.size(); ++s) sum[s] /= mass[s];
  return sum;
}

// Checks that every component is either 0 or the whole total on each atom.
bool jackpot_shape(const Allocation& a) {
  for (std::size_t s = 0; s < a.total().size(); ++s) {
    int holders = 0;
    for (std::size_t i = 0; i < a.agents(); ++i) {
      const double v = a.values(i)[s];
      if (std::abs(v) <= 1e-12) continue;
      if (std::abs(v - a.total()[s]) > 1e-12 * std::max(1.0, a.total()[s])) return false;
      ++holders;
    }
    if (holders > 1) return false;
  }
  return true;
}

Allocation proportional(const RandomVariable& x, const std::vector<double>& theta) {
  std::vector<std::vector<double>> comps;
  for (double t : theta) comps.push_back(x.scaled(t).values());
  return Allocation(x, comps);
}

std::vector<Agent> example_seeking() {
  auto s = make_eu_agent(UtilityFunction::quadratic(3.0, 1.0, 2.0));
  return {s, s};
}

std::vector<Agent> example_averse() {
  auto t = make_eu_agent(UtilityFunction::capped_quadratic(5.0, 2.0, 1.0));
  return {t, t};
}

// ---------------------------------------------------------------------------

void frontier_point(Outcome& o) {
  const auto start = std::chrono::steady_clock::now();
  auto x = uniform_midpoints(10000, 0.0, 1.0);
  std::vector<Agent> agents = {make_eu_agent(UtilityFunction::power(2.0, 3.0)),
                               make_eu_agent(UtilityFunction::power(3.0, 4.0))};
  auto opt = rs_lambda_optimal({0.5, 0.5}, agents, x);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  o.detail << "utilities " << fmt(opt.utilities[0]) << ", " << fmt(opt.utilities[1]) << " in " << fmt(secs) << " s";
  o.require(std::abs(opt.utilities[0] - 27.0 / 64.0) <= 1e-3, "first utility");
  o.require(std::abs(opt.utilities[1] - 175.0 / 256.0) <= 1e-3, "second utility");
  o.require(secs < 1.0, "runtime");
}

void mixed_split(Outcome& o) {
  std::vector<Agent> agents = example_seeking();
  for (auto& a : example_averse()) agents.push_back(a);
  const double c = split_threshold({1.25, 1.25, 1.0, 1.0}, agents, {0, 1}, {2, 3}, 0.05, 2.0);
  auto split = optimal_split({1.0, 1.0, 2.0, 2.0}, agents, {0, 1}, {2, 3}, 2.0);
  o.detail << "threshold " << fmt(c) << ", split (" << fmt(split.seeking_share) << ", " << fmt(2.0 - split.seeking_share)
           << ")";
  o.require(std::abs(c - 5.0 / 9.0) <= 1e-6, "threshold");
  o.require(std::abs(split.seeking_share - 0.5) <= 1e-6, "seeking share");
  o.require(std::abs((2.0 - split.seeking_share) - 1.5) <= 1e-6, "averse share");
}

void two_point(Outcome& o) {
  auto a = two_point_mixed_equilibrium(0.5, 1.5, 0.5, example_seeking(), example_averse());
  o.detail << "L " << fmt(a.upper) << ", R " << fmt(a.lower);
  o.require(a.exists, "interval nonempty");
  o.require(std::abs(a.upper - 0.8) <= 1e-12, "L");
  o.require(std::abs(a.lower - 7.0 / 9.0) <= 1e-12, "R");
  auto verdict = [&](double eps) {
    auto inst = build_two_point_instance(0.5, 1.5, 0.5, example_seeking(), example_averse(), 1.0 - eps, 1.0 + eps);
    auto cert = verify_equilibrium(inst.allocation, inst.price, inst.allocation, inst.agents);
    return cert.valid;
  };
  for (double eps : {1.0 / 9.0, 0.115, 1.0 / 8.0}) o.require(verdict(eps), "accept eps " + fmt(eps));
  for (double eps : {0.10, 0.14}) o.require(!verdict(eps), "reject eps " + fmt(eps));
}

void envelope(Outcome& o) {
  auto w = WeightingFunction::tk(0.71);
  auto env = concave_envelope(w, 10000);
  auto inflection = check_cavexity(w, 10000);
  o.detail << "beta " << fmt(env.beta) << ", inflection " << (inflection ? fmt(*inflection) : "none");
  o.require(std::abs(env.beta - 0.133) <= 0.002, "beta");
  o.require(inflection && std::abs(*inflection - 0.452) <= 0.005, "inflection");
}

void improvement(Outcome& o) {
  gen::Rng rng(20240501);
  int passed = 0;
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t m = gen::pick(rng, 1, 6), n = gen::pick(rng, 1, 4);
    auto sp = gen::space(rng, m);
    auto alloc = gen::allocation(rng, sp, n);
    auto r = counter_monotonic_improve(alloc);
    bool ok = jackpot_shape(r.allocation);
    auto lifted = alloc.lifted_to(r.extension.space);
    for (std::size_t c = 0; c < r.extension.space->size(); ++c) {
      double sum = 0.0;
      for (std::size_t i = 0; i < n; ++i) sum += r.allocation.values(i)[c];
      ok = ok && std::abs(sum - lifted.total()[c]) <= 1e-12 * std::max(1.0, lifted.total()[c]);
    }
    for (std::size_t i = 0; i < n; ++i) {
      auto means = conditional_means(r.allocation.values(i), r.extension.space, sp);
      for (std::size_t s = 0; s < m; ++s) ok = ok && std::abs(means[s] - alloc.values(i)[s]) <= 1e-12;
      ok = ok && direct_convex_leq(lifted.component(i), r.allocation.component(i));
    }
    passed += ok;
  }
  o.detail << passed << "/200 random instances";
  o.require(passed == 200, "random instances");

  // Four equiprobable states, three agents, total 3 everywhere.
  auto four = FiniteProbSpace::uniform(4);
  RandomVariable three(four, {3.0, 3.0, 3.0, 3.0});
  Allocation ex(three, {{3, 0, 0, 1}, {0, 3, 0, 1}, {0, 0, 3, 1}});
  const bool none = counter_monotonic_representation(ex).status == RepresentationStatus::not_representable;
  auto r = counter_monotonic_improve(ex);
  bool thirds = jackpot_shape(r.allocation);
  for (std::size_t i = 0; i < 3; ++i) {
    thirds = thirds && std::abs(r.extension.partition.probability_of(i) - 1.0 / 3.0) <= 1e-12;
    for (double v : r.allocation.values(i)) thirds = thirds && (v == 0.0 || v == 3.0);
  }
  o.detail << "; unextended representation " << (none ? "absent" : "found") << ", extended owners "
           << (thirds ? "1/3 each" : "wrong");
  o.require(none, "no representation on the original space");
  o.require(thirds, "extended construction");
}

void oracle_bound(Outcome& o) {
  gen::Rng rng(77);
  int passed = 0;
  double worst = 1e300;
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t m = gen::pick(rng, 1, 3), n = gen::pick(rng, 1, 3);
    auto sp = gen::space(rng, m);
    auto x = gen::nonnegative(rng, sp, 2.0);
    std::vector<Agent> agents;
    // cycle through all-seeking, all-averse and mixed groups
    for (std::size_t i = 0; i < n; ++i) {
      const bool seeking = rep % 3 == 0 || (rep % 3 == 2 && i % 2 == 0);
      agents.push_back(make_eu_agent(seeking ? gen::convex_utility(rng) : gen::concave_utility(rng)));
    }
    auto lambda = gen::simplex_point(rng, n);
    const double engine = lambda_optimal(lambda, agents, x).value;
    auto rep_o = oracle::brute_force_weighted_max(lambda, agents, x, 51, engine);
    worst = std::min(worst, *rep_o.engine_gap + rep_o.resolution);
    passed += engine >= rep_o.best_value - rep_o.resolution;
  }
  o.detail << passed << "/50, smallest slack " << fmt(worst);
  o.require(passed == 50, "engine below oracle");
}

void homogeneous_invariance(Outcome& o) {
  gen::Rng rng(5150);
  auto sp = gen::space(rng, 5);
  auto x = gen::nonnegative(rng, sp, 3.0);
  auto u = UtilityFunction::power(2.5);
  const double eu = expected_utility(x, u);
  std::vector<double> first;
  double price_gap = 0.0, utility_gap = 0.0;
  bool exact = true, valid = true;
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t n = gen::pick(rng, 2, 4);
    std::vector<Agent> agents(n, make_eu_agent(u));
    std::vector<std::vector<double>> comps(n, std::vector<double>(5, 0.0));
    for (std::size_t s = 0; s < 5; ++s) {
      auto share = gen::simplex_point(rng, n, 0.0);
      for (std::size_t i = 0; i < n; ++i) comps[i][s] = share[i] * x[s];
    }
    Allocation endow(x, comps);
    if (is_trivial_endowment(endow)) continue;
    auto r = homogeneous_equilibrium(agents, endow);
    std::vector<double> on_parent(5);
    const auto map = r.price.space()->ancestor_map(*sp);
    for (std::size_t c = 0; c < map.size(); ++c) on_parent[map[c]] = r.price[c];
    if (first.empty()) first = on_parent;
    for (std::size_t s = 0; s < 5; ++s) price_gap = std::max(price_gap, std::abs(on_parent[s] - first[s]));
    for (std::size_t i = 0; i < n; ++i) utility_gap = std::max(utility_gap, std::abs(r.utilities[i] - eu * r.shares[i]));
    valid = valid && r.certificate.valid;
    for (const auto& a : r.certificate.agents) exact = exact && a.method == VerificationMethod::exact_vertex;
  }
  o.detail << "price spread " << fmt(price_gap) << ", utility error " << fmt(utility_gap);
  o.require(price_gap <= 1e-12, "price invariance");
  o.require(utility_gap <= 1e-9, "utility vector");
  o.require(valid, "certificates valid");
  o.require(exact, "certificates vertex-exact");
}

void rdu_sum(Outcome& o) {
  auto tk = WeightingFunction::tk(0.71);
  auto lin = UtilityFunction::linear_log(1.8, 1.0);
  struct Case {
    std::size_t n;
    WeightingFunction w;
    RandomVariable x;
  };
  std::vector<Case> cases = {
      {8, tk, RandomVariable(FiniteProbSpace::uniform(1), {1.0})},
      {8, tk, RandomVariable(FiniteProbSpace::uniform(1), {0.6})},
      {2, WeightingFunction::power(0.6), RandomVariable(FiniteProbSpace::create({0.1, 0.2, 0.3, 0.4}), {0.2, 0.5, 0.7, 1.0})},
      {2, WeightingFunction::power(0.8), RandomVariable(FiniteProbSpace::create({0.5, 0.5}), {0.3, 0.9})},
      {4, WeightingFunction::piecewise_linear({{0.0, 0.0}, {0.25, 0.5}, {1.0, 1.0}}),
       RandomVariable(FiniteProbSpace::create({0.4, 0.6}), {0.5, 1.0})},
  };
  double worst_excess = -1e300, worst_attain = 0.0;
  for (const auto& c : cases) {
    auto sc = make_rdu_scenario(c.n, make_agent(lin, c.w), c.x, 1.0);
    const double bound = rdu_sum_optimal_value(sc);
    auto ext = extend_with_independent_categorical(c.x.space(), std::vector<double>(c.n, 1.0 / c.n));
    if (ext.space->size() > 8) throw std::logic_error("case exceeds eight extended atoms");
    std::vector<Agent> agents(c.n, sc.agent);
    auto e = oracle::enumerate_jackpot_partitions(c.x.lifted_to(ext.space), agents);
    worst_excess = std::max(worst_excess, e.best_sum - bound);
    auto d = jackpot_vs_proportional(sc);
    worst_attain = std::max(worst_attain, std::abs(static_cast<double>(c.n) * d.jackpot_utility - bound));
  }
  auto sc8 = make_rdu_scenario(8, make_agent(lin, tk), RandomVariable(FiniteProbSpace::create({0.3, 0.7}), {0.4, 1.0}), 1.0);
  auto d8 = jackpot_vs_proportional(sc8);
  o.detail << "max excess over bound " << fmt(worst_excess) << ", equal-odds gap " << fmt(worst_attain)
           << ", n=8 margin " << fmt(d8.margin);
  o.require(worst_excess <= 1e-9, "enumeration bound");
  o.require(worst_attain <= 1e-9, "equal-odds jackpot attains");
  o.require(d8.verdict == DominanceVerdict::jackpot_strictly_dominates && d8.margin > 0.0, "dominance margin");
}

void rdu_threshold(Outcome& o) {
  auto agent = make_agent(UtilityFunction::linear_log(1.8, 1.0), WeightingFunction::tk(0.71));
  RandomVariable one(FiniteProbSpace::uniform(1), {1.0});
  auto sc = make_rdu_scenario(8, agent, one, 1.0);
  auto y = find_y0(sc);
  o.require(y.y0.has_value() && std::isfinite(*y.y0), "finite y0");
  if (!y.y0) return;
  o.detail << "y0 " << fmt(*y.y0);
  const bool below = jackpot_vs_proportional(sc).verdict == DominanceVerdict::jackpot_strictly_dominates;
  bool above = true;
  for (double k : {1.0, 2.0, 10.0}) {
    auto hi = make_rdu_scenario(8, agent, RandomVariable(FiniteProbSpace::uniform(1), {k * *y.y0}), 1.0);
    above = above && jackpot_vs_proportional(hi).verdict == DominanceVerdict::proportional_strictly_dominates;
  }
  o.require(below, "jackpot dominates below");
  o.require(above, "proportional dominates above");
  double worst = 0.0;
  for (double wealth : {0.5, 2.0, 4.0, 10.0}) {
    auto e = epsilon_perturbation(wealth, sc, 0.0);
    worst = std::max(worst, std::abs(e.derivative_estimate - e.derivative_limit));
  }
  o.detail << ", derivative gap " << fmt(worst);
  o.require(worst <= 1e-4, "derivative");
}

// Layer-formula Choquet integral, independent of the library.
double layer_choquet(const RandomVariable& y, const WeightingFunction& w) {
  std::vector<std::size_t> idx(y.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return y[a] < y[b]; });
  double tail = 1.0, prev = 0.0, out = 0.0;
  for (auto s : idx) {
    out += (y[s] - prev) * w(std::clamp(tail, 0.0, 1.0));
    prev = y[s];
    tail -= y.space()->prob(s);
  }
  return out;
}

void choquet_suite(Outcome& o) {
  gen::Rng rng(1010);
  int mono = 0, homog = 0, additive = 0, collapse = 0, layer = 0;
  for (int rep = 0; rep < 100; ++rep) {
    auto sp = gen::space(rng, gen::pick(rng, 1, 8));
    auto w = gen::weighting(rng);
    auto y = gen::nonnegative(rng, sp);
    const double v = choquet(y, w);
    layer += std::abs(v - layer_choquet(y, w)) <= 1e-10;
    auto z = y.map([&](double t) { return t + gen::uniform(rng, 0.0, 1.0); });
    mono += choquet(z, w) >= v - 1e-10;
    const double c = gen::uniform(rng, 0.1, 10.0);
    homog += std::abs(choquet(y.scaled(c), w) - c * v) <= 1e-10 * std::max(1.0, c * v);
    const double a = gen::uniform(rng, 0.0, 2.0);
    auto co = y.map([a](double t) { return a * t * t + std::sqrt(t); });
    const double vc = choquet(co, w);
    additive += std::abs(choquet(y + co, w) - (v + vc)) <= 1e-10 * std::max(1.0, v + vc);
    collapse += std::abs(choquet(y, WeightingFunction::identity()) - expectation(y)) <= 1e-10 * std::max(1.0, v);
  }
  o.detail << "monotone " << mono << ", homogeneous " << homog << ", comonotone-additive " << additive
           << ", expectation " << collapse << ", layer formula " << layer << " of 100";
  o.require(mono == 100 && homog == 100 && additive == 100 && collapse == 100 && layer == 100, "property count");
}

void welfare(Outcome& o) {
  gen::Rng rng(4242);
  int checked = 0, passed = 0;
  auto accept = [&](const EquilibriumResult& r, const std::vector<Agent>& agents) {
    ++checked;
    auto v = pareto_check_rs(r.allocation, agents);
    const bool ok = r.certificate.valid && v.pareto_optimal && v.jackpot &&
                    check_dependence(r.allocation, DependenceMode::jackpot).holds;
    passed += ok;
  };
  for (int rep = 0; rep < 10; ++rep) {
    auto sp = gen::space(rng, gen::pick(rng, 2, 5));
    auto x = gen::nonnegative(rng, sp, 3.0).map([](double t) { return t + 0.1; });
    const std::size_t n = gen::pick(rng, 2, 3);
    auto theta = gen::simplex_point(rng, n);

    std::vector<Agent> same(n, make_eu_agent(gen::convex_utility(rng)));
    accept(homogeneous_equilibrium(same, proportional(x, theta)), same);

    std::vector<Agent> pair = gen::convex_agents(rng, 2);
    accept(two_agent_equilibrium(pair, proportional(x, gen::simplex_point(rng, 2))), pair);

    std::vector<Agent> mixed = gen::convex_agents(rng, n);
    FixedPointOptions fo;
    fo.seed = static_cast<unsigned long long>(rep + 1);
    auto fp = fixed_point_search(mixed, proportional(x, theta), fo);
    if (!fp.certified || fp.residual > 1e-6 || !fp.equilibrium) {
      ++checked;
      continue;
    }
    accept(*fp.equilibrium, mixed);
  }
  o.detail << passed << "/" << checked << " equilibria";
  o.require(passed == checked, "welfare checks");
}

}  // namespace

int main() {
  criterion(1, "equal-weight frontier point of two convex agents", frontier_point);
  criterion(2, "mixed-group split threshold and interior split", mixed_split);
  criterion(3, "two-point mixed equilibrium bounds and price checks", two_point);
  criterion(4, "concave envelope breakpoint and inflection of TK(0.71)", envelope);
  criterion(5, "counter-monotonic improvement suite", improvement);
  criterion(6, "lambda-optimal value against grid oracle", oracle_bound);
  criterion(7, "homogeneous equilibrium invariance", homogeneous_invariance);
  criterion(8, "rank-dependent sum-optimality and dominance", rdu_sum);
  criterion(9, "rank-dependent threshold and small-stake derivative", rdu_threshold);
  criterion(10, "Choquet integral property suite", choquet_suite);
  criterion(11, "welfare checks on emitted equilibria", welfare);
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
