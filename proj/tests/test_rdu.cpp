#include <doctest.h>

#include <cmath>

#include "generators.hpp"
#include "riskshare/oracle.hpp"
#include "riskshare/rdu_analysis.hpp"

using namespace riskshare;

namespace {

Agent tk_linear_log() { return make_agent(UtilityFunction::linear_log(1.8, 1.0), WeightingFunction::tk(0.71)); }

// Layer integral of w(P(u(X) > x) / n) over x, by sorting outcomes.
double layer_integral(const RandomVariable& x, const Agent& agent, std::size_t n) {
  auto ux = x.map([&](double v) { return agent.utility(v); });
  auto dist = merged_distribution(ux, 0.0);
  double tail = 1.0, prev = 0.0, out = 0.0;
  for (auto [v, p] : dist) {
    out += (v - prev) * agent.weighting(std::clamp(tail, 0.0, 1.0) / static_cast<double>(n));
    prev = v;
    tail -= p;
  }
  return out;
}

}  // namespace

TEST_SUITE("rdu") {
  TEST_CASE("jackpot utility equals the layer integral") {
    gen::Rng rng(61);
    for (int rep = 0; rep < 20; ++rep) {
      const std::size_t n = gen::pick(rng, 1, 8);
      auto sp = gen::space(rng, gen::pick(rng, 1, 5));
      auto x = gen::nonnegative(rng, sp, 1.0);
      auto sc = make_rdu_scenario(n, tk_linear_log(), x, 1.0);
      auto r = jackpot_vs_proportional(sc);
      CHECK(std::abs(r.jackpot_utility - layer_integral(x, sc.agent, n)) <= 1e-10);
      CHECK(std::abs(r.layer_value - r.jackpot_utility) <= 1e-10);
      if (n == 1) {
        CHECK(r.verdict == DominanceVerdict::incomparable);
        CHECK(std::abs(r.margin) <= 1e-12);
      }
    }
  }

  TEST_CASE("jackpot dominates below the linearity bound") {
    auto sp = FiniteProbSpace::create({0.3, 0.7});
    auto sc = make_rdu_scenario(8, tk_linear_log(), RandomVariable(sp, {0.4, 1.0}), 1.0);
    CHECK(sc.audit.passed());
    auto r = jackpot_vs_proportional(sc);
    CHECK(r.verdict == DominanceVerdict::jackpot_strictly_dominates);
    CHECK(r.margin > 0.0);
  }

  TEST_CASE("satiation flips the verdict for large constant totals") {
    auto agent = make_agent(UtilityFunction::satiation(1.0, 0.2, 0.5), WeightingFunction::tk(0.71));
    auto sp = FiniteProbSpace::uniform(1);
    auto sc = make_rdu_scenario(4, agent, RandomVariable(sp, {4.0}), 0.2);
    CHECK(jackpot_vs_proportional(sc).verdict == DominanceVerdict::proportional_strictly_dominates);
  }

  TEST_CASE("envelope scaling inequality behind strict dominance") {
    const std::size_t n = 8;
    auto w = WeightingFunction::tk(0.71);
    auto env = concave_envelope(w);
    for (int k = 1; k < 100; ++k) {
      const double p = k / 100.0;
      CHECK(static_cast<double>(n) * env(p / n) > w(p));
    }
  }

  TEST_CASE("sum-optimal value") {
    auto sp = FiniteProbSpace::create({0.25, 0.75});
    RandomVariable x(sp, {0.5, 1.0});
    SUBCASE("identity weighting gives the plain expectation") {
      auto sc = make_rdu_scenario(3, make_agent(UtilityFunction::linear_log(1.8, 1.0), WeightingFunction::identity()), x, 1.0);
      CHECK(rdu_sum_optimal_value(sc) == doctest::Approx(1.8 * expectation(x)).epsilon(1e-9));
    }
    SUBCASE("constant total at the linearity bound") {
      RandomVariable c(FiniteProbSpace::uniform(1), {1.0});
      auto sc = make_rdu_scenario(8, tk_linear_log(), c, 1.0);
      const double v = rdu_sum_optimal_value(sc);
      CHECK(v == doctest::Approx(8.0 * sc.envelope(1.0 / 8.0) * 1.8).epsilon(1e-9));
      CHECK(v > 1.8);
    }
    SUBCASE("total beyond the linearity bound is refused") {
      RandomVariable big(sp, {0.5, 3.0});
      auto sc = make_rdu_scenario(2, tk_linear_log(), big, 1.0);
      CHECK_THROWS_AS(rdu_sum_optimal_value(sc), PreconditionError);
    }
  }

  TEST_CASE("threshold search") {
    RandomVariable c(FiniteProbSpace::uniform(1), {1.0});
    SUBCASE("linear-log utility") {
      auto sc = make_rdu_scenario(8, tk_linear_log(), c, 1.0);
      auto r = find_y0(sc);
      REQUIRE(r.y0);
      CHECK(std::isfinite(*r.y0));
      RandomVariable above(FiniteProbSpace::uniform(1), {*r.y0 * 2.0});
      auto sc2 = make_rdu_scenario(8, tk_linear_log(), above, 1.0);
      CHECK(jackpot_vs_proportional(sc2).verdict == DominanceVerdict::proportional_strictly_dominates);
    }
    SUBCASE("linear utility never flips") {
      auto sc = make_rdu_scenario(8, make_agent(UtilityFunction::power(1.0), WeightingFunction::tk(0.71)), c, 1.0);
      CHECK_FALSE(find_y0(sc).y0.has_value());
    }
    SUBCASE("bounded utility flips") {
      auto sc = make_rdu_scenario(8, make_agent(UtilityFunction::exponential(1.0), WeightingFunction::tk(0.71)), c, 1.0);
      CHECK(find_y0(sc).y0.has_value());
    }
  }

  TEST_CASE("small-stake perturbation") {
    RandomVariable c(FiniteProbSpace::uniform(1), {1.0});
    auto sc = make_rdu_scenario(8, tk_linear_log(), c, 1.0);
    const double y = 2.0;
    auto zero = epsilon_perturbation(y, sc, 0.0);
    CHECK(zero.utility == doctest::Approx(sc.agent.utility(y)).epsilon(1e-14));
    CHECK(std::abs(zero.derivative_estimate - zero.derivative_limit) <= 1e-4);
    auto small = epsilon_perturbation(y, sc, 1e-3);
    CHECK(small.utility > small.base_utility);
    CHECK(std::abs(epsilon_perturbation(y, sc, 1e-9).utility - zero.utility) <= 1e-7);
    CHECK_THROWS_AS(epsilon_perturbation(y, sc, y), DomainError);
    auto flat = make_rdu_scenario(8, make_agent(UtilityFunction::linear_log(1.8, 1.0), WeightingFunction::identity()), c, 1.0);
    CHECK(std::abs(epsilon_perturbation(y, flat, 0.0).derivative_limit) <= 1e-12);
  }

  TEST_CASE("no jackpot partition beats the sum-optimal value") {
    gen::Rng rng(71);
    for (int rep = 0; rep < 10; ++rep) {
      const std::size_t n = gen::pick(rng, 2, 3);
      auto sp = gen::space(rng, gen::pick(rng, 2, 4));
      auto x = gen::nonnegative(rng, sp, 1.0);
      auto sc = make_rdu_scenario(n, tk_linear_log(), x, 1.0);
      auto ext = extend_with_independent_categorical(sp, std::vector<double>(n, 1.0 / n));
      if (ext.space->size() > 8) continue;
      auto lifted = x.lifted_to(ext.space);
      std::vector<Agent> agents(n, sc.agent);
      auto e = oracle::enumerate_jackpot_partitions(lifted, agents);
      CHECK(e.best_sum <= rdu_sum_optimal_value(sc) + 1e-9);
    }
  }
}
