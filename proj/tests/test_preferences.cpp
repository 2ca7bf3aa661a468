#include <doctest.h>

#include <cmath>

#include "generators.hpp"
#include "riskshare/preferences.hpp"

using namespace riskshare;

namespace {

double tk_closed_form(double p, double g) {
  return std::pow(p, g) / std::pow(std::pow(p, g) + std::pow(1.0 - p, g), 1.0 / g);
}

// Choquet integral straight from the layer formula: sum over sorted
// outcomes of (y_(k) - y_(k-1)) * w(P(Y >= y_(k))).
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

}  // namespace

TEST_SUITE("preferences") {
  TEST_CASE("utility families evaluate as stated") {
    CHECK(UtilityFunction::power(2.0)(3.0) == doctest::Approx(9.0));
    CHECK(UtilityFunction::capped_quadratic(5.0, 2.0, 1.0)(0.5) == doctest::Approx(2.0));
    // beyond the cap the function continues with slope a - 2 t cap = 1
    CHECK(UtilityFunction::capped_quadratic(5.0, 2.0, 1.0)(2.0) == doctest::Approx(3.0 + 1.0));
    auto ll = UtilityFunction::linear_log(1.8, 1.0);
    CHECK(ll.derivative(1.0, Side::left) == doctest::Approx(1.8));
    CHECK(ll.derivative(1.0, Side::right) == doctest::Approx(1.8));
    CHECK(ll(std::exp(1.0)) == doctest::Approx(3.6));
    auto sat = UtilityFunction::satiation(1.0, 1.0, 2.0);
    CHECK(sat(5.0) == doctest::Approx(sat(2.0)));
    CHECK(sat(0.5) == doctest::Approx(0.5));
  }

  TEST_CASE("negative argument is a domain error") {
    CHECK_THROWS_AS(eval_utility(UtilityFunction::power(2.0), -1.0), DomainError);
  }

  TEST_CASE("log-space evaluation agrees with direct evaluation") {
    for (auto u : {UtilityFunction::power(2.5, 0.7), UtilityFunction::linear_log(1.8, 1.0),
                   UtilityFunction::exponential(0.5)}) {
      for (double x : {0.3, 1.0, 7.0, 40.0}) CHECK(u.at_log(std::log(x)) == doctest::Approx(u(x)).epsilon(1e-10));
    }
    CHECK(std::isfinite(UtilityFunction::linear_log(1.8, 1.0).at_log(4000.0 * std::log(10.0))));
  }

  TEST_CASE("curvature tags follow the family") {
    CHECK(UtilityFunction::power(2.0).curvature() == Curvature::strictly_convex);
    CHECK(UtilityFunction::power(0.5).curvature() == Curvature::strictly_concave);
    CHECK(UtilityFunction::exponential(-1.0).curvature() == Curvature::strictly_convex);
  }

  TEST_CASE("TK weighting matches its closed form") {
    auto w = WeightingFunction::tk(0.71);
    for (double p : {0.01, 0.125, 0.5, 0.9}) CHECK(w(p) == doctest::Approx(tk_closed_form(p, 0.71)).epsilon(1e-14));
    CHECK(w(0.0) == 0.0);
    CHECK(w(1.0) == doctest::Approx(1.0));
  }

  TEST_CASE("Choquet integral basics") {
    auto sp = FiniteProbSpace::uniform(1);
    CHECK(choquet(RandomVariable(sp, {2.0}), WeightingFunction::tk(0.6)) == doctest::Approx(2.0));
    auto two = FiniteProbSpace::uniform(2);
    RandomVariable y(two, {0.0, 1.0});
    auto w = WeightingFunction::tk(0.71);
    CHECK(choquet(y, w) == doctest::Approx(w(0.5)));
    CHECK(choquet(y, WeightingFunction::identity()) == doctest::Approx(0.5));
  }

  TEST_CASE("Choquet properties on random inputs") {
    gen::Rng rng(21);
    for (int rep = 0; rep < 100; ++rep) {
      auto sp = gen::space(rng, gen::pick(rng, 1, 7));
      auto w = gen::weighting(rng);
      RandomVariable y = gen::nonnegative(rng, sp);
      const double v = choquet(y, w);
      CHECK(std::abs(v - layer_choquet(y, w)) <= 1e-10);
      const double c = gen::uniform(rng, 0.1, 5.0);
      CHECK(std::abs(choquet(y.scaled(c), w) - c * v) <= 1e-10 * std::max(1.0, c * v));
      const double k = gen::uniform(rng, 0.0, 3.0);
      CHECK(std::abs(choquet(y.map([k](double x) { return x + k; }), w) - (v + k)) <= 1e-10 * (1.0 + v + k));
      RandomVariable z = y.map([&](double x) { return x + gen::uniform(rng, 0.0, 1.0); });
      CHECK(choquet(z, w) >= v - 1e-10);
      const double a = gen::uniform(rng, 0.0, 2.0), b = gen::uniform(rng, 0.5, 2.5);
      RandomVariable co = y.map([a, b](double x) { return a * x * x + std::sqrt(x) * b; });
      CHECK(std::abs(choquet(y + co, w) - v - choquet(co, w)) <= 1e-10 * (1.0 + v + choquet(co, w)));
      CHECK(std::abs(choquet(y, WeightingFunction::identity()) - expectation(y)) <= 1e-10);
    }
  }

  TEST_CASE("concave envelope") {
    SUBCASE("concave weighting is its own envelope") {
      auto env = concave_envelope(WeightingFunction::power(0.5), 2000);
      CHECK(env.beta == doctest::Approx(1.0));
      for (double t : {0.1, 0.4, 0.8}) CHECK(env(t) == doctest::Approx(std::sqrt(t)).epsilon(1e-6));
    }
    SUBCASE("convex weighting has the diagonal as envelope") {
      auto env = concave_envelope(WeightingFunction::power(2.0), 2000);
      CHECK(env.beta == doctest::Approx(0.0).epsilon(1e-3));
      for (double t : {0.1, 0.4, 0.8}) CHECK(env(t) == doctest::Approx(t).epsilon(1e-6));
    }
    SUBCASE("envelope dominates w and lies below its affine majorants") {
      gen::Rng rng(3);
      for (int rep = 0; rep < 20; ++rep) {
        auto w = gen::weighting(rng);
        auto env = concave_envelope(w, 2000);
        for (int k = 0; k <= 100; ++k) {
          const double t = k / 100.0;
          CHECK(env(t) >= w(t) - 1e-9);
        }
        // any chord line through (0, 0)-ish majorant: a + b t >= w on the grid
        const double b = gen::uniform(rng, 0.0, 3.0);
        double a = 0.0;
        for (int k = 0; k <= 2000; ++k) a = std::max(a, w(k / 2000.0) - b * k / 2000.0);
        for (int k = 0; k <= 100; ++k) CHECK(env(k / 100.0) <= a + b * k / 100.0 + 1e-6);
      }
    }
  }

  TEST_CASE("cavexity") {
    CHECK(check_cavexity(WeightingFunction::identity()) == 1.0);
    CHECK(check_cavexity(WeightingFunction::power(0.5)) == 1.0);
    CHECK(check_cavexity(WeightingFunction::power(2.0)) == 0.0);
    auto inflection = check_cavexity(WeightingFunction::tk(0.71));
    REQUIRE(inflection);
    CHECK(*inflection > 0.3);
    CHECK(*inflection < 0.6);
    auto zigzag = WeightingFunction::piecewise_linear(
        {{0.0, 0.0}, {0.2, 0.1}, {0.4, 0.5}, {0.6, 0.6}, {0.8, 0.65}, {1.0, 1.0}});
    CHECK_FALSE(check_cavexity(zigzag).has_value());
  }

  TEST_CASE("technical condition") {
    auto tk = WeightingFunction::tk(0.71);
    auto ll = UtilityFunction::linear_log(1.8, 1.0);
    CHECK(check_tech_con(tk, ll, 8).satisfied);
    auto id = check_tech_con(WeightingFunction::identity(), ll, 4);
    CHECK(id.sup_ratio_estimate == doctest::Approx(0.25).epsilon(1e-6));
    CHECK_FALSE(check_tech_con(tk, UtilityFunction::power(1.0), 8).satisfied);
    auto flat = UtilityFunction::piecewise_linear({{0.0, 0.0}, {1.0, 0.0}});
    CHECK_THROWS_AS(check_tech_con(tk, flat, 8), DomainError);
  }

  TEST_CASE("attitude must match curvature") {
    CHECK_NOTHROW(make_eu_agent(UtilityFunction::power(2.0)));
    CHECK(make_eu_agent(UtilityFunction::power(2.0)).attitude == Attitude::risk_seeking);
    CHECK(make_eu_agent(UtilityFunction::power(0.5)).attitude == Attitude::risk_averse);
    CHECK_THROWS(make_agent(UtilityFunction::power(2.0), WeightingFunction::identity(), Attitude::risk_averse));
  }
}
