#include "riskshare/rdu_analysis.hpp"

#include <algorithm>
#include <cmath>

namespace riskshare {

namespace {

constexpr double kVerdictTol = 1e-10;

// Sum over layers of (v_k - v_{k-1}) * f(P(V >= v_k)).
template <class F>
double layer_sum(const RandomVariable& v, F&& f) {
  auto dist = merged_distribution(v);
  double tail = 0.0, prev = 0.0, total = 0.0;
  std::vector<double> tails(dist.size());
  for (std::size_t k = dist.size(); k-- > 0;) {
    tail += dist[k].second;
    tails[k] = std::min(tail, 1.0);
  }
  for (std::size_t k = 0; k < dist.size(); ++k) {
    double x = std::max(dist[k].first, 0.0);
    total += (x - prev) * f(tails[k]);
    prev = x;
  }
  return total;
}

}  // namespace

std::string to_string(DominanceVerdict v) {
  switch (v) {
    case DominanceVerdict::jackpot_strictly_dominates: return "jackpot_strictly_dominates";
    case DominanceVerdict::proportional_strictly_dominates: return "proportional_strictly_dominates";
    case DominanceVerdict::incomparable: return "incomparable";
  }
  return "?";
}

RduScenario make_rdu_scenario(std::size_t n, Agent agent, RandomVariable total, double x0,
                              std::size_t envelope_grid) {
  if (n == 0) throw ValidationError("scenario needs at least one agent");
  if (!(x0 > 0.0)) throw ValidationError("linear threshold x0 must be positive");
  if (total.min() < -kDependenceTol) throw DomainError("aggregate risk takes a negative value");
  Envelope env = concave_envelope(agent.weighting, envelope_grid);
  RduScenario sc{n, std::move(agent), std::move(total), x0, std::move(env), RduAudit{}};
  const double slope = sc.agent.utility(x0) / x0;
  sc.audit.utility_linear = true;
  for (int k = 1; k < 16; ++k) {
    double y = x0 * k / 16.0;
    if (std::abs(sc.agent.utility(y) / y - slope) > 1e-9 * slope) sc.audit.utility_linear = false;
  }
  const double nn = static_cast<double>(n);
  for (int k = 0; k <= 1000; ++k) {
    double t = k / 1000.0 / nn;
    sc.audit.envelope_gap = std::max(sc.audit.envelope_gap, sc.envelope(t) - sc.agent.weighting(t));
  }
  sc.audit.inflection = check_cavexity(sc.agent.weighting);
  if (!sc.audit.utility_linear) sc.audit.warnings.push_back("utility is not linear on [0, x0]");
  if (!sc.audit.envelope_matches())
    sc.audit.warnings.push_back("weighting differs from its concave envelope on [0, 1/n]");
  if (!sc.audit.inflection) sc.audit.warnings.push_back("weighting is not concave-then-convex");
  return sc;
}

DominanceReport jackpot_vs_proportional(const RduScenario& sc) {
  const std::size_t n = sc.n;
  DominanceReport r;
  Extension ext = extend_with_independent_categorical(
      sc.total.space(), std::vector<double>(n, 1.0 / static_cast<double>(n)));
  RandomVariable lifted = sc.total.lifted_to(ext.space);
  std::vector<double> mine(ext.space->size(), 0.0);
  for (std::size_t c = 0; c < mine.size(); ++c)
    if (ext.partition.owner[c] == 0) mine[c] = lifted[c];
  r.jackpot_utility = rdu_utility(RandomVariable(ext.space, mine), sc.agent);
  const double nn = static_cast<double>(n);
  r.layer_value = layer_sum(sc.total.map([&](double x) { return sc.agent.utility(x); }),
                            [&](double t) { return sc.agent.weighting(t / nn); });
  if (std::abs(r.layer_value - r.jackpot_utility) > 1e-10 * std::max(1.0, std::abs(r.layer_value)))
    throw NumericError("jackpot utility disagrees with its layer formula");
  r.proportional_utility = rdu_utility(sc.total.scaled(1.0 / nn), sc.agent);
  r.margin = r.jackpot_utility - r.proportional_utility;
  r.verdict = r.margin > kVerdictTol    ? DominanceVerdict::jackpot_strictly_dominates
              : r.margin < -kVerdictTol ? DominanceVerdict::proportional_strictly_dominates
                                        : DominanceVerdict::incomparable;
  return r;
}

double rdu_sum_optimal_value(const RduScenario& sc) {
  if (sc.total.max() > sc.x0 + kDependenceTol)
    throw PreconditionError("sum-optimal value needs the aggregate risk below x0");
  const double slope = sc.agent.utility(sc.x0) / sc.x0;
  const double nn = static_cast<double>(sc.n);
  return nn * slope * layer_sum(sc.total, [&](double t) { return sc.envelope(t / nn); });
}

Y0Result find_y0(const RduScenario& sc, const Y0Options& options) {
  if (!(options.x_min > 0.0 && options.x_max > options.x_min) || options.per_decade == 0)
    throw ValidationError("y0 search grid is malformed");
  Y0Result r;
  r.tech = check_tech_con(sc.agent.weighting, sc.agent.utility, sc.n, options.tech);
  r.theta = std::min(r.tech.sup_ratio_estimate + options.theta_margin, 1.0 - 1e-12);
  const double nn = static_cast<double>(sc.n);
  const double w1n = sc.agent.weighting(1.0 / nn);
  const double decades = std::log10(options.x_max / options.x_min);
  const std::size_t points =
      static_cast<std::size_t>(std::ceil(decades * static_cast<double>(options.per_decade))) + 1;
  std::vector<double> xs(points);
  for (std::size_t k = 0; k < points; ++k)
    xs[k] = options.x_min * std::pow(10.0, decades * static_cast<double>(k) / (points - 1.0));
  // Scan from the top down; y0 is the start of the final run where the
  // strict ratio bound holds.
  std::optional<double> y0;
  for (std::size_t k = points; k-- > 0;) {
    const double x = xs[k];
    if (sc.agent.utility(x / nn) > r.theta * sc.agent.utility(x))
      y0 = x;
    else
      break;
  }
  if (r.tech.satisfied) r.y0 = y0;
  for (double x : xs) r.flip_table.emplace_back(x, sc.agent.utility(x / nn) - w1n * sc.agent.utility(x));
  return r;
}

EpsilonReport epsilon_perturbation(double y, const RduScenario& sc, double epsilon) {
  if (!(y > 0.0)) throw DomainError("perturbation needs y > 0");
  if (epsilon < 0.0 || epsilon >= y) throw DomainError("perturbation needs 0 <= epsilon < y");
  const auto& u = sc.agent.utility;
  const double nn = static_cast<double>(sc.n);
  const double w1n = sc.agent.weighting(1.0 / nn);
  auto g = [&](double e) { return u(y - e) + (u(y + (nn - 1.0) * e) - u(y - e)) * w1n; };
  EpsilonReport r;
  r.utility = g(epsilon);
  r.base_utility = u(y);
  const double h = 1e-5;
  if (h >= y) throw DomainError("y is too small for the finite-difference step");
  r.derivative_estimate = (g(h) - g(0.0)) / h;
  r.derivative_limit = nn * u.derivative(y, Side::right) * (w1n - 1.0 / nn);
  return r;
}

}  // namespace riskshare
