#include "riskshare/preferences.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace riskshare {

namespace {

constexpr std::size_t kAuditPoints = 1000;

std::string fmt_num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ValidationError(msg);
}

double interpolate(const std::vector<std::pair<double, double>>& knots, double x, bool extend) {
  if (x <= knots.front().first) return knots.front().second;
  auto it = std::upper_bound(knots.begin(), knots.end(), x,
                             [](double v, const auto& k) { return v < k.first; });
  if (it == knots.end()) {
    if (!extend) return knots.back().second;
    const auto& a = knots[knots.size() - 2];
    const auto& b = knots.back();
    return b.second + (b.second - a.second) / (b.first - a.first) * (x - b.first);
  }
  const auto& b = *it;
  const auto& a = *(it - 1);
  return a.second + (b.second - a.second) * (x - a.first) / (b.first - a.first);
}

void check_knots(const std::vector<std::pair<double, double>>& knots, const char* what) {
  require(knots.size() >= 2, std::string(what) + " needs at least two knots");
  require(knots.front().first == 0.0 && knots.front().second == 0.0,
          std::string(what) + " must start at (0, 0)");
  for (std::size_t k = 1; k < knots.size(); ++k) {
    require(knots[k].first > knots[k - 1].first,
            std::string(what) + " knot abscissae must increase strictly");
    require(knots[k].second >= knots[k - 1].second,
            std::string(what) + " knot values must be nondecreasing");
  }
}

}  // namespace

std::string to_string(UtilityFamily f) {
  switch (f) {
    case UtilityFamily::power: return "power";
    case UtilityFamily::quadratic: return "quadratic";
    case UtilityFamily::linear_log: return "linear_log";
    case UtilityFamily::exponential: return "exponential";
    case UtilityFamily::satiation: return "satiation";
    case UtilityFamily::piecewise_linear: return "piecewise_linear";
    case UtilityFamily::capped_quadratic: return "capped_quadratic";
  }
  return "?";
}

std::string to_string(Curvature c) {
  switch (c) {
    case Curvature::strictly_convex: return "strictly_convex";
    case Curvature::strictly_concave: return "strictly_concave";
    case Curvature::ratio_increasing: return "ratio_increasing";
    case Curvature::none: return "none";
  }
  return "?";
}

std::string to_string(WeightingFamily f) {
  switch (f) {
    case WeightingFamily::identity: return "identity";
    case WeightingFamily::tk: return "tk";
    case WeightingFamily::power: return "power";
    case WeightingFamily::piecewise_linear: return "piecewise_linear";
    case WeightingFamily::grid: return "grid";
  }
  return "?";
}

std::string to_string(Attitude a) {
  switch (a) {
    case Attitude::risk_seeking: return "risk_seeking";
    case Attitude::risk_averse: return "risk_averse";
    case Attitude::neutral: return "neutral";
    case Attitude::mixed: return "mixed";
  }
  return "?";
}

// ---------------------------------------------------------------------------

UtilityFunction::UtilityFunction(UtilityFamily family, std::vector<double> params, double range)
    : family_(family), params_(std::move(params)), range_(range) {
  for (double p : params_) require(std::isfinite(p), "utility parameters must be finite");
}

UtilityFunction UtilityFunction::power(double alpha, double scale) {
  require(alpha > 0.0, "power utility needs alpha > 0");
  require(scale > 0.0, "power utility needs scale > 0");
  UtilityFunction u(UtilityFamily::power, {alpha, scale}, 1.0);
  u.tag_ = u.infer_tag();
  u.audit();
  return u;
}

UtilityFunction UtilityFunction::quadratic(double a, double b, double range) {
  require(a >= 0.0, "quadratic utility needs a >= 0");
  require(range > 0.0, "quadratic utility needs a positive range");
  require(a + 2.0 * b * range >= 0.0, "quadratic utility decreases inside its range");
  require(a > 0.0 || b > 0.0, "quadratic utility is constant");
  UtilityFunction u(UtilityFamily::quadratic, {a, b}, range);
  u.tag_ = u.infer_tag();
  u.audit();
  return u;
}

UtilityFunction UtilityFunction::linear_log(double a, double x0) {
  require(a > 0.0 && x0 > 0.0, "linear_log utility needs a > 0 and x0 > 0");
  UtilityFunction u(UtilityFamily::linear_log, {a, x0}, 4.0 * x0);
  u.tag_ = u.infer_tag();
  u.audit();
  return u;
}

UtilityFunction UtilityFunction::exponential(double k, double scale) {
  require(k != 0.0, "exponential utility needs k != 0");
  require(scale > 0.0, "exponential utility needs scale > 0");
  UtilityFunction u(UtilityFamily::exponential, {k, scale}, std::min(1.0, 5.0 / std::abs(k)));
  u.tag_ = u.infer_tag();
  u.audit();
  return u;
}

UtilityFunction UtilityFunction::satiation(double a, double x0, double y0) {
  require(a > 0.0 && x0 > 0.0 && y0 > x0, "satiation utility needs a > 0 and 0 < x0 < y0");
  UtilityFunction u(UtilityFamily::satiation, {a, x0, y0}, 1.5 * y0);
  u.tag_ = u.infer_tag();
  u.audit();
  return u;
}

UtilityFunction UtilityFunction::piecewise_linear(std::vector<std::pair<double, double>> knots) {
  check_knots(knots, "piecewise-linear utility");
  double range = knots.back().first;
  UtilityFunction u(UtilityFamily::piecewise_linear, {}, range);
  u.knots_ = std::move(knots);
  u.tag_ = u.infer_tag();
  u.audit();
  return u;
}

UtilityFunction UtilityFunction::capped_quadratic(double a, double t, double cap) {
  require(t > 0.0 && cap > 0.0, "capped quadratic needs t > 0 and cap > 0");
  require(a - 2.0 * t * cap >= 0.0, "capped quadratic decreases before its cap");
  UtilityFunction u(UtilityFamily::capped_quadratic, {a, t, cap}, cap);
  u.tag_ = u.infer_tag();
  u.audit();
  return u;
}

UtilityFunction UtilityFunction::with_tag(Curvature tag, std::optional<double> range) const {
  UtilityFunction u = *this;
  u.tag_ = tag;
  if (range) {
    require(*range > 0.0, "audit range must be positive");
    u.range_ = *range;
  }
  u.audit();
  return u;
}

Curvature UtilityFunction::infer_tag() const {
  switch (family_) {
    case UtilityFamily::power:
      return params_[0] > 1.0 ? Curvature::strictly_convex
             : params_[0] < 1.0 ? Curvature::strictly_concave
                                : Curvature::none;
    case UtilityFamily::quadratic:
      return params_[1] > 0.0 ? Curvature::strictly_convex
             : params_[1] < 0.0 ? Curvature::strictly_concave
                                : Curvature::none;
    case UtilityFamily::exponential:
      return params_[0] > 0.0 ? Curvature::strictly_concave : Curvature::strictly_convex;
    case UtilityFamily::capped_quadratic:
      return Curvature::strictly_concave;
    default:
      return Curvature::none;
  }
}

void UtilityFunction::audit() const {
  std::vector<double> v(kAuditPoints + 1);
  const double h = range_ / kAuditPoints;
  double scale = 0.0;
  for (std::size_t k = 0; k <= kAuditPoints; ++k) {
    v[k] = (*this)(h * static_cast<double>(k));
    scale = std::max(scale, std::abs(v[k]));
  }
  const double tol = 1e-12 * std::max(scale, 1e-300);
  require(std::abs(v[0]) <= 1e-12, describe() + ": u(0) must be 0");
  for (std::size_t k = 1; k <= kAuditPoints; ++k)
    require(v[k] >= v[k - 1] - tol, describe() + ": utility decreases on the audit grid");
  if (tag_ == Curvature::strictly_convex || tag_ == Curvature::strictly_concave) {
    const double sign = tag_ == Curvature::strictly_convex ? 1.0 : -1.0;
    double largest = 0.0;
    for (std::size_t k = 1; k < kAuditPoints; ++k) {
      double d2 = sign * (v[k + 1] - 2.0 * v[k] + v[k - 1]);
      require(d2 >= -tol, describe() + ": curvature tag " + to_string(tag_) +
                              " contradicted on the audit grid");
      largest = std::max(largest, d2);
    }
    require(largest > tol, describe() + ": curvature tag " + to_string(tag_) +
                               " but the utility is linear on the audit grid");
  } else if (tag_ == Curvature::ratio_increasing) {
    double prev = v[1] / h;
    for (std::size_t k = 2; k <= kAuditPoints; ++k) {
      double r = v[k] / (h * static_cast<double>(k));
      require(r >= prev - 1e-12 * std::abs(prev),
              describe() + ": u(x)/x decreases on the audit grid");
      prev = r;
    }
  }
}

double UtilityFunction::operator()(double x) const {
  if (x < 0.0) {
    if (x < -kDependenceTol) throw DomainError("utility evaluated at negative x = " + fmt_num(x));
    x = 0.0;
  }
  const auto& p = params_;
  switch (family_) {
    case UtilityFamily::power:
      return p[1] * std::pow(x, p[0]);
    case UtilityFamily::quadratic:
      return p[0] * x + p[1] * x * x;
    case UtilityFamily::linear_log:
      return x <= p[1] ? p[0] * x : p[0] * p[1] * (1.0 + std::log(x / p[1]));
    case UtilityFamily::exponential:
      return p[1] * -std::expm1(-p[0] * x) / p[0];
    case UtilityFamily::satiation: {
      const double a = p[0], x0 = p[1], y0 = p[2];
      if (x <= x0) return a * x;
      double z = std::min(x, y0) - x0;
      return a * x0 + a * z - a * z * z / (2.0 * (y0 - x0));
    }
    case UtilityFamily::piecewise_linear:
      return interpolate(knots_, x, true);
    case UtilityFamily::capped_quadratic: {
      const double a = p[0], t = p[1], cap = p[2];
      if (x <= cap) return a * x - t * x * x;
      return a * cap - t * cap * cap + (a - 2.0 * t * cap) * (x - cap);
    }
  }
  return 0.0;
}

double UtilityFunction::derivative(double x, Side side) const {
  if (x < 0.0) throw DomainError("utility derivative at negative x = " + fmt_num(x));
  if (x == 0.0) side = Side::right;
  const auto& p = params_;
  switch (family_) {
    case UtilityFamily::power: {
      if (x == 0.0) {
        if (p[0] < 1.0) return std::numeric_limits<double>::infinity();
        return p[0] == 1.0 ? p[1] : 0.0;
      }
      return p[1] * p[0] * std::pow(x, p[0] - 1.0);
    }
    case UtilityFamily::quadratic:
      return p[0] + 2.0 * p[1] * x;
    case UtilityFamily::linear_log:
      return x <= p[1] ? p[0] : p[0] * p[1] / x;
    case UtilityFamily::exponential:
      return p[1] * std::exp(-p[0] * x);
    case UtilityFamily::satiation: {
      const double a = p[0], x0 = p[1], y0 = p[2];
      if (x < x0 || (x == x0 && side == Side::left)) return a;
      if (x > y0 || (x == y0 && side == Side::right)) return 0.0;
      return a * (1.0 - (x - x0) / (y0 - x0));
    }
    case UtilityFamily::piecewise_linear: {
      std::size_t seg;
      auto it = std::lower_bound(knots_.begin(), knots_.end(), x,
                                 [](const auto& k, double v) { return k.first < v; });
      if (it == knots_.end()) {
        seg = knots_.size() - 2;
      } else if (it->first == x) {
        std::size_t k = static_cast<std::size_t>(it - knots_.begin());
        seg = side == Side::left ? k - 1 : std::min(k, knots_.size() - 2);
      } else {
        seg = static_cast<std::size_t>(it - knots_.begin()) - 1;
      }
      return (knots_[seg + 1].second - knots_[seg].second) /
             (knots_[seg + 1].first - knots_[seg].first);
    }
    case UtilityFamily::capped_quadratic: {
      const double a = p[0], t = p[1], cap = p[2];
      return a - 2.0 * t * std::min(x, cap);
    }
  }
  return 0.0;
}

double UtilityFunction::at_log(double log_x) const {
  if (family_ == UtilityFamily::linear_log && log_x > std::log(params_[1]))
    return params_[0] * params_[1] * (1.0 + log_x - std::log(params_[1]));
  return (*this)(std::exp(std::min(log_x, 700.0)));
}

double UtilityFunction::inverse_derivative(double slope, double cap) const {
  if (cap <= 0.0) return 0.0;
  if (derivative(0.0, Side::right) < slope) return 0.0;
  if (derivative(cap, Side::left) >= slope) return cap;
  const auto& p = params_;
  double y = -1.0;
  switch (family_) {
    case UtilityFamily::power:
      if (p[0] != 1.0) y = std::pow(slope / (p[1] * p[0]), 1.0 / (p[0] - 1.0));
      break;
    case UtilityFamily::quadratic:
      if (p[1] < 0.0) y = (slope - p[0]) / (2.0 * p[1]);
      break;
    case UtilityFamily::exponential:
      if (p[0] > 0.0) y = -std::log(slope / p[1]) / p[0];
      break;
    case UtilityFamily::capped_quadratic:
      y = (p[0] - slope) / (2.0 * p[1]);
      break;
    default:
      break;
  }
  if (y >= 0.0) return std::min(y, cap);
  double lo = 0.0, hi = cap;
  for (int it = 0; it < 200 && hi - lo > 1e-16 * cap; ++it) {
    double mid = 0.5 * (lo + hi);
    if (derivative(mid, Side::left) >= slope)
      lo = mid;
    else
      hi = mid;
  }
  return lo;
}

std::string UtilityFunction::describe() const {
  const auto& p = params_;
  switch (family_) {
    case UtilityFamily::power:
      return "power(alpha=" + fmt_num(p[0]) + ", scale=" + fmt_num(p[1]) + ")";
    case UtilityFamily::quadratic:
      return "quadratic(a=" + fmt_num(p[0]) + ", b=" + fmt_num(p[1]) + ")";
    case UtilityFamily::linear_log:
      return "linear_log(a=" + fmt_num(p[0]) + ", x0=" + fmt_num(p[1]) + ")";
    case UtilityFamily::exponential:
      return "exponential(k=" + fmt_num(p[0]) + ", scale=" + fmt_num(p[1]) + ")";
    case UtilityFamily::satiation:
      return "satiation(a=" + fmt_num(p[0]) + ", x0=" + fmt_num(p[1]) + ", y0=" + fmt_num(p[2]) + ")";
    case UtilityFamily::piecewise_linear:
      return "piecewise_linear(" + std::to_string(knots_.size()) + " knots)";
    case UtilityFamily::capped_quadratic:
      return "capped_quadratic(a=" + fmt_num(p[0]) + ", t=" + fmt_num(p[1]) +
             ", cap=" + fmt_num(p[2]) + ")";
  }
  return "?";
}

bool UtilityFunction::operator==(const UtilityFunction& o) const {
  return family_ == o.family_ && params_ == o.params_ && knots_ == o.knots_;
}

double eval_utility(const UtilityFunction& u, double x) { return u(x); }

// ---------------------------------------------------------------------------

WeightingFunction::WeightingFunction(WeightingFamily family, double gamma,
                                     std::vector<std::pair<double, double>> knots)
    : family_(family), gamma_(gamma), knots_(std::move(knots)) {}

WeightingFunction WeightingFunction::identity() { return {WeightingFamily::identity, 1.0, {}}; }

WeightingFunction WeightingFunction::tk(double gamma) {
  // Below roughly 0.279 the family stops being monotone.
  require(gamma > 0.28 && gamma <= 1.0, "tk weighting needs gamma in (0.28, 1]");
  return {WeightingFamily::tk, gamma, {}};
}

WeightingFunction WeightingFunction::power(double gamma) {
  require(gamma > 0.0, "power weighting needs gamma > 0");
  return {WeightingFamily::power, gamma, {}};
}

WeightingFunction WeightingFunction::piecewise_linear(std::vector<std::pair<double, double>> knots) {
  check_knots(knots, "piecewise-linear weighting");
  require(knots.back().first == 1.0 && knots.back().second == 1.0,
          "piecewise-linear weighting must end at (1, 1)");
  return {WeightingFamily::piecewise_linear, 1.0, std::move(knots)};
}

WeightingFunction WeightingFunction::grid(std::vector<double> values) {
  require(values.size() >= 2, "grid weighting needs at least two values");
  std::vector<std::pair<double, double>> knots(values.size());
  const double last = static_cast<double>(values.size() - 1);
  for (std::size_t k = 0; k < values.size(); ++k)
    knots[k] = {static_cast<double>(k) / last, values[k]};
  knots.back().first = 1.0;
  check_knots(knots, "grid weighting");
  require(values.back() == 1.0, "grid weighting must end at 1");
  return {WeightingFamily::grid, 1.0, std::move(knots)};
}

double WeightingFunction::operator()(double t) const {
  if (t < -kProbTol || t > 1.0 + kProbTol || std::isnan(t))
    throw DomainError("weighting evaluated outside [0, 1] at " + fmt_num(t));
  if (t <= 0.0) return 0.0;
  if (t >= 1.0) return 1.0;
  switch (family_) {
    case WeightingFamily::identity:
      return t;
    case WeightingFamily::tk: {
      const double g = gamma_;
      double a = std::pow(t, g), b = std::pow(1.0 - t, g);
      return a / std::pow(a + b, 1.0 / g);
    }
    case WeightingFamily::power:
      return std::pow(t, gamma_);
    case WeightingFamily::piecewise_linear:
    case WeightingFamily::grid:
      return interpolate(knots_, t, false);
  }
  return t;
}

std::optional<double> WeightingFunction::derivative(double t) const {
  if (!smooth() || t <= 0.0 || t >= 1.0) {
    if (family_ == WeightingFamily::identity) return 1.0;
    return std::nullopt;
  }
  switch (family_) {
    case WeightingFamily::identity:
      return 1.0;
    case WeightingFamily::tk: {
      const double g = gamma_;
      double a = std::pow(t, g), b = std::pow(1.0 - t, g);
      double w = a / std::pow(a + b, 1.0 / g);
      return w * (g / t - (std::pow(t, g - 1.0) - std::pow(1.0 - t, g - 1.0)) / (a + b));
    }
    case WeightingFamily::power:
      return gamma_ * std::pow(t, gamma_ - 1.0);
    default:
      return std::nullopt;
  }
}

bool WeightingFunction::smooth() const {
  return family_ == WeightingFamily::identity || family_ == WeightingFamily::tk ||
         family_ == WeightingFamily::power;
}

std::string WeightingFunction::describe() const {
  switch (family_) {
    case WeightingFamily::identity: return "identity";
    case WeightingFamily::tk: return "tk(gamma=" + fmt_num(gamma_) + ")";
    case WeightingFamily::power: return "power(gamma=" + fmt_num(gamma_) + ")";
    case WeightingFamily::piecewise_linear:
      return "piecewise_linear(" + std::to_string(knots_.size()) + " knots)";
    case WeightingFamily::grid: return "grid(" + std::to_string(knots_.size()) + " values)";
  }
  return "?";
}

bool WeightingFunction::operator==(const WeightingFunction& o) const {
  return family_ == o.family_ && gamma_ == o.gamma_ && knots_ == o.knots_;
}

// ---------------------------------------------------------------------------

namespace {

bool audited_linear(const UtilityFunction& u) {
  const double r = u.audit_range();
  const double s1 = u(r) / r, s2 = u(r / 2) / (r / 2), s3 = u(r / 7) / (r / 7);
  return std::abs(s1 - s2) <= 1e-12 * s1 && std::abs(s1 - s3) <= 1e-12 * s1;
}

}  // namespace

Attitude default_attitude(const UtilityFunction& u, const WeightingFunction& w) {
  if (w.family() != WeightingFamily::identity) return Attitude::mixed;
  switch (u.curvature()) {
    case Curvature::strictly_convex:
    case Curvature::ratio_increasing:
      return Attitude::risk_seeking;
    case Curvature::strictly_concave:
      return Attitude::risk_averse;
    case Curvature::none:
      return audited_linear(u) ? Attitude::neutral : Attitude::mixed;
  }
  return Attitude::mixed;
}

Agent make_agent(UtilityFunction u, WeightingFunction w, std::optional<Attitude> attitude,
                 std::string name) {
  Attitude a = attitude.value_or(default_attitude(u, w));
  if (w.family() == WeightingFamily::identity) {
    const Curvature c = u.curvature();
    bool ok = true;
    switch (a) {
      case Attitude::risk_seeking:
        ok = c == Curvature::strictly_convex || c == Curvature::ratio_increasing;
        break;
      case Attitude::risk_averse:
        ok = c == Curvature::strictly_concave;
        break;
      case Attitude::neutral:
        ok = audited_linear(u);
        break;
      case Attitude::mixed:
        break;
    }
    if (!ok)
      throw ValidationError("agent " + name + ": attitude " + to_string(a) +
                            " is incompatible with " + u.describe() + " tagged " +
                            to_string(c));
  }
  return Agent{std::move(name), std::move(u), std::move(w), a};
}

Agent make_eu_agent(UtilityFunction u, std::string name) {
  return make_agent(std::move(u), WeightingFunction::identity(), std::nullopt, std::move(name));
}

// ---------------------------------------------------------------------------

double choquet(const RandomVariable& y, const WeightingFunction& w) {
  for (double v : y.values())
    if (v < -kDependenceTol) throw DomainError("Choquet integral of a negative variable");
  auto dist = merged_distribution(y);
  // Tail mass P(Y >= v_k). Weighting functions can be infinitely steep at
  // both ends, so small tails are summed from the top and large ones taken
  // as one minus the mass below.
  double tail = 0.0, below = 0.0, total = 0.0;
  std::vector<double> tails(dist.size());
  for (std::size_t k = dist.size(); k-- > 0;) {
    tail += dist[k].second;
    tails[k] = std::min(tail, 1.0);
  }
  for (std::size_t k = 0; k < dist.size() && below < 0.5; ++k) {
    tails[k] = 1.0 - below;
    below += dist[k].second;
  }
  double prev = 0.0;
  for (std::size_t k = 0; k < dist.size(); ++k) {
    double v = std::max(dist[k].first, 0.0);
    total += (v - prev) * w(tails[k]);
    prev = v;
  }
  return total;
}

double expected_utility(const RandomVariable& y, const UtilityFunction& u) {
  double e = 0.0;
  for (std::size_t s = 0; s < y.size(); ++s) e += y.space()->prob(s) * u(y[s]);
  return e;
}

double rdu_utility(const RandomVariable& y, const Agent& agent) {
  return choquet(y.map([&](double v) { return agent.utility(v); }), agent.weighting);
}

double agent_utility(const RandomVariable& y, const Agent& agent) {
  return agent.expected_utility() ? expected_utility(y, agent.utility) : rdu_utility(y, agent);
}

// ---------------------------------------------------------------------------

double Envelope::operator()(double t) const {
  if (t <= beta) return weighting(t);
  if (single_tangent) return std::min(1.0, weighting(beta) + slope * (t - beta));
  auto it = std::upper_bound(hull_t.begin(), hull_t.end(), t);
  if (it == hull_t.end()) return hull_v.back();
  std::size_t k = static_cast<std::size_t>(it - hull_t.begin());
  double t0 = hull_t[k - 1], v0 = hull_v[k - 1];
  if (t0 < beta) {
    t0 = beta;
    v0 = weighting(beta);
  }
  return v0 + (hull_v[k] - v0) * (t - t0) / (hull_t[k] - t0);
}

Envelope concave_envelope(const WeightingFunction& w, std::size_t grid) {
  if (grid < 100) throw ValidationError("envelope grid needs at least 100 intervals");
  const double h = 1.0 / static_cast<double>(grid);
  std::vector<double> t(grid + 1), v(grid + 1);
  for (std::size_t k = 0; k <= grid; ++k) {
    t[k] = k == grid ? 1.0 : h * static_cast<double>(k);
    v[k] = w(t[k]);
  }
  // Upper hull by the monotone chain.
  std::vector<std::size_t> hull;
  for (std::size_t k = 0; k <= grid; ++k) {
    while (hull.size() >= 2) {
      std::size_t a = hull[hull.size() - 2], b = hull.back();
      double cross = (t[b] - t[a]) * (v[k] - v[a]) - (v[b] - v[a]) * (t[k] - t[a]);
      if (cross >= 0.0)
        hull.pop_back();
      else
        break;
    }
    hull.push_back(k);
  }
  Envelope env;
  env.weighting = w;
  for (auto k : hull) {
    env.hull_t.push_back(t[k]);
    env.hull_v.push_back(v[k]);
  }
  // Leading stretch where the hull touches w.
  std::size_t run = 0, seg = 0;
  for (std::size_t k = 0; k <= grid; ++k) {
    while (seg + 1 < hull.size() && hull[seg + 1] < k) ++seg;
    double hv;
    if (seg + 1 >= hull.size() || hull[seg] == k) {
      hv = v[hull[seg]];
    } else {
      std::size_t a = hull[seg], b = hull[seg + 1];
      hv = v[a] + (v[b] - v[a]) * (t[k] - t[a]) / (t[b] - t[a]);
    }
    if (hv - v[k] > 1e-9) break;
    run = k;
  }
  env.beta = t[run];
  std::size_t after = 0;
  for (double ht : env.hull_t)
    if (ht > env.beta) ++after;
  env.single_tangent = after <= 1;
  if (env.beta < 1.0) env.slope = (1.0 - w(env.beta)) / (1.0 - env.beta);

  if (w.smooth() && env.single_tangent && run > 0 && run < grid) {
    auto tangency = [&](double b) { return w(b) + *w.derivative(b) * (1.0 - b) - 1.0; };
    double lo = std::max(h * 0.5, env.beta - 4.0 * h), hi = std::min(1.0 - h, env.beta + 4.0 * h);
    double flo = tangency(lo), fhi = tangency(hi);
    if (flo * fhi < 0.0) {
      for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
        double mid = 0.5 * (lo + hi), fm = tangency(mid);
        if ((fm < 0.0) == (flo < 0.0)) {
          lo = mid;
          flo = fm;
        } else {
          hi = mid;
        }
      }
      env.beta = 0.5 * (lo + hi);
      env.slope = (1.0 - w(env.beta)) / (1.0 - env.beta);
      env.refined = true;
    }
  }
  return env;
}

std::optional<double> check_cavexity(const WeightingFunction& w, std::size_t grid) {
  if (grid < 3) throw ValidationError("cavexity grid too small");
  const double h = 1.0 / static_cast<double>(grid);
  std::vector<double> v(grid + 1);
  for (std::size_t k = 0; k <= grid; ++k) v[k] = w(k == grid ? 1.0 : h * static_cast<double>(k));
  std::optional<double> last_neg, first_pos;
  int changes = 0, prev = 0;
  for (std::size_t k = 1; k < grid; ++k) {
    double d2 = v[k + 1] - 2.0 * v[k] + v[k - 1];
    double tol = 64.0 * std::numeric_limits<double>::epsilon() *
                 (std::abs(v[k + 1]) + 2.0 * std::abs(v[k]) + std::abs(v[k - 1]));
    int sign = d2 > tol ? 1 : d2 < -tol ? -1 : 0;
    if (sign == 0) continue;
    if (prev != 0 && sign != prev) {
      ++changes;
      if (prev > 0) return std::nullopt;  // convex before concave
    }
    if (sign < 0) last_neg = h * static_cast<double>(k);
    if (sign > 0 && !first_pos) first_pos = h * static_cast<double>(k);
    prev = sign;
  }
  if (changes > 1) return std::nullopt;
  if (!last_neg) return first_pos ? 0.0 : 1.0;
  if (!first_pos) return 1.0;
  return 0.5 * (*last_neg + *first_pos);
}

TechConReport check_tech_con(const WeightingFunction& w, const UtilityFunction& u, std::size_t n,
                             const TechConOptions& options) {
  if (n == 0) throw ValidationError("agent count must be positive");
  if (!(options.t_min > 0.0 && options.t_min < 1.0) || options.t_points < 2)
    throw ValidationError("tech condition grid is malformed");
  TechConReport r;
  const double nn = static_cast<double>(n);
  const double lo = std::log(options.t_min);
  for (std::size_t k = 0; k < options.t_points; ++k) {
    double t = k + 1 == options.t_points
                   ? 1.0
                   : std::exp(lo * (1.0 - static_cast<double>(k) / (options.t_points - 1.0)));
    double wt = w(t);
    if (wt <= 0.0) continue;
    r.sup_ratio_estimate = std::max(r.sup_ratio_estimate, w(t / nn) / wt);
  }
  r.w_one_over_n = w(1.0 / nn);
  double log_x = options.log10_x_max * std::log(10.0);
  if (u.family() == UtilityFamily::power) {
    r.utility_ratio_limit_estimate = std::pow(nn, -u.params()[0]);
  } else {
    // Families without a log-space form overflow far out; back off until
    // both values are finite.
    double top = u.at_log(log_x);
    while (!std::isfinite(top) && log_x > 1.0) top = u.at_log(log_x /= 2.0);
    if (!(top > 0.0)) throw DomainError(u.describe() + " vanishes at a positive argument");
    r.utility_ratio_limit_estimate = u.at_log(log_x - std::log(nn)) / top;
  }
  r.satisfied = r.sup_ratio_estimate < 1.0 - 1e-6 && r.w_one_over_n < 1.0 - 1e-9 &&
                r.utility_ratio_limit_estimate >= 1.0 - 1e-3;
  return r;
}

}  // namespace riskshare
