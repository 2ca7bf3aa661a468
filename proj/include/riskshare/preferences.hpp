#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "riskshare/prob_core.hpp"

namespace riskshare {

enum class UtilityFamily {
  power,             // scale * x^alpha
  quadratic,         // a x + b x^2
  linear_log,        // a x up to x0, then a x0 (1 + log(x / x0))
  exponential,       // scale * (1 - exp(-k x)) / k; convex when k < 0
  satiation,         // linear to x0, concave to y0, constant afterwards
  piecewise_linear,  // interpolated knots, last slope continues
  capped_quadratic,  // a x - t x^2 up to cap, then linear with the slope at cap
};

enum class Curvature { strictly_convex, strictly_concave, ratio_increasing, none };
enum class Side { left, right };

std::string to_string(UtilityFamily f);
std::string to_string(Curvature c);

class UtilityFunction {
 public:
  static UtilityFunction power(double alpha, double scale = 1.0);
  static UtilityFunction quadratic(double a, double b, double range = 1.0);
  static UtilityFunction linear_log(double a, double x0);
  static UtilityFunction exponential(double k, double scale = 1.0);
  static UtilityFunction satiation(double a, double x0, double y0);
  static UtilityFunction piecewise_linear(std::vector<std::pair<double, double>> knots);
  static UtilityFunction capped_quadratic(double a, double t, double cap);

  // Replaces the inferred curvature tag and the audit range; re-audits.
  UtilityFunction with_tag(Curvature tag, std::optional<double> range = std::nullopt) const;

  double operator()(double x) const;
  double derivative(double x, Side side = Side::right) const;
  // u(exp(log_x)), exact for arguments beyond double range where the
  // family has a closed form in log x.
  double at_log(double log_x) const;
  // sup { y in [0, cap] : u'(y) >= slope }, for nonincreasing derivatives.
  double inverse_derivative(double slope, double cap) const;

  UtilityFamily family() const { return family_; }
  Curvature curvature() const { return tag_; }
  double audit_range() const { return range_; }
  const std::vector<double>& params() const { return params_; }
  const std::vector<std::pair<double, double>>& knots() const { return knots_; }
  std::string describe() const;

  bool operator==(const UtilityFunction& other) const;

 private:
  UtilityFunction(UtilityFamily family, std::vector<double> params, double range);
  Curvature infer_tag() const;
  void audit() const;

  UtilityFamily family_;
  std::vector<double> params_;
  std::vector<std::pair<double, double>> knots_;
  Curvature tag_ = Curvature::none;
  double range_ = 1.0;
};

enum class WeightingFamily { identity, tk, power, piecewise_linear, grid };

std::string to_string(WeightingFamily f);

class WeightingFunction {
 public:
  static WeightingFunction identity();
  // t^g / (t^g + (1-t)^g)^(1/g)
  static WeightingFunction tk(double gamma);
  static WeightingFunction power(double gamma);
  static WeightingFunction piecewise_linear(std::vector<std::pair<double, double>> knots);
  // Values at k/(K-1), linearly interpolated.
  static WeightingFunction grid(std::vector<double> values);

  double operator()(double t) const;
  // Closed-form derivative for the smooth families.
  std::optional<double> derivative(double t) const;
  bool smooth() const;

  WeightingFamily family() const { return family_; }
  double gamma() const { return gamma_; }
  const std::vector<std::pair<double, double>>& knots() const { return knots_; }
  std::string describe() const;
  bool operator==(const WeightingFunction& other) const;

 private:
  WeightingFunction(WeightingFamily family, double gamma,
                    std::vector<std::pair<double, double>> knots);

  WeightingFamily family_;
  double gamma_ = 1.0;
  std::vector<std::pair<double, double>> knots_;
};

enum class Attitude { risk_seeking, risk_averse, neutral, mixed };

std::string to_string(Attitude a);

struct Agent {
  std::string name;
  UtilityFunction utility;
  WeightingFunction weighting;
  Attitude attitude;

  bool expected_utility() const { return weighting.family() == WeightingFamily::identity; }
  bool operator==(const Agent& other) const {
    return utility == other.utility && weighting == other.weighting && attitude == other.attitude;
  }
};

Attitude default_attitude(const UtilityFunction& u, const WeightingFunction& w);
// Checks that the attitude tag is compatible with the audited curvature.
Agent make_agent(UtilityFunction u, WeightingFunction w, std::optional<Attitude> attitude = {},
                 std::string name = {});
Agent make_eu_agent(UtilityFunction u, std::string name = {});

double eval_utility(const UtilityFunction& u, double x);

// Choquet integral of a nonnegative variable with respect to w o P.
double choquet(const RandomVariable& y, const WeightingFunction& w);
double expected_utility(const RandomVariable& y, const UtilityFunction& u);
double rdu_utility(const RandomVariable& y, const Agent& agent);
// Expected utility for identity weighting, rank-dependent utility otherwise.
double agent_utility(const RandomVariable& y, const Agent& agent);

struct Envelope {
  WeightingFunction weighting = WeightingFunction::identity();
  double beta = 1.0;   // end of the initial stretch where the envelope equals w
  double slope = 1.0;  // slope of the tangent segment after beta
  bool refined = false;
  bool single_tangent = true;  // envelope after beta is one segment to (1, 1)
  std::vector<double> hull_t, hull_v;

  double operator()(double t) const;
};

Envelope concave_envelope(const WeightingFunction& w, std::size_t grid = 10000);

// Inflection point of a concave-then-convex weighting; 1 for concave, 0 for
// convex, nullopt when the curvature changes sign in any other pattern.
std::optional<double> check_cavexity(const WeightingFunction& w, std::size_t grid = 10000);

struct TechConOptions {
  double t_min = 1e-8;
  std::size_t t_points = 4000;
  double log10_x_max = 4000.0;  // utility ratio is read at x = 10^log10_x_max
};

struct TechConReport {
  double sup_ratio_estimate = 0.0;
  double w_one_over_n = 0.0;
  double utility_ratio_limit_estimate = 0.0;
  bool satisfied = false;
};

TechConReport check_tech_con(const WeightingFunction& w, const UtilityFunction& u, std::size_t n,
                             const TechConOptions& options = {});

}  // namespace riskshare
