#include "riskshare/scenario.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <deque>
#include <iterator>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "riskshare/allocation.hpp"
#include "riskshare/equilibrium.hpp"
#include "riskshare/oracle.hpp"
#include "riskshare/rdu_analysis.hpp"

namespace riskshare::cli {
namespace {

using json = nlohmann::json;

// ===========================================================================
// Parsing

struct Collector {
  std::vector<std::string> issues;
  void add(const std::string& path, const std::string& msg) {
    issues.push_back((path.empty() ? std::string("/") : path) + ": " + msg);
  }
};

std::string at(const std::string& path, const std::string& key) { return path + "/" + key; }
std::string at(const std::string& path, std::size_t i) { return path + "/" + std::to_string(i); }

// Numbers may be written as JSON numbers or as "p/q" strings.
std::optional<double> as_number(const json& v) {
  if (v.is_number()) return v.get<double>();
  if (!v.is_string()) return std::nullopt;
  const std::string s = v.get<std::string>();
  try {
    std::size_t used = 0;
    const auto slash = s.find('/');
    if (slash == std::string::npos) {
      double x = std::stod(s, &used);
      if (used != s.size()) return std::nullopt;
      return x;
    }
    const std::string num = s.substr(0, slash), den = s.substr(slash + 1);
    double a = std::stod(num, &used);
    if (used != num.size()) return std::nullopt;
    double b = std::stod(den, &used);
    if (used != den.size() || b == 0.0) return std::nullopt;
    return a / b;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

std::optional<double> number(const json& obj, const std::string& path, const char* key, Collector& c,
                             std::optional<double> fallback = std::nullopt) {
  auto it = obj.find(key);
  if (it == obj.end()) {
    if (!fallback) c.add(at(path, key), "required number is missing");
    return fallback;
  }
  auto v = as_number(*it);
  if (!v || !std::isfinite(*v)) {
    c.add(at(path, key), "expected a finite number");
    return std::nullopt;
  }
  return v;
}

std::optional<std::size_t> count(const json& obj, const std::string& path, const char* key, Collector& c,
                                 std::optional<std::size_t> fallback = std::nullopt) {
  auto it = obj.find(key);
  if (it == obj.end()) {
    if (!fallback) c.add(at(path, key), "required integer is missing");
    return fallback;
  }
  if (!it->is_number_integer() || it->get<long long>() < 1) {
    c.add(at(path, key), "expected a positive integer");
    return std::nullopt;
  }
  return static_cast<std::size_t>(it->get<long long>());
}

std::optional<std::vector<double>> numbers(const json& v, const std::string& path, Collector& c) {
  if (!v.is_array()) {
    c.add(path, "expected an array of numbers");
    return std::nullopt;
  }
  std::vector<double> out;
  bool ok = true;
  for (std::size_t i = 0; i < v.size(); ++i) {
    auto x = as_number(v[i]);
    if (!x || !std::isfinite(*x)) {
      c.add(at(path, i), "expected a finite number");
      ok = false;
    } else {
      out.push_back(*x);
    }
  }
  if (!ok) return std::nullopt;
  return out;
}

std::optional<std::vector<std::pair<double, double>>> knot_list(const json& obj, const std::string& path,
                                                                 Collector& c) {
  auto it = obj.find("knots");
  if (it == obj.end() || !it->is_array()) {
    c.add(at(path, "knots"), "expected an array of [x, y] pairs");
    return std::nullopt;
  }
  std::vector<std::pair<double, double>> out;
  for (std::size_t i = 0; i < it->size(); ++i) {
    auto pair = numbers((*it)[i], at(at(path, "knots"), i), c);
    if (!pair) return std::nullopt;
    if (pair->size() != 2) {
      c.add(at(at(path, "knots"), i), "expected an [x, y] pair");
      return std::nullopt;
    }
    out.emplace_back((*pair)[0], (*pair)[1]);
  }
  return out;
}

std::optional<std::string> text(const json& obj, const std::string& path, const char* key, Collector& c,
                                std::optional<std::string> fallback = std::nullopt) {
  auto it = obj.find(key);
  if (it == obj.end()) {
    if (!fallback) c.add(at(path, key), "required string is missing");
    return fallback;
  }
  if (!it->is_string()) {
    c.add(at(path, key), "expected a string");
    return std::nullopt;
  }
  return it->get<std::string>();
}

std::optional<Curvature> curvature_tag(const std::string& s) {
  if (s == "strictly_convex") return Curvature::strictly_convex;
  if (s == "strictly_concave") return Curvature::strictly_concave;
  if (s == "ratio_increasing") return Curvature::ratio_increasing;
  if (s == "none") return Curvature::none;
  return std::nullopt;
}

std::optional<Attitude> attitude_tag(const std::string& s) {
  if (s == "risk_seeking") return Attitude::risk_seeking;
  if (s == "risk_averse") return Attitude::risk_averse;
  if (s == "neutral") return Attitude::neutral;
  if (s == "mixed") return Attitude::mixed;
  return std::nullopt;
}

std::optional<UtilityFunction> parse_utility(const json& j, const std::string& path, Collector& c) {
  if (!j.is_object()) {
    c.add(path, "expected an object");
    return std::nullopt;
  }
  auto fam = text(j, path, "family", c);
  if (!fam) return std::nullopt;
  const std::size_t before = c.issues.size();
  std::optional<UtilityFunction> u;
  try {
    if (*fam == "power") {
      auto alpha = number(j, path, "alpha", c);
      auto scale = number(j, path, "scale", c, 1.0);
      if (c.issues.size() == before) u = UtilityFunction::power(*alpha, *scale);
    } else if (*fam == "quadratic") {
      auto a = number(j, path, "a", c), b = number(j, path, "b", c);
      auto range = number(j, path, "range", c, 1.0);
      if (c.issues.size() == before) u = UtilityFunction::quadratic(*a, *b, *range);
    } else if (*fam == "linear_log") {
      auto a = number(j, path, "a", c, 1.0), x0 = number(j, path, "x0", c);
      if (c.issues.size() == before) u = UtilityFunction::linear_log(*a, *x0);
    } else if (*fam == "exponential") {
      auto k = number(j, path, "k", c), scale = number(j, path, "scale", c, 1.0);
      if (c.issues.size() == before) u = UtilityFunction::exponential(*k, *scale);
    } else if (*fam == "satiation") {
      auto a = number(j, path, "a", c, 1.0), x0 = number(j, path, "x0", c), y0 = number(j, path, "y0", c);
      if (c.issues.size() == before) u = UtilityFunction::satiation(*a, *x0, *y0);
    } else if (*fam == "piecewise_linear") {
      auto knots = knot_list(j, path, c);
      if (knots) u = UtilityFunction::piecewise_linear(std::move(*knots));
    } else if (*fam == "capped_quadratic") {
      auto a = number(j, path, "a", c), t = number(j, path, "t", c), cap = number(j, path, "cap", c);
      if (c.issues.size() == before) u = UtilityFunction::capped_quadratic(*a, *t, *cap);
    } else {
      c.add(at(path, "family"), "unknown utility family '" + *fam + "'");
      return std::nullopt;
    }
    if (!u) return std::nullopt;
    if (j.contains("curvature")) {
      auto tag_name = text(j, path, "curvature", c);
      if (!tag_name) return std::nullopt;
      auto tag = curvature_tag(*tag_name);
      if (!tag) {
        c.add(at(path, "curvature"), "unknown curvature tag '" + *tag_name + "'");
        return std::nullopt;
      }
      std::optional<double> range;
      if (j.contains("audit_range")) range = number(j, path, "audit_range", c);
      u = u->with_tag(*tag, range);
    }
  } catch (const Error& e) {
    c.add(path, e.what());
    return std::nullopt;
  }
  return u;
}

std::optional<WeightingFunction> parse_weighting(const json& j, const std::string& path, Collector& c) {
  if (!j.is_object()) {
    c.add(path, "expected an object");
    return std::nullopt;
  }
  auto fam = text(j, path, "family", c);
  if (!fam) return std::nullopt;
  try {
    if (*fam == "identity") return WeightingFunction::identity();
    if (*fam == "tk" || *fam == "power") {
      auto g = number(j, path, "gamma", c);
      if (!g) return std::nullopt;
      return *fam == "tk" ? WeightingFunction::tk(*g) : WeightingFunction::power(*g);
    }
    if (*fam == "piecewise_linear") {
      auto knots = knot_list(j, path, c);
      if (!knots) return std::nullopt;
      return WeightingFunction::piecewise_linear(std::move(*knots));
    }
    if (*fam == "grid") {
      auto it = j.find("values");
      if (it == j.end()) {
        c.add(at(path, "values"), "required array is missing");
        return std::nullopt;
      }
      auto v = numbers(*it, at(path, "values"), c);
      if (!v) return std::nullopt;
      return WeightingFunction::grid(std::move(*v));
    }
  } catch (const Error& e) {
    c.add(path, e.what());
    return std::nullopt;
  }
  c.add(at(path, "family"), "unknown weighting family '" + *fam + "'");
  return std::nullopt;
}

struct ParsedSpace {
  SpacePtr space;
  RandomVariable total;
};

std::optional<ParsedSpace> parse_space(const json& j, const std::string& path, Collector& c) {
  if (!j.is_object()) {
    c.add(path, "expected an object");
    return std::nullopt;
  }
  const std::size_t before = c.issues.size();
  std::vector<double> probs, values;
  if (j.contains("generator")) {
    auto gen = text(j, path, "generator", c);
    if (!gen) return std::nullopt;
    if (*gen == "uniform_grid") {
      auto m = count(j, path, "m", c);
      auto lo = number(j, path, "lo", c, 0.0), hi = number(j, path, "hi", c, 1.0);
      if (c.issues.size() != before) return std::nullopt;
      if (!(*hi > *lo)) {
        c.add(at(path, "hi"), "must exceed lo");
        return std::nullopt;
      }
      probs.assign(*m, 1.0 / static_cast<double>(*m));
      for (std::size_t k = 0; k < *m; ++k)
        values.push_back(*lo + (*hi - *lo) * (static_cast<double>(k) + 0.5) / static_cast<double>(*m));
    } else if (*gen == "two_point") {
      auto a = number(j, path, "a", c), b = number(j, path, "b", c), p = number(j, path, "p", c);
      if (c.issues.size() != before) return std::nullopt;
      if (!(*p > 0.0 && *p < 1.0)) {
        c.add(at(path, "p"), "must lie strictly between 0 and 1");
        return std::nullopt;
      }
      probs = {*p, 1.0 - *p};
      values = {*a, *b};
    } else if (*gen == "constant") {
      auto v = number(j, path, "value", c);
      auto atoms = count(j, path, "atoms", c, 1);
      if (c.issues.size() != before) return std::nullopt;
      probs.assign(*atoms, 1.0 / static_cast<double>(*atoms));
      values.assign(*atoms, *v);
    } else if (*gen == "equiprobable") {
      auto it = j.find("values");
      if (it == j.end()) {
        c.add(at(path, "values"), "required array is missing");
        return std::nullopt;
      }
      auto v = numbers(*it, at(path, "values"), c);
      if (!v) return std::nullopt;
      if (v->empty()) {
        c.add(at(path, "values"), "needs at least one atom");
        return std::nullopt;
      }
      values = std::move(*v);
      probs.assign(values.size(), 1.0 / static_cast<double>(values.size()));
    } else {
      c.add(at(path, "generator"), "unknown generator '" + *gen + "'");
      return std::nullopt;
    }
  } else {
    auto pit = j.find("probabilities");
    auto vit = j.find("values");
    if (pit == j.end()) c.add(at(path, "probabilities"), "required array is missing");
    if (vit == j.end()) c.add(at(path, "values"), "required array is missing");
    if (c.issues.size() != before) return std::nullopt;
    auto p = numbers(*pit, at(path, "probabilities"), c);
    auto v = numbers(*vit, at(path, "values"), c);
    if (!p || !v) return std::nullopt;
    if (p->empty()) {
      c.add(at(path, "probabilities"), "needs at least one atom");
      return std::nullopt;
    }
    if (p->size() != v->size()) {
      c.add(at(path, "values"), "has " + std::to_string(v->size()) + " entries but there are " +
                                    std::to_string(p->size()) + " atoms");
      return std::nullopt;
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < p->size(); ++i) {
      if ((*p)[i] < 0.0) c.add(at(at(path, "probabilities"), i), "probability is negative");
      sum += (*p)[i];
    }
    if (std::abs(sum - 1.0) > kProbTol) {
      std::ostringstream msg;
      msg.precision(17);
      msg << "probabilities sum to " << sum << ", expected 1";
      c.add(at(path, "probabilities"), msg.str());
    }
    if (c.issues.size() != before) return std::nullopt;
    probs = std::move(*p);
    values = std::move(*v);
  }
  try {
    SpacePtr space = FiniteProbSpace::create(std::move(probs));
    RandomVariable total(space, std::move(values));
    return ParsedSpace{space, std::move(total)};
  } catch (const Error& e) {
    c.add(path, e.what());
    return std::nullopt;
  }
}

const std::set<std::string> kTopLevelKeys = {"schema", "name",       "description", "task", "seed",
                                             "space",  "agents",     "endowments",  "params"};
const std::set<std::string> kTasks = {"improve", "pareto", "upf", "equilibrium", "rdu", "reproduce"};

void parse_agents(const json& doc, Scenario& sc, Collector& c) {
  auto it = doc.find("agents");
  if (it == doc.end() || !it->is_array() || it->empty()) {
    c.add("/agents", "expected a non-empty array");
    return;
  }
  for (std::size_t e = 0; e < it->size(); ++e) {
    const json& spec = (*it)[e];
    const std::string path = at("/agents", e);
    if (!spec.is_object()) {
      c.add(path, "expected an object");
      continue;
    }
    const std::size_t before = c.issues.size();
    auto copies = count(spec, path, "count", c, 1);
    auto name = text(spec, path, "name", c, std::string());
    auto group = text(spec, path, "group", c, std::string());
    std::optional<UtilityFunction> u;
    if (!spec.contains("utility"))
      c.add(at(path, "utility"), "required object is missing");
    else
      u = parse_utility(spec["utility"], at(path, "utility"), c);
    std::optional<WeightingFunction> w = WeightingFunction::identity();
    if (spec.contains("weighting")) w = parse_weighting(spec["weighting"], at(path, "weighting"), c);
    std::optional<Attitude> attitude;
    if (spec.contains("attitude")) {
      auto tag = text(spec, path, "attitude", c);
      if (tag) {
        attitude = attitude_tag(*tag);
        if (!attitude) c.add(at(path, "attitude"), "unknown attitude '" + *tag + "'");
      }
    }
    if (c.issues.size() != before || !u || !w) continue;
    for (std::size_t k = 0; k < *copies; ++k) {
      std::string label = name->empty() ? "agent_" + std::to_string(sc.agents.size() + 1)
                          : *copies > 1 ? *name + "_" + std::to_string(k + 1)
                                        : *name;
      try {
        sc.agents.push_back(make_agent(*u, *w, attitude, label));
        sc.groups.push_back(*group);
      } catch (const Error& err) {
        c.add(path, err.what());
        break;
      }
    }
  }
}

void parse_endowments(const json& doc, Scenario& sc, Collector& c) {
  const std::size_t n = sc.agents.size();
  const RandomVariable& x = sc.total;
  json spec = doc.contains("endowments") ? doc["endowments"] : json("equal");
  std::string mode;
  if (spec.is_string()) {
    mode = spec.get<std::string>();
  } else if (spec.is_object()) {
    auto m = text(spec, "/endowments", "mode", c);
    if (!m) return;
    mode = *m;
  } else {
    c.add("/endowments", "expected \"equal\" or an object with a mode");
    return;
  }
  std::vector<std::vector<double>> comps;
  if (mode == "equal") {
    comps.assign(n, x.scaled(1.0 / static_cast<double>(n)).values());
  } else if (mode == "proportional") {
    if (!spec.is_object() || !spec.contains("theta")) {
      c.add("/endowments/theta", "required array is missing");
      return;
    }
    auto theta = numbers(spec["theta"], "/endowments/theta", c);
    if (!theta) return;
    if (theta->size() != n) {
      c.add("/endowments/theta", "has " + std::to_string(theta->size()) + " entries but there are " +
                                     std::to_string(n) + " agents");
      return;
    }
    double sum = 0.0;
    bool ok = true;
    for (std::size_t i = 0; i < n; ++i) {
      if ((*theta)[i] < 0.0) {
        c.add(at("/endowments/theta", i), "share is negative");
        ok = false;
      }
      sum += (*theta)[i];
    }
    if (std::abs(sum - 1.0) > kProbTol) {
      std::ostringstream msg;
      msg.precision(17);
      msg << "shares sum to " << sum << ", expected 1";
      c.add("/endowments/theta", msg.str());
      ok = false;
    }
    if (!ok) return;
    for (double t : *theta) comps.push_back(x.scaled(t).values());
  } else if (mode == "explicit") {
    if (!spec.is_object() || !spec.contains("values") || !spec["values"].is_array()) {
      c.add("/endowments/values", "expected one array of atom values per agent");
      return;
    }
    const json& rows = spec["values"];
    if (rows.size() != n) {
      c.add("/endowments/values", "has " + std::to_string(rows.size()) + " rows but there are " +
                                      std::to_string(n) + " agents");
      return;
    }
    for (std::size_t i = 0; i < n; ++i) {
      auto row = numbers(rows[i], at("/endowments/values", i), c);
      if (!row) return;
      if (row->size() != x.size()) {
        c.add(at("/endowments/values", i), "needs one value per atom");
        return;
      }
      comps.push_back(std::move(*row));
    }
  } else {
    c.add("/endowments/mode", "unknown endowment mode '" + mode + "'");
    return;
  }
  try {
    sc.endowments.emplace(x, std::move(comps));
  } catch (const Error& e) {
    c.add("/endowments", e.what());
  }
}

void parse_lambda(Scenario& sc, Collector& c) {
  if (!sc.params.contains("lambda")) return;
  const json& j = sc.params["lambda"];
  const std::size_t n = sc.agents.size();
  std::vector<double> lambda(n, 0.0);
  if (j.is_object()) {
    for (std::size_t i = 0; i < n; ++i) {
      auto it = j.find(sc.groups[i]);
      if (it == j.end()) {
        c.add("/params/lambda", "no weight for group '" + sc.groups[i] + "' of agent " + sc.agents[i].name);
        return;
      }
      auto v = as_number(*it);
      if (!v) {
        c.add(at("/params/lambda", sc.groups[i]), "expected a number");
        return;
      }
      lambda[i] = *v;
    }
  } else {
    auto v = numbers(j, "/params/lambda", c);
    if (!v) return;
    if (v->size() != n) {
      c.add("/params/lambda", "has " + std::to_string(v->size()) + " entries but there are " +
                                  std::to_string(n) + " agents");
      return;
    }
    lambda = std::move(*v);
  }
  double sum = 0.0;
  for (double l : lambda) {
    if (l < 0.0) {
      c.add("/params/lambda", "weights must be nonnegative");
      return;
    }
    sum += l;
  }
  if (!(sum > 0.0)) {
    c.add("/params/lambda", "at least one weight must be positive");
    return;
  }
  sc.lambda = std::move(lambda);
}

std::pair<std::size_t, std::size_t> line_and_column(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

// ===========================================================================
// Reports

json num(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

json num_array(const std::vector<double>& v) {
  json out = json::array();
  for (double x : v) out.push_back(num(x));
  return out;
}

struct Run {
  const Scenario& sc;
  const RunOptions& opt;
  ReportDocument doc;
  std::deque<Table> tables;  // references stay valid while more tables are added

  Table& table(const std::string& name, std::vector<std::string> columns) {
    tables.push_back(Table{name, std::move(columns), {}});
    return tables.back();
  }
  void warn(const std::string& w) { doc.warnings.push_back(w); }
  void invalid() {
    if (doc.status == "ok") doc.status = "invalid_certificate";
  }

  const EndowmentVector& endowments() const {
    if (!sc.endowments) throw ValidationError("/endowments: this task needs endowments");
    return *sc.endowments;
  }
  const std::vector<double>& lambda() const {
    if (!sc.lambda) throw ValidationError("/params/lambda: this task needs agent weights");
    return *sc.lambda;
  }

  const json* param(const char* key) const {
    auto it = sc.params.find(key);
    return it == sc.params.end() ? nullptr : &*it;
  }
  double param_number(const char* key, std::optional<double> fallback = std::nullopt) const {
    const json* p = param(key);
    if (!p) {
      if (fallback) return *fallback;
      throw ValidationError(std::string("/params/") + key + ": required number is missing");
    }
    auto v = as_number(*p);
    if (!v) throw ValidationError(std::string("/params/") + key + ": expected a number");
    return *v;
  }
  std::size_t param_count(const char* key, std::size_t fallback) const {
    const json* p = param(key);
    if (!p) return fallback;
    if (!p->is_number_integer() || p->get<long long>() < 1)
      throw ValidationError(std::string("/params/") + key + ": expected a positive integer");
    return static_cast<std::size_t>(p->get<long long>());
  }
  std::string param_string(const char* key, std::optional<std::string> fallback = std::nullopt) const {
    const json* p = param(key);
    if (!p) {
      if (fallback) return *fallback;
      throw ValidationError(std::string("/params/") + key + ": required string is missing");
    }
    if (!p->is_string()) throw ValidationError(std::string("/params/") + key + ": expected a string");
    return p->get<std::string>();
  }
  bool param_bool(const char* key, bool fallback) const {
    const json* p = param(key);
    if (!p) return fallback;
    if (!p->is_boolean()) throw ValidationError(std::string("/params/") + key + ": expected true or false");
    return p->get<bool>();
  }

  // params.allocation (one row per agent) or the endowments.
  Allocation allocation_param() const {
    const json* p = param("allocation");
    if (!p) return endowments();
    Collector c;
    if (!p->is_array() || p->size() != sc.agents.size())
      throw ValidationError("/params/allocation: expected one array of atom values per agent");
    std::vector<std::vector<double>> comps;
    for (std::size_t i = 0; i < p->size(); ++i) {
      auto row = numbers((*p)[i], at("/params/allocation", i), c);
      if (row) comps.push_back(std::move(*row));
    }
    if (!c.issues.empty()) throw ValidationError(c.issues);
    try {
      return Allocation(sc.total, std::move(comps));
    } catch (const Error& e) {
      throw ValidationError(std::string("/params/allocation: ") + e.what());
    }
  }

  std::pair<std::vector<std::size_t>, std::vector<std::size_t>> attitude_groups() const {
    std::vector<std::size_t> seeking, averse;
    for (std::size_t i = 0; i < sc.agents.size(); ++i) {
      if (sc.agents[i].attitude == Attitude::risk_seeking)
        seeking.push_back(i);
      else if (sc.agents[i].attitude == Attitude::risk_averse || sc.agents[i].attitude == Attitude::neutral)
        averse.push_back(i);
      else
        throw ValidationError("/agents: agent " + sc.agents[i].name + " has no single risk attitude");
    }
    return {seeking, averse};
  }

  void add_certificate(const EquilibriumCertificate& cert, const std::string& label, bool counts = true) {
    json agents = json::array();
    Table& t = table(label.empty() ? "certificate" : "certificate_" + label,
                     {"agent", "budget_residual", "achieved", "best_deviation", "gap", "method"});
    for (std::size_t i = 0; i < cert.agents.size(); ++i) {
      const AgentCheck& a = cert.agents[i];
      const std::string name = i < sc.agents.size() ? sc.agents[i].name : std::to_string(i + 1);
      t.rows.push_back({name, num(a.budget_residual), num(a.achieved), num(a.best_deviation), num(a.gap),
                        to_string(a.method)});
      agents.push_back({{"agent", name},
                        {"budget_residual", num(a.budget_residual)},
                        {"achieved", num(a.achieved)},
                        {"best_deviation", num(a.best_deviation)},
                        {"gap", num(a.gap)},
                        {"method", to_string(a.method)}});
    }
    doc.certificates.push_back({{"label", label},
                                {"method", cert.method},
                                {"valid", cert.valid},
                                {"exact", cert.exact()},
                                {"clearance_residual", num(cert.clearance_residual)},
                                {"notes", cert.notes},
                                {"agents", agents}});
    if (!cert.exact())
      warn("certificate " + (label.empty() ? cert.method : label) +
           ": some agents were checked by heuristic search, so validity is not proven");
    if (counts && !cert.valid) invalid();
  }

  void allocation_table(const std::string& name, const Allocation& alloc, const PriceMeasure* price) {
    std::vector<std::string> cols = {"atom", "probability", "total"};
    if (price) cols.push_back("density");
    for (std::size_t i = 0; i < alloc.agents(); ++i) cols.push_back("x_" + std::to_string(i + 1));
    Table& t = table(name, cols);
    const auto& probs = alloc.space()->probabilities();
    for (std::size_t s = 0; s < probs.size(); ++s) {
      std::vector<json> row = {s, num(probs[s]), num(alloc.total()[s])};
      if (price) row.push_back(num((*price)[s]));
      for (std::size_t i = 0; i < alloc.agents(); ++i) row.push_back(num(alloc.values(i)[s]));
      t.rows.push_back(std::move(row));
    }
  }

  void equilibrium_result(const EquilibriumResult& r, const std::string& label) {
    allocation_table("allocation", r.allocation, &r.price);
    Table& t = table("agents", {"agent", "share", "utility"});
    for (std::size_t i = 0; i < r.utilities.size(); ++i)
      t.rows.push_back({sc.agents[i].name, num(r.shares.at(i)), num(r.utilities[i])});
    for (const auto& note : r.notes) warn(note);
    add_certificate(r.certificate, label);
    if (opt.oracle) oracle_certificate(r);
  }

  // Cross-check vertex-exact agents against the independent vertex oracle.
  void oracle_certificate(const EquilibriumResult& r) {
    Table& t = table("oracle_certificate", {"agent", "engine_best", "oracle_best", "agrees"});
    for (std::size_t i = 0; i < r.certificate.agents.size(); ++i) {
      const AgentCheck& a = r.certificate.agents[i];
      if (a.method != VerificationMethod::exact_vertex) continue;
      if (r.allocation.space()->size() > 18) {
        warn("vertex oracle skipped for " + sc.agents[i].name + ": too many atoms");
        continue;
      }
      const double budget = expectation(r.endowments.component(i), r.price);
      auto o = oracle::vertex_individual_opt(sc.agents[i], r.allocation.total(), r.price.density(), budget);
      const bool agrees = std::abs(o.best_value - a.best_deviation) <= kDeviationTol * std::max(1.0, std::abs(o.best_value));
      t.rows.push_back({sc.agents[i].name, num(a.best_deviation), num(o.best_value), agrees});
      if (!agrees) {
        warn("vertex oracle disagrees with the certificate for " + sc.agents[i].name);
        invalid();
      }
    }
  }
};

// ---------------------------------------------------------------------------
// improve

void run_improve(Run& run) {
  const Allocation base = run.allocation_param();
  const std::string shift = run.param_string("shift", "automatic");
  ShiftDirection dir;
  if (shift == "automatic")
    dir = ShiftDirection::automatic;
  else if (shift == "lower")
    dir = ShiftDirection::lower;
  else if (shift == "upper")
    dir = ShiftDirection::upper;
  else
    throw ValidationError("/params/shift: expected automatic, lower or upper");
  ImprovementResult r = shifted_improve(base, dir);
  const auto& agents = run.sc.agents;
  const bool plain = std::all_of(r.shifts.begin(), r.shifts.end(), [](double s) { return s == 0.0; });

  std::vector<std::string> cols = {"atom", "parent_atom", "probability", "total", "owner"};
  for (std::size_t i = 0; i < base.agents(); ++i) cols.push_back("y_" + std::to_string(i + 1));
  Table& atoms = run.table("extended_atoms", cols);
  const auto& space = *r.extension.space;
  const auto ancestors = space.ancestor_map(*base.space());
  for (std::size_t s = 0; s < space.size(); ++s) {
    std::vector<json> row = {s, ancestors[s], num(space.prob(s)), num(r.allocation.total()[s]),
                             agents[r.extension.partition.owner[s]].name};
    for (std::size_t i = 0; i < base.agents(); ++i) row.push_back(num(r.allocation.values(i)[s]));
    atoms.rows.push_back(std::move(row));
  }

  Table& t = run.table(plain ? "jackpot" : "counter_monotonic",
                       {"agent", "win_probability", "shift", "mean_before", "mean_after", "utility_before",
                        "utility_after", "convex_order", "strict"});
  bool order_ok = true;
  for (std::size_t i = 0; i < base.agents(); ++i) {
    RandomVariable before = base.component(i), after = r.allocation.component(i);
    OrderVerdict ov = convex_order_leq(before, after);
    order_ok = order_ok && ov.holds;
    t.rows.push_back({agents[i].name, num(r.extension.partition.probability_of(i)), num(r.shifts.at(i)),
                      num(expectation(before)), num(expectation(after)), num(agent_utility(before, agents[i])),
                      num(agent_utility(after, agents[i])), ov.holds, ov.strict});
  }
  run.doc.values["form"] = r.form == ShiftForm::lower ? "lower" : "upper";
  run.doc.values["jackpot"] = check_dependence(r.allocation, DependenceMode::jackpot).holds;
  run.doc.values["counter_monotonic"] = check_dependence(r.allocation, DependenceMode::counter_monotonic).holds;
  run.doc.values["convex_order_all"] = order_ok;
  run.doc.values["extended_atoms"] = space.size();
}

// ---------------------------------------------------------------------------
// pareto

void run_pareto(Run& run) {
  const Allocation alloc = run.allocation_param();
  ParetoVerdict v = pareto_check_rs(alloc, run.sc.agents);
  run.doc.values["jackpot"] = v.jackpot;
  run.doc.values["pareto_optimal"] = v.pareto_optimal;
  run.doc.values["lambda"] = num_array(v.lambda);
  run.doc.values["cycle"] = v.cycle;
  if (v.jackpot_violation) {
    const auto& w = *v.jackpot_violation;
    run.doc.values["jackpot_violation"] = {{"agent_i", w.agent_i}, {"agent_j", w.agent_j}, {"atom", w.atom_s}};
  }
  Table& t = run.table("agents", {"agent", "utility", "lambda"});
  for (std::size_t i = 0; i < alloc.agents(); ++i)
    t.rows.push_back({run.sc.agents[i].name, num(agent_utility(alloc.component(i), run.sc.agents[i])),
                      i < v.lambda.size() ? num(v.lambda[i]) : json(nullptr)});
  if (run.opt.oracle) {
    auto probe = oracle::brute_force_pareto_probe(alloc.components(), alloc.total(), run.sc.agents,
                                                  run.param_count("oracle_grid", 6),
                                                  run.param_count("oracle_samples", 2000), run.doc.seed,
                                                  run.param_count("oracle_split", 2));
    run.warn("oracle probe is a sampled search; finding no dominator does not prove optimality");
    Table& o = run.table("oracle_probe", {"agent", "base_utility", "dominator_utility"});
    for (std::size_t i = 0; i < probe.base_utilities.size(); ++i)
      o.rows.push_back({run.sc.agents[i].name, num(probe.base_utilities[i]),
                        probe.dominator_found ? num(probe.dominator_utilities.at(i)) : json(nullptr)});
    run.doc.values["oracle_dominator_found"] = probe.dominator_found;
    run.doc.values["oracle_evaluated"] = probe.evaluated;
    if (probe.dominator_found && v.pareto_optimal) {
      run.warn("oracle found a Pareto improvement over an allocation the engine certified as optimal");
      run.invalid();
    }
  }
}

// ---------------------------------------------------------------------------
// upf

MixedOptions mixed_options(const Run& run) {
  MixedOptions m;
  m.outer_grid = run.param_count("outer_grid", m.outer_grid);
  m.refine_iters = static_cast<int>(run.param_count("refine_iters", static_cast<std::size_t>(m.refine_iters)));
  return m;
}

bool mixed_attitudes(const std::vector<Agent>& agents) {
  bool seek = false, averse = false;
  for (const auto& a : agents) (a.attitude == Attitude::risk_seeking ? seek : averse) = true;
  return seek && averse;
}

void run_upf(Run& run) {
  const auto& agents = run.sc.agents;
  const std::size_t n = agents.size();
  std::vector<std::vector<double>> grid;
  if (const json* p = run.param("lambdas")) {
    if (!p->is_array()) throw ValidationError("/params/lambdas: expected an array of weight vectors");
    Collector c;
    for (std::size_t k = 0; k < p->size(); ++k) {
      auto v = numbers((*p)[k], at("/params/lambdas", k), c);
      if (v && v->size() != n) c.add(at("/params/lambdas", k), "needs one weight per agent");
      if (v) grid.push_back(std::move(*v));
    }
    if (!c.issues.empty()) throw ValidationError(c.issues);
  } else if (run.sc.lambda && !run.param("steps")) {
    grid.push_back(*run.sc.lambda);
  } else {
    grid = simplex_grid(n, run.param_count("steps", 20));
  }
  const MixedOptions mo = mixed_options(run);
  if (mixed_attitudes(agents))
    run.warn("mixed-attitude optima come from a grid search with local refinement; they are not certified");
  auto trace = upf_trace(agents, run.sc.total, grid, mo);

  auto emit = [&](const std::string& name, const std::vector<UpfPoint>& pts) {
    std::vector<std::string> cols;
    for (std::size_t i = 0; i < n; ++i) cols.push_back("utility_" + std::to_string(i + 1));
    Table& t = run.table(name, cols);
    std::vector<std::string> lcols = {"point"};
    for (std::size_t i = 0; i < n; ++i) lcols.push_back("lambda_" + std::to_string(i + 1));
    lcols.push_back("weighted_value");
    Table& l = run.table(name + "_lambda", lcols);
    for (std::size_t k = 0; k < pts.size(); ++k) {
      std::vector<json> row;
      for (double u : pts[k].utilities) row.push_back(num(u));
      t.rows.push_back(std::move(row));
      std::vector<json> lrow = {k};
      for (double x : pts[k].lambda) lrow.push_back(num(x));
      lrow.push_back(num(pts[k].weighted_value));
      l.rows.push_back(std::move(lrow));
    }
  };
  emit("upf", trace);
  run.doc.values["points"] = trace.size();

  if (run.param_bool("individually_rational", false)) {
    const auto& e = run.endowments();
    std::vector<double> reservation;
    for (std::size_t i = 0; i < n; ++i) reservation.push_back(agent_utility(e.component(i), agents[i]));
    auto ir = individually_rational(trace, reservation);
    emit("upf_ir", ir);
    run.doc.values["individually_rational_points"] = ir.size();
  }

  if (run.opt.oracle) {
    const std::size_t per_atom = run.param_count("oracle_grid", 51);
    Table& t = run.table("oracle", {"point", "engine_value", "oracle_value", "resolution", "combinations", "pass"});
    for (std::size_t k = 0; k < trace.size(); ++k) {
      try {
        auto o = oracle::brute_force_weighted_max(trace[k].lambda, agents, run.sc.total, per_atom,
                                                  trace[k].weighted_value);
        const bool pass = trace[k].weighted_value >= o.best_value - o.resolution - 1e-9;
        t.rows.push_back({k, num(trace[k].weighted_value), num(o.best_value), num(o.resolution),
                          o.combinations, pass});
        if (!pass) {
          run.warn("engine value at point " + std::to_string(k) + " falls below the brute-force oracle");
          run.invalid();
        }
      } catch (const BudgetExceeded& e) {
        run.warn(std::string("oracle skipped: ") + e.what());
        break;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// equilibrium

struct Epsilon {
  std::string label;
  double value;
};

std::vector<Epsilon> epsilon_list(const Run& run) {
  std::vector<Epsilon> out;
  const json* p = run.param("epsilons");
  if (!p) return out;
  if (!p->is_array()) throw ValidationError("/params/epsilons: expected an array");
  for (std::size_t k = 0; k < p->size(); ++k) {
    const json& e = (*p)[k];
    const std::string path = at("/params/epsilons", k);
    if (e.is_object()) {
      auto v = e.contains("value") ? as_number(e["value"]) : std::nullopt;
      if (!v) throw ValidationError(path + "/value: expected a number");
      out.push_back({e.value("label", e["value"].dump()), *v});
    } else {
      auto v = as_number(e);
      if (!v) throw ValidationError(path + ": expected a number");
      out.push_back({e.is_string() ? e.get<std::string>() : e.dump(), *v});
    }
  }
  return out;
}

struct TwoPointSetup {
  double a, b, p;
  std::vector<Agent> seeking, averse;
};

TwoPointSetup two_point_setup(const Run& run) {
  const RandomVariable& x = run.sc.total;
  if (x.size() != 2 || !(x[0] < x[1]))
    throw ValidationError("/space: this method needs a two-point aggregate risk with a < b");
  auto [s, t] = run.attitude_groups();
  TwoPointSetup out{x[0], x[1], x.space()->prob(0), {}, {}};
  for (auto i : s) out.seeking.push_back(run.sc.agents[i]);
  for (auto i : t) out.averse.push_back(run.sc.agents[i]);
  return out;
}

void run_equilibrium(Run& run) {
  const auto& agents = run.sc.agents;
  const std::string method = run.param_string("method", "homogeneous");
  run.doc.values["method"] = method;
  if (method == "homogeneous") {
    run.equilibrium_result(homogeneous_equilibrium(agents, run.endowments()), "");
  } else if (method == "two_agent") {
    run.equilibrium_result(two_agent_equilibrium(agents, run.endowments()), "");
  } else if (method == "fixed_point") {
    FixedPointOptions fo;
    fo.max_iters = run.param_count("max_iters", fo.max_iters);
    fo.tol = run.param_number("tol", fo.tol);
    fo.damping = run.param_number("damping", fo.damping);
    fo.restarts = run.param_count("restarts", fo.restarts);
    fo.seed = run.doc.seed;
    FixedPointResult r = fixed_point_search(agents, run.endowments(), fo);
    run.doc.values["lambda"] = num_array(r.lambda);
    run.doc.values["residual"] = num(r.residual);
    run.doc.values["iterations"] = r.iterations;
    run.doc.values["certified"] = r.certified;
    for (const auto& note : r.notes) run.warn(note);
    if (r.equilibrium) {
      run.equilibrium_result(*r.equilibrium, "");
    } else {
      run.warn("fixed-point search did not produce an equilibrium candidate");
      run.invalid();
    }
  } else if (method == "two_point_mixed") {
    TwoPointSetup tp = two_point_setup(run);
    TwoPointAnalysis a = two_point_mixed_equilibrium(tp.a, tp.b, tp.p, tp.seeking, tp.averse);
    run.doc.values["exists"] = a.exists;
    run.doc.values["price_ratio_lower"] = num(a.lower);
    run.doc.values["price_ratio_upper"] = num(a.upper);
    run.doc.values["averse_shares"] = num_array(a.averse_shares);
    run.doc.values["necessary_lhs"] = num(a.necessary_lhs);
    run.doc.values["necessary_holds"] = a.necessary_holds;
    auto eps = epsilon_list(run);
    if (!eps.empty() && a.exists) {
      Table& t = run.table("price_checks", {"epsilon", "value", "price_ratio", "valid", "exact"});
      for (const auto& e : eps) {
        auto inst = build_two_point_instance(tp.a, tp.b, tp.p, tp.seeking, tp.averse, 1.0 - e.value, 1.0 + e.value);
        auto cert = verify_equilibrium(inst.allocation, inst.price, inst.allocation, inst.agents, "two_point_mixed");
        t.rows.push_back({e.label, num(e.value), num((1.0 - e.value) / (1.0 + e.value)), cert.valid, cert.exact()});
        // Scanning prices: a rejected price is an answer, not a failed certificate.
        run.add_certificate(cert, "epsilon_" + e.label, false);
      }
    }
  } else if (method == "rdu_constant") {
    auto r = rdu_constant_equilibrium(agents, run.endowments(), run.param_count("envelope_grid", 10000));
    run.doc.values["refused"] = r.refused;
    run.doc.values["beta_w"] = num(r.beta_w);
    if (r.refused) {
      run.doc.values["diagnostic"] = r.diagnostic;
      run.warn(r.diagnostic);
      run.doc.status = "refused";
    } else if (r.equilibrium) {
      run.equilibrium_result(*r.equilibrium, "");
    }
  } else if (method == "verify") {
    const Allocation alloc = run.allocation_param();
    const json* d = run.param("density");
    if (!d) throw ValidationError("/params/density: required array is missing");
    Collector c;
    auto density = numbers(*d, "/params/density", c);
    if (!density) throw ValidationError(c.issues);
    std::optional<PriceMeasure> price;
    try {
      price.emplace(alloc.space(), std::move(*density));
    } catch (const Error& e) {
      throw ValidationError(std::string("/params/density: ") + e.what());
    }
    auto cert = verify_equilibrium(alloc, *price, run.endowments(), agents, "verify");
    run.allocation_table("allocation", alloc, &*price);
    run.add_certificate(cert, "");
  } else {
    throw ValidationError("/params/method: unknown equilibrium method '" + method + "'");
  }
}

// ---------------------------------------------------------------------------
// rdu

double linear_threshold(const Run& run, const UtilityFunction& u) {
  if (run.param("x0")) return run.param_number("x0");
  if (u.family() == UtilityFamily::linear_log || u.family() == UtilityFamily::satiation) return u.params().at(1);
  throw ValidationError("/params/x0: required for this utility family");
}

RduScenario rdu_scenario(const Run& run, const RandomVariable& total) {
  const auto& agents = run.sc.agents;
  for (const auto& a : agents)
    if (!(a == agents.front())) throw ValidationError("/agents: this task needs identical agents");
  return make_rdu_scenario(agents.size(), agents.front(), total, linear_threshold(run, agents.front().utility),
                           run.param_count("envelope_grid", 10000));
}

std::vector<std::string> string_list(const Run& run, const char* key, std::vector<std::string> fallback) {
  const json* p = run.param(key);
  if (!p) return fallback;
  if (!p->is_array()) throw ValidationError(std::string("/params/") + key + ": expected an array of strings");
  std::vector<std::string> out;
  for (const auto& e : *p) {
    if (!e.is_string()) throw ValidationError(std::string("/params/") + key + ": expected an array of strings");
    out.push_back(e.get<std::string>());
  }
  return out;
}

void run_rdu(Run& run) {
  RduScenario sc = rdu_scenario(run, run.sc.total);
  for (const auto& w : sc.audit.warnings) run.warn(w);
  std::vector<std::string> ops = {"envelope", "cavexity", "tech_con", "dominance"};
  if (run.sc.total.max() <= sc.x0) ops.push_back("sum_optimal");
  ops = string_list(run, "operations", ops);
  auto& v = run.doc.values;
  for (const auto& op : ops) {
    if (op == "envelope") {
      v["beta_w"] = num(sc.envelope.beta);
      v["envelope_slope"] = num(sc.envelope.slope);
      v["envelope_refined"] = sc.envelope.refined;
      v["envelope_single_tangent"] = sc.envelope.single_tangent;
      Table& t = run.table("envelope", {"t", "w", "envelope"});
      for (int k = 0; k <= 100; ++k) {
        const double p = k / 100.0;
        t.rows.push_back({num(p), num(sc.agent.weighting(p)), num(sc.envelope(p))});
      }
    } else if (op == "cavexity") {
      auto inflection = check_cavexity(sc.agent.weighting, run.param_count("envelope_grid", 10000));
      v["inflection"] = inflection ? num(*inflection) : json(nullptr);
    } else if (op == "tech_con") {
      auto r = check_tech_con(sc.agent.weighting, sc.agent.utility, sc.n);
      v["tech_sup_ratio"] = num(r.sup_ratio_estimate);
      v["tech_w_one_over_n"] = num(r.w_one_over_n);
      v["tech_utility_ratio_limit"] = num(r.utility_ratio_limit_estimate);
      v["tech_satisfied"] = r.satisfied;
      run.warn("technical condition is estimated on a finite grid of probabilities");
    } else if (op == "dominance") {
      auto r = jackpot_vs_proportional(sc);
      v["dominance"] = to_string(r.verdict);
      v["dominance_margin"] = num(r.margin);
      v["jackpot_utility"] = num(r.jackpot_utility);
      v["proportional_utility"] = num(r.proportional_utility);
    } else if (op == "sum_optimal") {
      const double value = rdu_sum_optimal_value(sc);
      v["sum_optimal_value"] = num(value);
      if (run.opt.oracle) {
        Extension ext = extend_with_independent_categorical(
            sc.total.space(), std::vector<double>(sc.n, 1.0 / static_cast<double>(sc.n)));
        try {
          auto e = oracle::enumerate_jackpot_partitions(sc.total.lifted_to(ext.space), run.sc.agents);
          v["oracle_best_jackpot_sum"] = num(e.best_sum);
          v["oracle_enumerated"] = e.enumerated;
          if (e.best_sum > value + 1e-9) {
            run.warn("an enumerated jackpot partition beats the sum-optimal value");
            run.invalid();
          }
        } catch (const BudgetExceeded& err) {
          run.warn(std::string("oracle skipped: ") + err.what());
        }
      }
    } else if (op == "y0") {
      Y0Options yo;
      yo.x_min = run.param_number("y0_min", yo.x_min);
      yo.x_max = run.param_number("y0_max", yo.x_max);
      auto r = find_y0(sc, yo);
      v["y0"] = r.y0 ? num(*r.y0) : json(nullptr);
      v["y0_theta"] = num(r.theta);
      if (!r.tech.satisfied) run.warn("technical condition not met; y0 is not reported");
      Table& t = run.table("y0_flip", {"total", "proportional_minus_jackpot_bound"});
      for (const auto& [x, d] : r.flip_table) t.rows.push_back({num(x), num(d)});
    } else if (op == "epsilon") {
      auto r = epsilon_perturbation(run.param_number("y"), sc, run.param_number("epsilon"));
      v["epsilon_utility"] = num(r.utility);
      v["epsilon_base_utility"] = num(r.base_utility);
      v["epsilon_derivative_estimate"] = num(r.derivative_estimate);
      v["epsilon_derivative_limit"] = num(r.derivative_limit);
    } else {
      throw ValidationError("/params/operations: unknown operation '" + op + "'");
    }
  }
}

// ---------------------------------------------------------------------------
// reproduce

using Observations = std::vector<std::pair<std::string, json>>;

void observe(Observations& o, const std::string& name, json value) { o.emplace_back(name, std::move(value)); }

RandomVariable constant_on(const SpacePtr& space, double x) {
  return RandomVariable(space, std::vector<double>(space->size(), x));
}

void target_jackpot(Run& run, Observations& obs) {
  const Allocation& base = run.endowments();
  const auto& agents = run.sc.agents;
  ImprovementResult r = counter_monotonic_improve(base);
  Table& t = run.table("jackpot", {"agent", "win_probability", "utility_before", "utility_after"});
  bool better = true, ordered = true;
  for (std::size_t i = 0; i < agents.size(); ++i) {
    const double p = r.extension.partition.probability_of(i);
    const double before = agent_utility(base.component(i), agents[i]);
    const double after = agent_utility(r.allocation.component(i), agents[i]);
    better = better && after > before + 1e-12;
    ordered = ordered && convex_order_leq(base.component(i), r.allocation.component(i)).holds;
    t.rows.push_back({agents[i].name, num(p), num(before), num(after)});
    observe(obs, "win_probability_" + std::to_string(i + 1), num(p));
  }
  observe(obs, "jackpot", check_dependence(r.allocation, DependenceMode::jackpot).holds);
  observe(obs, "convex_order", ordered);
  observe(obs, "strict_pareto_improvement", better);
}

void target_no_finite_improvement(Run& run, Observations& obs) {
  const Allocation& base = run.endowments();
  const std::size_t n = base.agents(), m = base.space()->size();
  // Every jackpot on the unextended space: n^m owner maps.
  std::size_t matches = 0, total = 1;
  for (std::size_t s = 0; s < m; ++s) total *= n;
  for (std::size_t code = 0; code < total; ++code) {
    std::vector<double> means(n, 0.0);
    std::size_t c = code;
    for (std::size_t s = 0; s < m; ++s, c /= n) means[c % n] += base.space()->prob(s) * base.total()[s];
    bool ok = true;
    for (std::size_t i = 0; i < n; ++i) ok = ok && std::abs(means[i] - expectation(base.component(i))) <= 1e-12;
    matches += ok;
  }
  observe(obs, "unextended_owner_maps", total);
  observe(obs, "unextended_mean_preserving_jackpots", matches);

  ImprovementResult r = counter_monotonic_improve(base);
  bool binary = true, ordered = true;
  const double top = base.total().max();
  for (std::size_t i = 0; i < n; ++i) {
    for (double y : r.allocation.values(i)) binary = binary && (std::abs(y) <= 1e-12 || std::abs(y - top) <= 1e-12);
    ordered = ordered && convex_order_leq(base.component(i), r.allocation.component(i)).holds;
    observe(obs, "extended_win_probability_" + std::to_string(i + 1), num(r.extension.partition.probability_of(i)));
  }
  observe(obs, "extended_two_valued", binary);
  observe(obs, "extended_convex_order", ordered);
  observe(obs, "extended_jackpot", check_dependence(r.allocation, DependenceMode::jackpot).holds);
}

void observe_group_lambdas(const Run& run, Observations& obs) {
  std::set<std::string> seen;
  for (std::size_t i = 0; i < run.sc.agents.size(); ++i)
    if (seen.insert(run.sc.groups[i]).second) observe(obs, "lambda_" + run.sc.groups[i], num(run.lambda()[i]));
}

void target_rars_a(Run& run, Observations& obs) {
  auto [s, t] = run.attitude_groups();
  const auto& lambda = run.lambda();
  observe_group_lambdas(run, obs);
  const MixedOptions mo = mixed_options(run);
  const double c = split_threshold(lambda, run.sc.agents, s, t, run.param_number("lo", 0.05),
                                   run.param_number("hi", 2.0), mo);
  observe(obs, "threshold", num(c));
  const double below = run.param_number("probe_below", 0.3), above = run.param_number("probe_above", 1.5);
  observe(obs, "seeking_share_below", num(optimal_split(lambda, run.sc.agents, s, t, below, mo).seeking_share));
  observe(obs, "seeking_share_above", num(optimal_split(lambda, run.sc.agents, s, t, above, mo).seeking_share));
}

void target_rars_b(Run& run, Observations& obs) {
  auto [s, t] = run.attitude_groups();
  observe_group_lambdas(run, obs);
  const double x = run.param_number("x", 2.0);
  auto split = optimal_split(run.lambda(), run.sc.agents, s, t, x, mixed_options(run));
  observe(obs, "seeking_share", num(split.seeking_share));
  observe(obs, "averse_share", num(x - split.seeking_share));
}

void target_rars_equilibrium(Run& run, Observations& obs) {
  TwoPointSetup tp = two_point_setup(run);
  TwoPointAnalysis a = two_point_mixed_equilibrium(tp.a, tp.b, tp.p, tp.seeking, tp.averse);
  observe(obs, "exists", a.exists);
  observe(obs, "upper_ratio", num(a.upper));
  observe(obs, "lower_ratio", num(a.lower));
  Table& t = run.table("price_checks", {"epsilon", "value", "price_ratio", "valid"});
  for (const auto& e : epsilon_list(run)) {
    auto inst = build_two_point_instance(tp.a, tp.b, tp.p, tp.seeking, tp.averse, 1.0 - e.value, 1.0 + e.value);
    auto cert = verify_equilibrium(inst.allocation, inst.price, inst.allocation, inst.agents, "two_point_mixed");
    t.rows.push_back({e.label, num(e.value), num((1.0 - e.value) / (1.0 + e.value)), cert.valid});
    run.add_certificate(cert, "epsilon_" + e.label, false);
    observe(obs, "valid_at_" + e.label, cert.valid);
  }
}

void target_rdu_satiation(Run& run, Observations& obs) {
  RduScenario sc = rdu_scenario(run, run.sc.total);
  auto r = jackpot_vs_proportional(sc);
  const auto& u = sc.agent.utility;
  const double peak = u(u.params().at(2));
  observe(obs, "verdict", to_string(r.verdict));
  observe(obs, "proportional_at_peak", std::abs(r.proportional_utility - peak) <= 1e-12 * std::max(1.0, peak));
  observe(obs, "w_one_over_n_below_one", sc.agent.weighting(1.0 / static_cast<double>(sc.n)) < 1.0);
  observe(obs, "margin", num(r.margin));
}

void target_upf(Run& run, Observations& obs) {
  auto opt = rs_lambda_optimal(run.lambda(), run.sc.agents, run.sc.total);
  for (std::size_t i = 0; i < opt.utilities.size(); ++i)
    observe(obs, "utility_" + std::to_string(i + 1), num(opt.utilities[i]));
  auto trace = upf_trace(run.sc.agents, run.sc.total, simplex_grid(run.sc.agents.size(), run.param_count("steps", 20)));
  std::vector<std::string> cols;
  for (std::size_t i = 0; i < run.sc.agents.size(); ++i) cols.push_back("utility_" + std::to_string(i + 1));
  Table& t = run.table("upf", cols);
  for (const auto& p : trace) {
    std::vector<json> row;
    for (double u : p.utilities) row.push_back(num(u));
    t.rows.push_back(std::move(row));
  }
}

void target_beta_w(Run& run, Observations& obs) {
  const std::size_t grid = run.param_count("envelope_grid", 10000);
  const auto& w = run.sc.agents.front().weighting;
  Envelope env = concave_envelope(w, grid);
  observe(obs, "beta_w", num(env.beta));
  auto inflection = check_cavexity(w, grid);
  observe(obs, "inflection", inflection ? num(*inflection) : json(nullptr));
}

void target_two_agent(Run& run, Observations& obs) {
  auto r = two_agent_equilibrium(run.sc.agents, run.endowments());
  run.equilibrium_result(r, "");
  observe(obs, "certificate_valid", r.certificate.valid);
  observe(obs, "certificate_exact", r.certificate.exact());
  auto pv = pareto_check_rs(r.allocation, run.sc.agents);
  observe(obs, "pareto_optimal", pv.pareto_optimal);
  observe(obs, "jackpot", pv.jackpot);
}

void target_homogeneous(Run& run, Observations& obs) {
  auto r = homogeneous_equilibrium(run.sc.agents, run.endowments());
  run.equilibrium_result(r, "");
  const double eu = expected_utility(run.sc.total, run.sc.agents.front().utility);
  double err = 0.0;
  for (std::size_t i = 0; i < r.utilities.size(); ++i) err = std::max(err, std::abs(r.utilities[i] - eu * r.shares[i]));
  observe(obs, "utility_error", num(err));
  observe(obs, "certificate_valid", r.certificate.valid);
  observe(obs, "certificate_exact", r.certificate.exact());
}

void target_rdu_constant(Run& run, Observations& obs) {
  auto r = rdu_constant_equilibrium(run.sc.agents, run.endowments());
  observe(obs, "beta_w", num(r.beta_w));
  observe(obs, "refused", r.refused);
  if (r.equilibrium) {
    run.equilibrium_result(*r.equilibrium, "");
    observe(obs, "certificate_valid", r.equilibrium->certificate.valid);
  }
  if (const json* p = run.param("alt_theta")) {
    Collector c;
    auto theta = numbers(*p, "/params/alt_theta", c);
    if (!theta || theta->size() != run.sc.agents.size())
      throw ValidationError("/params/alt_theta: needs one share per agent");
    std::vector<std::vector<double>> comps;
    for (double th : *theta) comps.push_back(run.sc.total.scaled(th).values());
    auto alt = rdu_constant_equilibrium(run.sc.agents, Allocation(run.sc.total, std::move(comps)));
    observe(obs, "alt_refused", alt.refused);
    if (alt.refused) run.doc.values["alt_diagnostic"] = alt.diagnostic;
  }
}

void target_rdu_threshold(Run& run, Observations& obs) {
  RduScenario sc = rdu_scenario(run, run.sc.total);
  auto y = find_y0(sc);
  observe(obs, "tech_satisfied", y.tech.satisfied);
  observe(obs, "y0_finite", y.y0.has_value());
  observe(obs, "verdict_below", to_string(jackpot_vs_proportional(sc).verdict));
  if (y.y0) {
    run.doc.values["y0"] = num(*y.y0);
    RduScenario high = make_rdu_scenario(sc.n, sc.agent, constant_on(sc.total.space(), 2.0 * *y.y0), sc.x0,
                                         run.param_count("envelope_grid", 10000));
    observe(obs, "verdict_above", to_string(jackpot_vs_proportional(high).verdict));
  }
  auto e = epsilon_perturbation(run.param_number("y", 4.0 * sc.x0), sc, run.param_number("epsilon", 1e-3));
  observe(obs, "epsilon_derivative_gap", num(std::abs(e.derivative_estimate - e.derivative_limit)));
  run.doc.values["epsilon_derivative_limit"] = num(e.derivative_limit);
}

const std::map<std::string, std::function<void(Run&, Observations&)>>& targets() {
  static const std::map<std::string, std::function<void(Run&, Observations&)>> t = {
      {"constant_split_jackpot", target_jackpot},
      {"four_state_no_representation", target_no_finite_improvement},
      {"mixed_threshold", target_rars_a},
      {"mixed_interior_split", target_rars_b},
      {"two_point_price_band", target_rars_equilibrium},
      {"satiation_proportional_wins", target_rdu_satiation},
      {"two_convex_frontier", target_upf},
      {"tk_envelope_breakpoint", target_beta_w},
      {"two_agent_tail_event", target_two_agent},
      {"rdu_constant_total", target_rdu_constant},
      {"homogeneous_price_invariance", target_homogeneous},
      {"rdu_large_stake_threshold", target_rdu_threshold},
  };
  return t;
}

void run_reproduce(Run& run) {
  const std::string target = run.param_string("target");
  auto it = targets().find(target);
  if (it == targets().end()) throw ValidationError("/params/target: unknown reproduction target '" + target + "'");
  run.doc.values["target"] = target;
  Observations obs;
  it->second(run, obs);
  json observed = json::object();
  for (const auto& [k, v] : obs) observed[k] = v;
  run.doc.values["observed"] = observed;

  const json* expect = run.param("expect");
  if (!expect || !expect->is_object() || expect->empty())
    throw ValidationError("/params/expect: reproduction needs a non-empty object of expected values");
  Table& t = run.table("checks", {"check", "expected", "observed", "tolerance", "pass"});
  bool all = true;
  for (const auto& [name, spec] : expect->items()) {
    json want = spec.is_object() ? spec.value("value", json()) : spec;
    double tol = 1e-12;
    if (spec.is_object() && spec.contains("tol")) {
      auto v = as_number(spec["tol"]);
      if (!v) throw ValidationError("/params/expect/" + name + "/tol: expected a number");
      tol = *v;
    }
    json got = observed.contains(name) ? observed[name] : json();
    bool pass;
    json shown = want;
    if (got.is_number()) {
      auto w = as_number(want);
      if (!w) throw ValidationError("/params/expect/" + name + ": expected a number");
      shown = num(*w);
      pass = std::abs(got.get<double>() - *w) <= tol;
    } else {
      pass = observed.contains(name) && got == want;
    }
    all = all && pass;
    t.rows.push_back({name, shown, got, got.is_number() ? num(tol) : json(nullptr), pass});
  }
  run.doc.values["reproduced"] = all;
  if (!all) run.doc.status = "reproduction_failed";
}

std::string csv_cell(const json& v) {
  if (v.is_null()) return "";
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number_integer() || v.is_number_unsigned()) return v.dump();
  if (v.is_number()) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v.get<double>());
    return buf;
  }
  std::string s = v.is_string() ? v.get<std::string>() : v.dump();
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

std::string file_stem(const std::string& name) {
  std::string out = name;
  for (char& ch : out)
    if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '_' && ch != '-' && ch != '.') ch = '_';
  return out;
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << content;
  if (!f) throw Error("cannot write " + path.string());
}

}  // namespace

// ===========================================================================

Scenario parse_scenario_text(const std::string& body, const std::string& source) {
  json doc;
  try {
    doc = json::parse(body);
  } catch (const json::parse_error& e) {
    auto [line, col] = line_and_column(body, e.byte == 0 ? 0 : e.byte - 1);
    throw ValidationError(source + ": line " + std::to_string(line) + ", column " + std::to_string(col) +
                          ": malformed JSON document");
  }
  Collector c;
  if (!doc.is_object()) throw ValidationError(source + ": the document root must be an object");
  Scenario sc;
  sc.document = doc;
  sc.source = source;
  for (const auto& [key, _] : doc.items())
    if (!kTopLevelKeys.count(key)) c.add("/" + key, "unknown field");
  if (doc.contains("schema")) {
    if (!doc["schema"].is_number_integer() || doc["schema"].get<long long>() != kSchemaVersion)
      c.add("/schema", "unsupported schema version (expected " + std::to_string(kSchemaVersion) + ")");
  }
  sc.name = text(doc, "", "name", c, std::filesystem::path(source).stem().string()).value_or("");
  sc.task = text(doc, "", "task", c, std::string()).value_or("");
  if (!sc.task.empty() && !kTasks.count(sc.task)) c.add("/task", "unknown task '" + sc.task + "'");
  if (doc.contains("seed")) {
    if (!doc["seed"].is_number_unsigned())
      c.add("/seed", "expected a nonnegative integer");
    else
      sc.seed = doc["seed"].get<unsigned long long>();
  }
  if (doc.contains("params")) {
    if (doc["params"].is_object())
      sc.params = doc["params"];
    else
      c.add("/params", "expected an object");
  }
  std::optional<ParsedSpace> space;
  if (!doc.contains("space"))
    c.add("/space", "required object is missing");
  else
    space = parse_space(doc["space"], "/space", c);
  if (space) {
    sc.space = space->space;
    sc.total = space->total;
  }
  parse_agents(doc, sc, c);
  if (space && !sc.agents.empty() && c.issues.empty()) {
    parse_endowments(doc, sc, c);
    parse_lambda(sc, c);
  }
  if (!c.issues.empty()) {
    for (auto& issue : c.issues) issue = source + ": " + issue;
    throw ValidationError(c.issues);
  }
  return sc;
}

Scenario parse_scenario(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError(path + ": cannot read file");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_scenario_text(ss.str(), path);
}

ReportDocument run_scenario(const Scenario& scenario, const RunOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  Run run{scenario, options, {}, {}};
  run.doc.scenario = scenario.document;
  run.doc.task = scenario.task;
  run.doc.seed = options.seed.value_or(scenario.seed);
  const std::string& task = scenario.task;
  if (task == "improve")
    run_improve(run);
  else if (task == "pareto")
    run_pareto(run);
  else if (task == "upf")
    run_upf(run);
  else if (task == "equilibrium")
    run_equilibrium(run);
  else if (task == "rdu")
    run_rdu(run);
  else if (task == "reproduce")
    run_reproduce(run);
  else
    throw ValidationError("/task: unknown task '" + task + "'");
  run.doc.tables.assign(std::make_move_iterator(run.tables.begin()), std::make_move_iterator(run.tables.end()));
  if (options.timing)
    run.doc.timing_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return std::move(run.doc);
}

Format parse_format(const std::string& name) {
  if (name == "json") return Format::json;
  if (name == "csv") return Format::csv;
  if (name == "text") return Format::text;
  throw ValidationError("--format: expected json, csv or text");
}

nlohmann::json to_json(const ReportDocument& doc) {
  json tables = json::array();
  for (const auto& t : doc.tables) tables.push_back({{"name", t.name}, {"columns", t.columns}, {"rows", t.rows}});
  json out = {{"engine_version", kEngineVersion},
              {"task", doc.task},
              {"status", doc.status},
              {"seed", doc.seed},
              {"scenario", doc.scenario},
              {"values", doc.values},
              {"certificates", doc.certificates},
              {"tables", tables},
              {"warnings", doc.warnings}};
  if (doc.timing_ms) out["timing_ms"] = *doc.timing_ms;
  return out;
}

std::string render_csv(const Table& table) {
  std::string out;
  for (std::size_t k = 0; k < table.columns.size(); ++k) out += (k ? "," : "") + csv_cell(table.columns[k]);
  out += "\n";
  for (const auto& row : table.rows) {
    for (std::size_t k = 0; k < row.size(); ++k) out += (k ? "," : "") + csv_cell(row[k]);
    out += "\n";
  }
  return out;
}

std::string render_text(const ReportDocument& doc) {
  std::ostringstream os;
  os << kEngineVersion << "\n";
  os << "task: " << doc.task << "\nstatus: " << doc.status << "\nseed: " << doc.seed << "\n";
  if (doc.timing_ms) os << "timing_ms: " << *doc.timing_ms << "\n";
  if (!doc.values.empty()) {
    os << "\nvalues\n";
    for (const auto& [k, v] : doc.values.items()) os << "  " << k << " = " << v.dump() << "\n";
  }
  for (const auto& c : doc.certificates)
    os << "\ncertificate " << c["label"].get<std::string>() << " (" << c["method"].get<std::string>()
       << "): " << (c["valid"].get<bool>() ? "valid" : "INVALID") << (c["exact"].get<bool>() ? "" : ", heuristic")
       << "\n";
  for (const auto& t : doc.tables) {
    os << "\ntable " << t.name << " (" << t.rows.size() << " rows)\n";
    std::string header;
    for (std::size_t k = 0; k < t.columns.size(); ++k) header += (k ? "\t" : "  ") + t.columns[k];
    os << header << "\n";
    const std::size_t shown = std::min<std::size_t>(t.rows.size(), 20);
    for (std::size_t r = 0; r < shown; ++r) {
      for (std::size_t k = 0; k < t.rows[r].size(); ++k) os << (k ? "\t" : "  ") << csv_cell(t.rows[r][k]);
      os << "\n";
    }
    if (shown < t.rows.size()) os << "  ... " << t.rows.size() - shown << " more rows\n";
  }
  if (!doc.warnings.empty()) {
    os << "\nwarnings\n";
    for (const auto& w : doc.warnings) os << "  - " << w << "\n";
  }
  return os.str();
}

void emit_report(const ReportDocument& doc, Format format, const std::optional<std::string>& out_dir,
                 std::ostream& out) {
  namespace fs = std::filesystem;
  if (out_dir) {
    std::error_code ec;
    fs::create_directories(*out_dir, ec);
    if (ec) throw Error("cannot create output directory " + *out_dir + ": " + ec.message());
  }
  switch (format) {
    case Format::json: {
      const std::string body = to_json(doc).dump(2) + "\n";
      if (out_dir)
        write_file(fs::path(*out_dir) / "report.json", body);
      else
        out << body;
      break;
    }
    case Format::csv: {
      std::string manifest = "table,file,rows\n";
      for (const auto& t : doc.tables) {
        const std::string file = file_stem(t.name) + ".csv";
        manifest += csv_cell(t.name) + "," + csv_cell(file) + "," + std::to_string(t.rows.size()) + "\n";
        if (out_dir)
          write_file(fs::path(*out_dir) / file, render_csv(t));
        else
          out << "# table: " << t.name << "\n" << render_csv(t);
      }
      if (out_dir) write_file(fs::path(*out_dir) / "manifest.csv", manifest);
      break;
    }
    case Format::text: {
      const std::string body = render_text(doc);
      if (out_dir)
        write_file(fs::path(*out_dir) / "summary.txt", body);
      else
        out << body;
      break;
    }
  }
  if (!out) throw Error("cannot write report to the output stream");
}

int exit_code(const ReportDocument& doc) {
  if (doc.status == "ok") return 0;
  if (doc.status == "invalid_certificate" || doc.status == "reproduction_failed") return 3;
  return 1;
}

}  // namespace riskshare::cli
