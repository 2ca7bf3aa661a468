#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace riskshare {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input: bad probabilities, cut lists, scenario fields.
class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& msg) : Error(msg), issues_{msg} {}
  explicit ValidationError(std::vector<std::string> issues)
      : Error(join(issues)), issues_(std::move(issues)) {}
  const std::vector<std::string>& issues() const { return issues_; }

 private:
  static std::string join(const std::vector<std::string>& v) {
    std::string out;
    for (const auto& s : v) {
      if (!out.empty()) out += "; ";
      out += s;
    }
    return out;
  }
  std::vector<std::string> issues_;
};

// Argument outside the mathematical domain (negative payoff, x < 0, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Operation called on inputs that violate its stated assumptions.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class SpaceMismatch : public Error {
 public:
  using Error::Error;
};

// Exhaustive search would exceed its combination cap.
class BudgetExceeded : public Error {
 public:
  using Error::Error;
};

}  // namespace riskshare
