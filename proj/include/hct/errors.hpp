#pragma once

#include <stdexcept>
#include <string>

namespace hct {

// Input violates a documented precondition.
class PreconditionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Design matrix is rank deficient; `column` names the first dependent column.
class SingularDesignError : public std::runtime_error {
 public:
  SingularDesignError(const std::string& column, const std::string& what)
      : std::runtime_error(what), column_(column) {}
  const std::string& column() const noexcept { return column_; }

 private:
  std::string column_;
};

// Logistic likelihood has no finite maximiser (complete or quasi separation).
class SeparationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Numerical failure inside an estimator (grid underflow, empty strata, ...).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw PreconditionError(msg);
}

}  // namespace hct
