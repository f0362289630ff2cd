#pragma once

#include <stdexcept>
#include <string>

namespace dblcox {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "runtime"; }
};

/// A required column is missing or the header is malformed.
class SchemaError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "schema"; }
};

/// A data row failed validation; `line()` is the 1-based file line.
class ValidationError : public Error {
 public:
  ValidationError(const std::string& msg, long line = -1)
      : Error(line >= 0 ? "line " + std::to_string(line) + ": " + msg : msg),
        line_(line) {}
  long line() const noexcept { return line_; }
  const char* kind() const noexcept override { return "validation"; }

 private:
  long line_;
};

/// Invalid tuning or run configuration (fold counts, grids, levels).
class ConfigError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "config"; }
};

/// Caller violated a precondition (dimension mismatch, out-of-range index).
class ContractError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "contract"; }
};

/// A quadratic program has no feasible point.
class InfeasibleError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "infeasible"; }
};

/// An iterative solver failed to converge.
class ConvergenceError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "convergence"; }
};

/// A variance estimate needed for a test is not strictly positive.
class DegenerateVarianceError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "degenerate_variance"; }
};

}  // namespace dblcox
