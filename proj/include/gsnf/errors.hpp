#pragma once

#include <stdexcept>
#include <string>

namespace gsnf {

// Usage/validation problems: bad shapes, bad arguments, malformed files.
// CLI maps these to exit code 2.
struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DimensionError : UsageError {
  explicit DimensionError(const std::string& msg) : UsageError(msg) {}
};

struct ValidationError : UsageError {
  explicit ValidationError(const std::string& msg) : UsageError(msg) {}
};

struct ParseError : UsageError {
  explicit ParseError(const std::string& msg) : UsageError(msg) {}
};

// Numeric/invariant failures: non-convergence, NaN/Inf, broken contracts.
// CLI maps these to exit code 1.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ContractViolation : NumericError {
  explicit ContractViolation(const std::string& msg) : NumericError(msg) {}
};

}  // namespace gsnf
