#pragma once

#include <stdexcept>
#include <string>

namespace advpol {

// Bad input: unknown names, out-of-range parameters, malformed files.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Checkpoint or policy file written with an incompatible schema.
class SchemaError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Numerical failure at run time (non-convergence, stalled sampling).
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ValidationError(what);
}

}  // namespace advpol
