#pragma once

#include <stdexcept>
#include <string>

namespace lsme {

// Base class for recoverable runtime failures. The CLI maps each subclass to
// its own exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad run configuration: empty inputs, too few categories or scenes.
class ConfigurationError : public Error {
 public:
  using Error::Error;
};

// Rejection sampling could not satisfy the placement margin.
class InfeasiblePlacementError : public Error {
 public:
  using Error::Error;
};

// Inputs are inconsistent: missing keys, malformed files, size mismatches.
class DataIntegrityError : public Error {
 public:
  using Error::Error;
};

// An object has no view whose mask passes the visibility rule.
class ObjectNotVisibleError : public Error {
 public:
  using Error::Error;
};

// A metric has no defined value (e.g. zero eligible query objects).
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

// Caller broke a precondition (dimension mismatch, non-positive temperature).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace lsme
