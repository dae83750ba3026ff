#pragma once

#include <stdexcept>
#include <string>

namespace priorstack {

/// Bad argument or configuration value (maps to CLI exit code 2).
class InvalidParameter : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed or inconsistent input data (maps to CLI exit code 3).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The numerical problem cannot be solved as posed (maps to CLI exit code 4).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Binomial response with a single class.
class DegenerateResponse : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Fold assignment cannot keep both classes in every fold.
class DegenerateFolds : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Metric undefined for the given inputs (e.g. zero reference loss).
class UndefinedMetric : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace priorstack
