#pragma once

#include <stdexcept>
#include <string>

namespace nilmprune {

/// Base of every error the library throws on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or layer shapes that do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Caller broke an operation's precondition (non-scalar loss, missing grads).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration: bad presets, epochs < 1, unknown config keys.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Numeric argument outside its admissible interval.
class RangeError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// Malformed input file (model file, CSV schema).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Input data unusable for the requested operation.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss or values during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Structured removal sets that break a dependency group.
class DependencyError : public Error {
 public:
  using Error::Error;
};

/// Layer kind the dependency modeling does not know how to handle.
class UnsupportedOpError : public Error {
 public:
  using Error::Error;
};

/// Operation applied to a prune state of the wrong mode.
class ModeError : public Error {
 public:
  using Error::Error;
};

}  // namespace nilmprune
