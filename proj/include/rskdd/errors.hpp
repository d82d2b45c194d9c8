#pragma once

#include <stdexcept>
#include <string>

namespace rskdd {

/// Base of all library errors. The CLI maps each subclass to an exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad configuration, bad arguments, violated preconditions.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Unreadable or malformed input data.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure: NaN loss, degenerate alignment and the like.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class DegenerateAlignmentError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace rskdd
