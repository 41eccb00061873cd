#pragma once

#include <stdexcept>
#include <string>

namespace roipoly {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or out-of-contract input data (degenerate rings, bad files,
/// invalid configuration values).
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// A computation produced NaN/Inf (e.g. a diverging training run).
class NumericalFailure : public Error {
 public:
  using Error::Error;
};

}  // namespace roipoly
