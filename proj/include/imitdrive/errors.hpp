#pragma once

#include <stdexcept>
#include <string>

namespace imitdrive {

/// Bad input: malformed files, out-of-range flags, violated preconditions.
/// The CLI maps this to exit code 2.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A pipeline stage was configured in a way that cannot succeed
/// (e.g. expert parameters that crash on the given track).
class ConfigurationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values, failed factorizations, divergence.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace imitdrive
