#pragma once

#include <stdexcept>
#include <string>

namespace adwm {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Shape or size contract violated.
struct DimensionError : Error {
  using Error::Error;
};

/// Too few samples to form a covariance (m < 2).
struct DegenerateSampleError : Error {
  using Error::Error;
};

/// Non-finite values, non-convergence.
struct NumericError : Error {
  using Error::Error;
};

struct FormatError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

/// API misuse, e.g. backward() on a non-scalar.
struct UsageError : Error {
  using Error::Error;
};

}  // namespace adwm
