#pragma once

#include <stdexcept>
#include <string>

namespace tv3s {

// Error taxonomy. The CLI maps these onto process exit codes:
// ConfigError/ShapeError -> 2, IoError -> 3, NumericError -> 4.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad user-facing configuration or a violated call contract.
struct ConfigError : Error {
  using Error::Error;
};

// Tensor extents that do not match what an operation requires.
struct ShapeError : ConfigError {
  using ConfigError::ConfigError;
};

// Missing/corrupt files, unreadable formats.
struct IoError : Error {
  using Error::Error;
};

// NaN/Inf where a finite value is required.
struct NumericError : Error {
  using Error::Error;
};

}  // namespace tv3s
