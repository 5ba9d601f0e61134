#pragma once

#include <stdexcept>
#include <string>

namespace mancount {

/// Base class for every error thrown by this library. The CLI catches
/// these, prints the message and exits nonzero; nothing here aborts.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Shape/extent mismatch between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value (stride, factor, sigma, grid cap, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed file content; message names the file and byte offset.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Index or vertex outside the valid grid.
class BoundsError : public Error {
 public:
  using Error::Error;
};

/// API contract violation (non-scalar loss, untracked tensor, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Numerical evaluation failure (NaN loss, non-finite probe).
class EvalError : public Error {
 public:
  using Error::Error;
};

/// Filesystem-level failure (cannot open/read/write).
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace mancount
