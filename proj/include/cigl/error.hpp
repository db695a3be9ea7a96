#pragma once

#include <stdexcept>
#include <string>

namespace cigl {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not chain or match.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A configuration value is missing, malformed or out of range. Carries the
/// offending key so the CLI can name it.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& message)
      : Error(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Malformed input files (CSV, IDX, checkpoints).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Training diverged (non-finite loss or weights).
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace cigl
