#pragma once

#include <stdexcept>
#include <string>

namespace selfsim {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Mismatched lengths or shapes between arguments.
class DimensionError : public Error {
  public:
    using Error::Error;
};

/// Invalid problem or run configuration. `field` names the offending key
/// path when one exists (e.g. "grid.space[0]").
class ConfigError : public Error {
  public:
    ConfigError(std::string field, const std::string &what)
        : Error(field.empty() ? what : field + ": " + what), field_(std::move(field)) {}

    [[nodiscard]] const std::string &field() const noexcept { return field_; }

  private:
    std::string field_;
};

/// A NaN/Inf was produced where a finite value is required.
class NonFiniteError : public Error {
  public:
    using Error::Error;
};

/// Iterative procedure ran out of budget without meeting its target.
class ConvergenceError : public Error {
  public:
    using Error::Error;
};

} // namespace selfsim
