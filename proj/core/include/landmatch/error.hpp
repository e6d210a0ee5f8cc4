#pragma once

#include <stdexcept>
#include <string>

namespace landmatch {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller passed a value outside an operation's domain.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// File content is not in a supported format.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Reading or writing a file failed.
class IoError : public Error {
 public:
  using Error::Error;
};

/// A computation produced a non-finite value.
class NumericError : public Error {
 public:
  NumericError(const std::string& component, const std::string& what)
      : Error(component + ": " + what), component_(component) {}

  const std::string& component() const noexcept { return component_; }

 private:
  std::string component_;
};

/// Invalid configuration (unknown key, wrong type, bad value).
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace landmatch
