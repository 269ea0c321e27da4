#pragma once

#include <stdexcept>
#include <string>

namespace unida {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes or axes do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition of an operation was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A model, method, or run configuration is invalid.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A dataset file on disk does not match the benchmark file format.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace unida
