#pragma once

#include <stdexcept>
#include <string>

namespace dgan {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes that do not fit together.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// NaN/inf or a failed numerical routine.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed checkpoint or image payload.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Configuration rejected during parsing or validation.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failures.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace dgan
