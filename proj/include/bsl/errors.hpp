#pragma once

#include <stdexcept>
#include <string>

namespace bsl {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes disagree with an op signature.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf produced, or a loss diverged.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// An operation was called in the wrong order (backward before forward, step without grads).
class StateError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition of a public function was violated.
class ContractError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class BadMagicError : public FormatError {
 public:
  using FormatError::FormatError;
};

class VersionMismatchError : public FormatError {
 public:
  using FormatError::FormatError;
};

class TruncatedError : public FormatError {
 public:
  using FormatError::FormatError;
};

class ChecksumError : public FormatError {
 public:
  using FormatError::FormatError;
};

}  // namespace bsl
