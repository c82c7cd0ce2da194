#pragma once

#include <stdexcept>
#include <string>

namespace sigil {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A value violates a documented precondition (range, count, probability).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A computation produced NaN or infinity.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Reading or writing a file failed, or its content does not parse.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint is corrupt, truncated, from another version, or for another architecture.
class CheckpointError : public IoError {
 public:
  using IoError::IoError;
};

}  // namespace sigil
