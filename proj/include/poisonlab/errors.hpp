#pragma once

#include <stdexcept>
#include <string>

namespace poisonlab {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad argument, configuration, or input that violates a documented precondition.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Image folder does not have the expected `real/` + `fake/` layout.
class StructureError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// A file could not be decoded or parsed. The message names the file.
class DecodeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Training diverged or a training callback failed.
class TrainingError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values showed up where finite numbers are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failure (cannot open, short read, ...).
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace poisonlab
