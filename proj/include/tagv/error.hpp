#pragma once

#include <stdexcept>
#include <string>

namespace tagv {

// Base for every failure the library raises. CLI maps these to exit code 1.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed input text (SRT blocks, manifests, config files).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Tensor operands whose shapes do not conform.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid run configuration (bad hyperparameter, even kernel, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Filesystem / binary payload problems.
class IoError : public Error {
 public:
  using Error::Error;
};

class BadMagicError : public IoError {
 public:
  using IoError::IoError;
};

class TruncatedError : public IoError {
 public:
  using IoError::IoError;
};

// NaN or Inf appeared where only finite values are allowed.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

class IncompatibleCheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace tagv
