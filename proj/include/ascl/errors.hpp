#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ascl {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or dimension disagreement between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Input outside the mathematical domain of an operation (log of <= 0, zero norm).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Caller violated a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Operation not valid in the object's current state (e.g. backward on a consumed graph).
class StateError : public Error {
 public:
  using Error::Error;
};

/// Input is degenerate for a statistic (every candidate set empty).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value or key.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or truncated file. Carries the byte offset where decoding failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Numerical failure during training (non-finite loss).
class RuntimeFailure : public Error {
 public:
  using Error::Error;
};

}  // namespace ascl
