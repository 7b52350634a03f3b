#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace provp {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// An input that an operation cannot be defined on (e.g. a zero vector to normalize).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

/// A function under evaluation produced a non-finite value or an undefined metric.
class EvaluationError : public Error {
 public:
  using Error::Error;
};

/// Internal consistency check failed.
class InvariantError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite gradient or loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

class AggregationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed serialized input; carries the byte (or line) offset of the fault.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " (at offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace provp
