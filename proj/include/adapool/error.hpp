#pragma once

#include <stdexcept>
#include <string>

namespace adapool {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not fit the operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A precondition of the call was violated (empty input, missing gradient, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A forward op produced NaN or Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class QueryError : public Error {
 public:
  using Error::Error;
};

class LookupError : public Error {
 public:
  using Error::Error;
};

/// Dataset bytes do not follow the record layout.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Dataset bytes follow the layout but carry impossible values.
class CorruptionError : public Error {
 public:
  using Error::Error;
};

/// Not enough classes or examples to build the requested task stream.
class GenerationError : public Error {
 public:
  using Error::Error;
};

class PersistenceError : public Error {
 public:
  enum class Kind { io, corrupt_manifest, truncated_blob, shape_mismatch };

  PersistenceError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace adapool
