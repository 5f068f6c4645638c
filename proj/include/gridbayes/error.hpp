#pragma once

#include <stdexcept>
#include <string>

namespace gridbayes {

// Base for every error the library raises. Callers that only care about
// "something went wrong" catch this; the subclasses let tests and the CLI
// tell failure modes apart.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid shapes, dims, variants or hyperparameters.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Non-finite values or otherwise unusable numerics.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Input data that violates a data contract (e.g. no observable cells).
class DataError : public Error {
 public:
  using Error::Error;
};

// Filesystem failures.
class IoError : public Error {
 public:
  using Error::Error;
};

// A mathematical invariant tripped at runtime, e.g. H_a > H_p.
class InvariantError : public Error {
 public:
  using Error::Error;
};

enum class CheckpointErrorKind { kCorrupt, kVersionMismatch, kShapeMismatch };

class CheckpointError : public Error {
 public:
  CheckpointError(CheckpointErrorKind kind, const std::string& what)
      : Error(what), kind_(kind) {}
  CheckpointErrorKind kind() const { return kind_; }

 private:
  CheckpointErrorKind kind_;
};

}  // namespace gridbayes
