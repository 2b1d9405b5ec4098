#pragma once

#include <stdexcept>
#include <string>

namespace nexus {

// Numeric values double as CLI exit codes and C API status codes.
enum class ErrorCode : int {
  kOk = 0,
  kInternal = 1,
  kInvalidInput = 2,
  kArtifactMismatch = 3,
  kNumericFailure = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Incompatible array shapes; the message names both shapes.
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error(ErrorCode::kInvalidInput, what) {}
};

/// Invalid hyperparameter, configuration key or configuration value.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorCode::kInvalidInput, what) {}
};

/// Malformed or unusable input data (CSV columns, empty datasets, bad timestamps).
class InputError : public Error {
 public:
  explicit InputError(const std::string& what) : Error(ErrorCode::kInvalidInput, what) {}
};

/// Checkpoint checksum or configuration hash disagreement.
class MismatchError : public Error {
 public:
  explicit MismatchError(const std::string& what) : Error(ErrorCode::kArtifactMismatch, what) {}
};

/// Non-finite loss or other numerical breakdown.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorCode::kNumericFailure, what) {}
};

}  // namespace nexus
