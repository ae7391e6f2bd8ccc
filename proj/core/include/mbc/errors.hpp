#pragma once

#include <stdexcept>
#include <string>

namespace mbc {

/// Gram matrix stayed indefinite after the full jitter escalation.
struct CholeskyFailure : std::runtime_error {
  explicit CholeskyFailure(const std::string& what) : std::runtime_error(what) {}
};

/// Every fit restart failed; hyperparameters/window are degenerate.
struct FitDegenerate : std::runtime_error {
  explicit FitDegenerate(const std::string& what) : std::runtime_error(what) {}
};

struct TooShort : std::runtime_error {
  explicit TooShort(const std::string& what) : std::runtime_error(what) {}
};

struct GapTooLarge : std::runtime_error {
  explicit GapTooLarge(const std::string& what) : std::runtime_error(what) {}
};

struct InsufficientHistory : std::runtime_error {
  explicit InsufficientHistory(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed input file; message carries file and line.
struct SchemaError : std::runtime_error {
  explicit SchemaError(const std::string& what) : std::runtime_error(what) {}
};

struct EmptyMetrics : std::runtime_error {
  explicit EmptyMetrics(const std::string& what) : std::runtime_error(what) {}
};

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace mbc
