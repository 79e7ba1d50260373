#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pivuq {

/// Base class of every error raised by the library. The category is a short
/// machine-readable tag used by the CLI (`error:<category>:`).
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& message)
      : std::runtime_error(message), category_(std::move(category)) {}

  const std::string& category() const noexcept { return category_; }

  /// Validation errors map to CLI exit code 1, everything else to 2.
  virtual bool is_validation() const noexcept { return false; }

 private:
  std::string category_;
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& msg) : Error("dimension", msg) {}
  bool is_validation() const noexcept override { return true; }
};

class ParameterError : public Error {
 public:
  explicit ParameterError(const std::string& msg) : Error("parameter", msg) {}
  bool is_validation() const noexcept override { return true; }
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error("config", msg) {}
  bool is_validation() const noexcept override { return true; }
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error("io", msg) {}
  bool is_validation() const noexcept override { return true; }
};

/// Malformed file content. Carries the byte offset at which parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& msg, std::size_t offset)
      : Error("format", msg + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }
  bool is_validation() const noexcept override { return true; }

 private:
  std::size_t offset_;
};

/// A `.flo` payload offered where a `.unc` is expected, or the reverse.
class TypeConfusionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class EstimationError : public Error {
 public:
  explicit EstimationError(const std::string& msg) : Error("estimation", msg) {}
};

class EnsembleError : public Error {
 public:
  explicit EnsembleError(const std::string& msg) : Error("ensemble", msg) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error("numeric", msg) {}
};

class DegenerateInputError : public Error {
 public:
  explicit DegenerateInputError(const std::string& msg) : Error("degenerate", msg) {}
};

}  // namespace pivuq
