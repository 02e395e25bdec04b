#pragma once

#include <stdexcept>
#include <string>

namespace prefalign {

// Base for every error the toolkit raises. The `code` is a stable
// machine-readable tag used by the CLI exit-code mapping and the service's
// JSON error bodies.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

class DimensionMismatch : public Error {
 public:
  explicit DimensionMismatch(const std::string& message)
      : Error("dimension_mismatch", message) {}
};

class InvalidArgument : public Error {
 public:
  explicit InvalidArgument(const std::string& message)
      : Error("invalid_argument", message) {}
};

// Either side of the Tau-b denominator is zero.
class DegenerateDataset : public Error {
 public:
  explicit DegenerateDataset(const std::string& message)
      : Error("degenerate_dataset", message) {}
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& message)
      : Error("validation_error", message) {}
};

// Malformed input file; `line` is 1-based, 0 when not line-specific.
class ParseError : public Error {
 public:
  ParseError(const std::string& message, std::size_t line = 0)
      : Error("parse_error", message), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class TrainingError : public Error {
 public:
  explicit TrainingError(const std::string& message)
      : Error("training_error", message) {}
};

// Failure inside a multi-stage pipeline; `stage` names where it happened.
class StageError : public Error {
 public:
  StageError(std::string stage, const Error& cause)
      : Error(cause.code(), stage + ": " + cause.what()), stage_(std::move(stage)) {}

  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace prefalign
