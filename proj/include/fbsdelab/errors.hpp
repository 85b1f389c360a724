#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fbsdelab {

// Base class for everything thrown by this library. Callers that want to
// distinguish failure modes catch the subclasses; the CLI catches this and
// turns it into a structured failure record.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Invalid value in a user-supplied object; names the offending field.
class ValidationError : public Error {
 public:
  ValidationError(std::string field, const std::string& what)
      : Error(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

// Structurally inconsistent request (mismatched grids, wrong dimensions,
// coupled/decoupled mixups).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A numeric parameter is outside its admissible range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

// A user callback produced a non-finite value or threw.
class EvaluationError : public Error {
 public:
  using Error::Error;
};

// State blow-up during simulation; carries the first offending location.
class OverflowError : public Error {
 public:
  OverflowError(const std::string& what, long path, int step)
      : Error(what), path_(path), step_(step) {}
  long path() const noexcept { return path_; }
  int step() const noexcept { return step_; }

 private:
  long path_;
  int step_;
};

// Regression design unusable (rank-deficient beyond ridge, no samples).
class RegressionError : public Error {
 public:
  RegressionError(const std::string& what, int step)
      : Error(what + " (backward step " + std::to_string(step) + ")"),
        step_(step) {}
  int step() const noexcept { return step_; }

 private:
  int step_;
};

// Iteration failed to converge; carries the per-iteration change norms so the
// caller can decide whether to relax tolerances or abort.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, std::vector<double> trace)
      : Error(what), trace_(std::move(trace)) {}
  const std::vector<double>& trace() const noexcept { return trace_; }

 private:
  std::vector<double> trace_;
};

// Malformed structured-text input; position is 1-based.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, int line, int column)
      : Error(what + " at line " + std::to_string(line) + ", column " +
              std::to_string(column)),
        line_(line),
        column_(column) {}
  int line() const noexcept { return line_; }
  int column() const noexcept { return column_; }

 private:
  int line_;
  int column_;
};

// Operation requested on an object in the wrong state (e.g. cost evaluation
// on an ensemble without a backward pass).
class StateError : public Error {
 public:
  using Error::Error;
};

}  // namespace fbsdelab
