#pragma once

#include <stdexcept>
#include <string>

namespace gtnn {

/// Root of the library's exception hierarchy. The CLI maps each branch
/// onto a process exit code (config 2, data 3, numeric 4).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible shapes, arities, grids or dimensions.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A caller violated an operation's stated precondition.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed input files; `line` is 1-based, 0 when not line oriented.
class DataError : public Error {
 public:
  DataError(const std::string& what, std::size_t line = 0)
      : Error(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

/// Power iteration ran out of iterations; carries the last estimate.
class ConvergenceError : public NumericError {
 public:
  ConvergenceError(const std::string& what, double last_estimate)
      : NumericError(what), last_estimate_(last_estimate) {}
  double last_estimate() const noexcept { return last_estimate_; }

 private:
  double last_estimate_;
};

/// Raised by training when the objective stops being finite.
class NonFiniteLossError : public NumericError {
 public:
  explicit NonFiniteLossError(int epoch)
      : NumericError("non-finite loss at epoch " + std::to_string(epoch)), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

/// A graphon common-grid refinement would exceed the cell cap.
class GridCapError : public ShapeError {
 public:
  using ShapeError::ShapeError;
};

}  // namespace gtnn
