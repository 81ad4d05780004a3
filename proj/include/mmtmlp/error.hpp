#pragma once

#include <stdexcept>
#include <string>

namespace mmtmlp {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad configuration or CLI usage (exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or missing input data (exit code 3).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Text/binary file could not be parsed. Carries the 1-based line when known.
class ParseError : public DataError {
 public:
  ParseError(const std::string& path, std::size_t line, const std::string& what)
      : DataError(path + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class IoError : public DataError {
 public:
  using DataError::DataError;
};

/// Pose contains non-finite coordinates.
class InvalidPoseError : public DataError {
 public:
  using DataError::DataError;
};

/// Pose cannot be normalized (zero-length bone, collinear frame vectors).
class DegeneratePoseError : public InvalidPoseError {
 public:
  using InvalidPoseError::InvalidPoseError;
};

/// Not enough native history to build the requested window.
class WindowBoundsError : public DataError {
 public:
  using DataError::DataError;
};

/// Matrix or sequence shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Operation called in the wrong order (e.g. backward before forward).
/// Class index outside its valid range.
class IndexError : public Error {
 public:
  using Error::Error;
};

class StateError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss (exit code 4).
class DivergenceError : public Error {
 public:
  DivergenceError(int epoch, double lr, const std::string& what)
      : Error(what), epoch_(epoch), lr_(lr) {}
  int epoch() const noexcept { return epoch_; }
  double lr() const noexcept { return lr_; }

 private:
  int epoch_;
  double lr_;
};

class MetricError : public Error {
 public:
  using Error::Error;
};

/// CPU measurement requested outside the single-thread contract.
class MeasurementError : public Error {
 public:
  using Error::Error;
};

}  // namespace mmtmlp
