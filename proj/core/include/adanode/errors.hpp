#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace adanode {

// Root of every error thrown by the library. Callers that only care about
// "something in adanode failed" catch this; the CLI maps subclasses onto
// exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller broke a documented precondition (bad arguments, wrong call order).
class UsageError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public UsageError {
 public:
  using UsageError::UsageError;
};

class ConfigError : public UsageError {
 public:
  using UsageError::UsageError;
};

class DomainError : public UsageError {
 public:
  using UsageError::UsageError;
};

class StateError : public UsageError {
 public:
  using UsageError::UsageError;
};

class InterpolationError : public UsageError {
 public:
  using UsageError::UsageError;
};

class UndefinedCorrelationError : public Error {
 public:
  using Error::Error;
};

// Non-finite state produced while integrating. `last_valid_time` is the last
// grid time whose state was still finite.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, double last_valid_time)
      : Error(what), last_valid_time_(last_valid_time) {}
  double last_valid_time() const noexcept { return last_valid_time_; }

 private:
  double last_valid_time_;
};

class StepLimitError : public Error {
 public:
  using Error::Error;
};

class StiffnessError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  // `position` is a byte offset for JSON documents and a 1-based line number
  // for CSV files; see the throwing function for which.
  ParseError(const std::string& what, std::size_t position)
      : Error(what), position_(position) {}
  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

class VersionError : public Error {
 public:
  using Error::Error;
};

class EmptyDatasetError : public Error {
 public:
  using Error::Error;
};

class AdaptationError : public Error {
 public:
  using Error::Error;
};

}  // namespace adanode
