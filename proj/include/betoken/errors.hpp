#pragma once

#include <stdexcept>
#include <string>

namespace betoken {

// Base for all errors raised by this project. `error_class()` is the stable
// machine-parsable identifier the CLI prints on exit.
class Error : public std::runtime_error {
 public:
  Error(std::string cls, const std::string& msg)
      : std::runtime_error(msg), cls_(std::move(cls)) {}
  const std::string& error_class() const noexcept { return cls_; }

 private:
  std::string cls_;
};

class InvalidArgumentError : public Error {
 public:
  explicit InvalidArgumentError(const std::string& msg) : Error("invalid-argument", msg) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error("numeric-failure", msg) {}
};

class InvariantViolationError : public Error {
 public:
  explicit InvariantViolationError(const std::string& msg) : Error("invariant-violation", msg) {}
};

class MeasurementError : public Error {
 public:
  explicit MeasurementError(const std::string& msg) : Error("measurement-failure", msg) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error("io-failure", msg) {}
};

}  // namespace betoken
