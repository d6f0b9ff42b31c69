#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ddv {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed input file; carries the 1-based line and column of the fault.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line, std::size_t column)
      : Error("line " + std::to_string(line) + ", column " + std::to_string(column) + ": " + what),
        line_(line),
        column_(column) {}

  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

// Non-finite loss or gradient during optimisation.
class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, int epoch)
      : Error(what + " (epoch " + std::to_string(epoch) + ")"), epoch_(epoch) {}

  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

class AuthenticationError : public Error {
 public:
  using Error::Error;
};

class ProtocolError : public Error {
 public:
  using Error::Error;
};

}  // namespace ddv
