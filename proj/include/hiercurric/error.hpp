#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hiercurric {

/// Broad failure class; the CLI maps each one to a process exit code.
enum class ErrorKind {
  validation,  // bad input data, bad config, bad shapes
  numeric,     // NaN/Inf detected in checked mode
  io,          // filesystem and format failures
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what) : Error(ErrorKind::validation, what) {}
};

/// Malformed text input; carries the 1-based line number.
class ParseError : public ValidationError {
 public:
  ParseError(std::size_t line, const std::string& what)
      : ValidationError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class NumericFault : public Error {
 public:
  explicit NumericFault(const std::string& what) : Error(ErrorKind::numeric, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::io, what) {}
};

}  // namespace hiercurric
