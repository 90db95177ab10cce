#pragma once

#include <stdexcept>
#include <string>

namespace ivapcal {

// Bad arguments, malformed inputs, violated preconditions. The CLI maps these
// to exit code 2.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A malformed line or row in an input file.
class ParseError : public ValidationError {
 public:
  ParseError(const std::string& where, std::size_t line, const std::string& what)
      : ValidationError(where + ":" + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// File system and network failures. The CLI maps these to exit code 1.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ivapcal
