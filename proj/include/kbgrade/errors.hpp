#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace kbgrade {

/// Malformed or out-of-range input data, bad split boundaries, unknown ids.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A CSV row that could not be parsed. The message names the line.
class ParseError : public DataError {
 public:
  ParseError(std::size_t line, const std::string& what)
      : DataError("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// A course or student id the model has no parameters for.
class UnknownEntity : public DataError {
 public:
  using DataError::DataError;
};

/// Training produced a non-finite loss.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace kbgrade
