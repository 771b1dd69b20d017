#pragma once

#include <stdexcept>
#include <string>

namespace imood {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible shapes or empty inputs where a length is required.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// An invalid configuration or generator specification.
class SpecError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file. The message carries the offending line number.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  explicit ParseError(const std::string& what) : Error(what), line_(0) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Non-finite values, singular systems.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A caller broke a precondition (missing stats, empty populations, ...).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the domain of a mathematical function.
class DomainError : public Error {
 public:
  using Error::Error;
};

}  // namespace imood
