#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace focalpo {

/// Root of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite or out-of-domain scalar argument.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Token or prompt-class index outside the table shape.
class IndexError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent shapes or invalid configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Dataset synthesis could not satisfy its constraints.
class GenerationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed input text; carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Well-formed input whose values violate a range constraint.
class ValidationError : public Error {
 public:
  ValidationError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Non-finite gradient during training, attributed to one preference pair.
class NumericError : public Error {
 public:
  NumericError(std::uint64_t pair_id, const std::string& what)
      : Error("pair " + std::to_string(pair_id) + ": " + what), pair_id_(pair_id) {}
  std::uint64_t pair_id() const noexcept { return pair_id_; }

 private:
  std::uint64_t pair_id_;
};

}  // namespace focalpo
