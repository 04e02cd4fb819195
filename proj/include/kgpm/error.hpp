#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace kgpm {

// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input file. Carries the 1-based line number when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : Error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Dataset violates a structural invariant (empty train split, overlapping splits).
class DatasetError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration or parameter value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Entity or relation id outside its dictionary.
class BoundsError : public Error {
 public:
  using Error::Error;
};

// Caller broke an operation's precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Two models (or a model and a graph) do not share the same dictionaries.
class IncompatibleError : public Error {
 public:
  using Error::Error;
};

// Non-finite or otherwise unusable numeric input.
class DataError : public Error {
 public:
  using Error::Error;
};

// Training diverged or failed.
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace kgpm
