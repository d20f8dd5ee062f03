#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fvit {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Inconsistent shapes, widths or hyperparameters.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A caller broke an operation precondition (missing class token, empty voxel, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

class InvalidBoxError : public Error {
 public:
  using Error::Error;
};

class EmptySceneError : public Error {
 public:
  using Error::Error;
};

class IngestError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class NonFiniteLossError : public Error {
 public:
  using Error::Error;
};

}  // namespace fvit
