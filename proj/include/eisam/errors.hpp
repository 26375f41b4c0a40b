#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace eisam {

// Base of every error raised by the library. Domain errors map to exit code 1
// in the CLI, ConfigError to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line_no, const std::string& what)
      : Error("line " + std::to_string(line_no) + ": " + what), line_no_(line_no) {}
  std::size_t line_no() const { return line_no_; }

 private:
  std::size_t line_no_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class InvalidConfig : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class EmptyDataset : public Error {
 public:
  using Error::Error;
};

class DatasetTooSmall : public Error {
 public:
  using Error::Error;
};

class IdOutOfRange : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

class NonFiniteWeight : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class ZeroFrequencyTarget : public Error {
 public:
  using Error::Error;
};

class ZeroGradient : public Error {
 public:
  using Error::Error;
};

class NonFiniteGradient : public Error {
 public:
  NonFiniteGradient(long long step, const std::string& what)
      : Error("step " + std::to_string(step) + ": " + what), step_(step) {}
  long long step() const { return step_; }

 private:
  long long step_;
};

class EmptyScope : public Error {
 public:
  using Error::Error;
};

}  // namespace eisam
