#pragma once

#include <stdexcept>
#include <string>

namespace convrec {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Malformed input file (bad token, wrong column count, unparsable id).
class ParseError : public Error {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& what)
      : Error(file + ":" + std::to_string(line) + ": " + what) {}
  explicit ParseError(const std::string& msg) : Error(msg) {}
};

/// Structurally well-formed input that violates a referential constraint,
/// e.g. an interaction naming an item that does not exist.
class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& msg) : Error(msg) {}
};

/// A caller broke an API precondition (wrong dimension, id out of range).
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& msg) : Error(msg) {}
};

/// Bad or inconsistent configuration value.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

/// Sampling from an empty or infeasible space.
class SamplingError : public Error {
 public:
  explicit SamplingError(const std::string& msg) : Error(msg) {}
};

/// Synthetic world construction cannot satisfy the requested constraints.
class GenerationError : public Error {
 public:
  explicit GenerationError(const std::string& msg) : Error(msg) {}
};

/// I/O failure (missing file, unwritable path, truncated checkpoint).
class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error(msg) {}
};

}  // namespace convrec
