#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cnapwp {

/// Malformed input data (CSV rows, sidecars, checkpoints).
class ParseError : public std::runtime_error {
public:
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

private:
  std::size_t line_;
};

/// Invalid configuration: unknown columns, bad hyperparameters, empty pools.
class ConfigError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

class ShapeError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite activation detected during a forward pass.
class NumericError : public std::runtime_error {
public:
  NumericError(const std::string& what, int layer)
      : std::runtime_error(what + " (layer " + std::to_string(layer) + ")"), layer_(layer) {}

  int layer() const noexcept { return layer_; }

private:
  int layer_;
};

class PreconditionError : public std::logic_error {
public:
  using std::logic_error::logic_error;
};

}  // namespace cnapwp
