#pragma once

#include <stdexcept>
#include <string>

namespace opsense {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not fit the primitive.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A NaN or Inf appeared in a value or gradient.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration, space description or argument.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Operation not allowed in the current state (e.g. pruning the last op of an edge).
class StateError : public Error {
 public:
  using Error::Error;
};

// Malformed textual input: genotype strings, lookup files, reports.
class ParseError : public Error {
 public:
  using Error::Error;
};

}  // namespace opsense
