#pragma once

#include <stdexcept>
#include <string>

namespace evlign {

/// Base of every error raised by the library. The CLI maps these to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file; the message names the line or byte offset.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Data that parsed but violates a domain invariant (bounds, ids).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Bad argument to an operation (B = 0, tau <= 0, fewer than 2 frames...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values or degenerate norms.
class NumericError : public Error {
 public:
  using Error::Error;
};

class ProtocolError : public Error {
 public:
  using Error::Error;
};

class MetricError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace evlign
