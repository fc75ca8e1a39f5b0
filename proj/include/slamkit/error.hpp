#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace slamkit {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input is geometrically degenerate for the requested solver.
class DegenerateError : public Error {
 public:
  using Error::Error;
};

/// A robust estimator could not find a model with enough support.
class NoConsensusError : public Error {
 public:
  using Error::Error;
};

/// Malformed text input. `line()` is 1-based, 0 when unknown.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(line ? what + " (line " + std::to_string(line) + ")" : what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Malformed or truncated binary input.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Invalid argument or precondition violation.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Numerical solver failed (singular system, no real roots, non-convergence).
class SolverError : public Error {
 public:
  using Error::Error;
};

}  // namespace slamkit
