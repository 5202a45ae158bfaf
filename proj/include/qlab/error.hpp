#pragma once

#include <stdexcept>
#include <string>

namespace qlab {

/// Root of all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the domain of an operation (e.g. a point outside [0,1)).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Mismatched sizes: partitions, observable dimension vs theta dimension.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A map violates the uniform-expansion contract.
class ExpansionError : public Error {
 public:
  using Error::Error;
};

/// Iterative procedure (pullback, Newton, power iteration) did not settle.
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

/// A continuous logarithm branch could not be followed.
class BranchJumpError : public ConvergenceError {
 public:
  using ConvergenceError::ConvergenceError;
};

/// Malformed or inconsistent experiment configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace qlab
