#pragma once

#include <stdexcept>
#include <string>

namespace unigrf {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform to a primitive's rule.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A value lies outside the domain of the requested function (e.g. log of a non-positive number).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A caller violated a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf surfaced during a computation.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Input data is unreadable, malformed or inconsistent.
class DataError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace unigrf
