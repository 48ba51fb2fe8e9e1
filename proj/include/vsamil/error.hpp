#pragma once

#include <stdexcept>
#include <string>

namespace vsamil {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// An argument is outside its documented domain (mu <= 0, k > #points, ...).
class ValueError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent dataset/model file content.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Unknown or invalid configuration keys/values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite value.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace vsamil
