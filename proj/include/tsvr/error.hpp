#pragma once

#include <stdexcept>
#include <string>

namespace tsvr {

// Base of every error the library throws. The CLI maps the subclasses onto
// its exit codes: InputError family -> 2, NumericError -> 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public InputError {
 public:
  using InputError::InputError;
};

class FormatError : public InputError {
 public:
  using InputError::InputError;
};

class ValidationError : public InputError {
 public:
  using InputError::InputError;
};

class ConfigError : public InputError {
 public:
  using InputError::InputError;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace tsvr
