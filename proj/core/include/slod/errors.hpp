#pragma once

#include <stdexcept>
#include <string>

namespace slod {

// Base of every error thrown by the library. Subclasses name the failure
// category so callers (and the CLI's exit-code mapping) can discriminate.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

// A soft target that would move the argmax away from the true class.
class ConstraintError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

// Payload shorter or longer than its header declares.
class LengthError : public FormatError {
 public:
  using FormatError::FormatError;
};

class ValueError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace slod
