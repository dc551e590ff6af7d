#pragma once

#include <stdexcept>
#include <string>

namespace gsf {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not fit the operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A NaN or Inf reached a check barrier.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Misuse of the gradient tape (detached loss, double backward, ...).
class TapeError : public Error {
 public:
  using Error::Error;
};

// Invalid argument or configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or unreadable file.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Payload does not fit into the selected bit plan.
class CapacityError : public Error {
 public:
  using Error::Error;
};

}  // namespace gsf
