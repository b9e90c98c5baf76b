#pragma once

#include <stdexcept>
#include <string>

namespace drl {

// Base of every error raised by the library. The C API maps each subclass
// onto one drl_status code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration or mismatched dimensions.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A caller broke an operation's precondition.
class ContractViolation : public Error {
 public:
  using Error::Error;
};

// Malformed input text (CSV, JSON checkpoints, reports).
class ParseError : public Error {
 public:
  using Error::Error;
};

// A numeric guard tripped (e.g. a vanishing denominator).
class NumericError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss or parameter.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace drl
