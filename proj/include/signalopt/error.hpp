#pragma once

#include <stdexcept>
#include <string>

namespace signalopt {

// Root of all library errors. Callers that only care about "it failed"
// catch this; the CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Inputs whose dimensions disagree (plan vs. specs, net vs. input, ...).
class ShapeError : public Error {
 public:
  using Error::Error;
};

// No signal plan satisfies the phase bounds at any common cycle length.
class InfeasibleRepair : public Error {
 public:
  using Error::Error;
};

// Malformed network, config or dataset.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss or gradient during training.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace signalopt
