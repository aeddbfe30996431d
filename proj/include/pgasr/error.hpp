#pragma once

#include <stdexcept>
#include <string>

namespace pgasr {

// Base for every failure raised by the library. The CLI maps ConfigError to
// exit code 2 and everything else to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration or argument, detected before any compute.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent on-disk data (manifests, tensors, checkpoints).
class LoadError : public Error {
 public:
  using Error::Error;
};

// Non-finite values or a diverging simulation.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace pgasr
