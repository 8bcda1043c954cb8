#pragma once

#include <stdexcept>
#include <string>

namespace pk {

// Base of every error thrown by the library. Callers that only want to know
// "did preemptkit reject this" can catch Error; the subclasses carry the kind.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor or network shapes that do not compose.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A configuration value outside its documented domain.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A malformed or truncated file.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss, logits or gradients.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace pk
