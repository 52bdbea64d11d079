// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace increg {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or layer shapes do not compose.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf appeared in activations or gradients.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid experiment configuration. The message carries the offending key.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed on-disk data (dataset or model file).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an operation's precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Operation invoked in the wrong lifecycle state.
class StateError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain of a function.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Root bracket does not enclose a local minimum.
class BracketError : public Error {
 public:
  using Error::Error;
};

/// Located root is not a minimum (second derivative not positive).
class SaddleError : public Error {
 public:
  using Error::Error;
};

}  // namespace increg
