#pragma once

#include <stdexcept>
#include <string>

namespace slarda {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes or model dimensions do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A configuration value is outside its legal range.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Input data is malformed, empty, or non-finite.
class DataError : public Error {
 public:
  using Error::Error;
};

/// The training protocol was violated (e.g. labels visible on the target).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// A statistical test has no defined value for the supplied data.
class UndefinedTestError : public Error {
 public:
  using Error::Error;
};

}  // namespace slarda
