#pragma once

#include <stdexcept>
#include <string>

namespace twins {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not satisfy an op's rule.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Bad input data: malformed files, dangling ids, unknown objects.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss or gradient.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint or index file cannot be read back.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace twins
