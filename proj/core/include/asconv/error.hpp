#pragma once

#include <stdexcept>
#include <string>

namespace asconv {

// Every failure surfaced by the library derives from Error so callers (the CLI
// in particular) can map categories to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Extents, ranks or divisibility constraints violated.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Argument values outside their domain (e.g. uniform bounds a >= b).
class ValueError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced or consumed.
class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed or unsupported file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace asconv
