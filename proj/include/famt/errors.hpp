#pragma once

#include <stdexcept>
#include <string>

namespace famt {

// All library failures derive from Error so callers (the CLI in particular)
// can map them onto exit codes without knowing every module.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid numeric parameter (sigma <= 0, r + t > 1, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

// API called in a state where the operation is meaningless.
class UsageError : public Error {
 public:
  using Error::Error;
};

class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace famt
