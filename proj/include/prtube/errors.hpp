#pragma once

#include <stdexcept>
#include <string>

namespace prtube {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or record shapes that disagree with their declared dimensions.
class StructuralError : public Error {
 public:
  using Error::Error;
};

/// Semantically invalid input values (e.g. a box outside the unit square).
class InputError : public Error {
 public:
  using Error::Error;
};

/// A record line that cannot be tokenized or converted.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Frames presented out of order.
class SequencingError : public Error {
 public:
  using Error::Error;
};

/// A field of a record is out of its admissible range.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent or incomplete run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace prtube
