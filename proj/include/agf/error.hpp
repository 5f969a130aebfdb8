#pragma once

#include <stdexcept>
#include <string>

namespace agf {

/// Bad arguments or malformed data handed to a pure operation.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A non-finite value appeared during a computation.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An object was used out of sequence (e.g. backward without forward).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Persisted file is unreadable: wrong magic, version, truncation.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Pipeline misconfiguration, e.g. a missing prerequisite artifact.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace agf
