// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace explicit3d {

/// Raised when an operation's precondition on its arguments is violated.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Base class for dataset read failures; subclasses distinguish the cause.
class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SchemaError : public DatasetError {
 public:
  using DatasetError::DatasetError;
};

class VersionError : public DatasetError {
 public:
  using DatasetError::DatasetError;
};

class CorruptionError : public DatasetError {
 public:
  using DatasetError::DatasetError;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A loss term or gradient became non-finite during training.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace explicit3d
