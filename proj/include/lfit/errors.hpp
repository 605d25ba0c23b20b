#pragma once

#include <stdexcept>
#include <string>

namespace lfit {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents do not line up for an operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A caller broke a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Input data is unusable (non-finite values, constant channels, empty splits).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent model, scenario or run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed CSV or schema input, reported with row context.
class IngestionError : public DataError {
 public:
  using DataError::DataError;
};

class OutOfVocabularyError : public DataError {
 public:
  using DataError::DataError;
};

/// Model file could not be decoded (bad magic, version mismatch, truncation).
class LoadError : public Error {
 public:
  using Error::Error;
};

}  // namespace lfit
