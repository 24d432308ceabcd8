#pragma once

#include <stdexcept>
#include <string>

namespace nemo {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Anything wrong with user-supplied data, files or configuration.
class DataError : public Error {
 public:
  using Error::Error;
};

class InvalidGrid : public DataError {
 public:
  using DataError::DataError;
};

class DimensionError : public DataError {
 public:
  using DataError::DataError;
};

class EmptyDataset : public DataError {
 public:
  using DataError::DataError;
};

class ParseError : public DataError {
 public:
  using DataError::DataError;
};

class KindMismatch : public DataError {
 public:
  using DataError::DataError;
};

class ConfigError : public DataError {
 public:
  using DataError::DataError;
};

class DomainError : public DataError {
 public:
  using DataError::DataError;
};

/// Factorization or other floating-point failure that jitter could not repair.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace nemo
