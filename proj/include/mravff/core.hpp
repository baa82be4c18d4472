// SPDX-License-Identifier: Apache-2.0
//
// Scalar type selection and the error hierarchy shared by every module.

#pragma once

#include <stdexcept>
#include <string>

// Training builds use 32-bit storage. The gradient-check build compiles the
// same sources with MRAVFF_DOUBLE so finite differences are meaningful. Each
// flavor lives in its own inline namespace, so both libraries can be linked
// into one program as long as a translation unit includes only one.
#ifdef MRAVFF_DOUBLE
#define MRAVFF_ABI f64
#else
#define MRAVFF_ABI f32
#endif

namespace mravff::inline MRAVFF_ABI {

#ifdef MRAVFF_DOUBLE
using real = double;
#else
using real = float;
#endif

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad configuration or violated precondition on user input (exit code 1).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Tensor shape disagreement.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Internal contract breach (e.g. backward from a non-scalar).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Missing or malformed data on disk (exit code 2).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Binary layout violation. Carries the byte offset where parsing failed.
class FormatError : public DataError {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : DataError(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

/// Checkpoint written by an incompatible build or for another model config.
class VersionError : public DataError {
 public:
  using DataError::DataError;
};

/// NaN/Inf produced during a forward op or a training step (exit code 3).
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace mravff
