#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pgn {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes do not agree with what an operation requires.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Malformed or unsupported NPY content. `offset()` is the byte position
/// at which the problem was detected.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset);
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Input violates a documented precondition (label normalisation, p <= 0, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// NaN / Inf input or a singular system.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A metric is not defined for the given input (e.g. a single label class).
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

/// Fitting target has only one class.
class DegenerateTargetError : public Error {
 public:
  using Error::Error;
};

/// Oracle instance is too large to enumerate.
class SizeGuardError : public Error {
 public:
  using Error::Error;
};

/// A required intermediate tensor is missing from a trace.
class ContractError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace pgn
