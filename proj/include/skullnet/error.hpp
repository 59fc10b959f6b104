// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace skullnet {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor/matrix dimensions do not agree with what an operation requires.
class ShapeError : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Malformed input data (non-binary labels, bad CSV, corrupt model file).
class ValidationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf encountered during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Object used before it was initialized (e.g. predicting with an unfitted model).
class StateError : public Error {
 public:
  using Error::Error;
};

/// A metric that has no value on the given input (single-class ROC AUC, AP without positives).
class UndefinedMetric : public Error {
 public:
  using Error::Error;
};

}  // namespace skullnet
