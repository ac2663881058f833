// Copyright (c) 2026, The dynroute Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace dynroute {

/// Tensor shapes that do not line up (matmul inner dims, gate input sizes, ...).
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A scalar hyperparameter outside its domain (tau <= 0, lr <= 0, ...).
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Class label or token id out of range.
class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// An API called in the wrong state (backward on a non-scalar, hard step on a soft model).
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Non-finite values reaching a Tensor.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid experiment / federation / generator configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Client updates that cannot be aggregated together.
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A federated round that could not produce a new global model.
class RoundError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Metric with no defined value for its input (e.g. accuracy of an empty set).
class MetricError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed checkpoint, dataset file, or run directory.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dynroute
