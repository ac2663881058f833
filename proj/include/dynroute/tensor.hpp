// Copyright (c) 2026, The dynroute Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major float64 tensors. Values are always finite; construction
// rejects NaN and Inf so a diverging computation fails at the op that
// produced it rather than somewhere downstream.

#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace dynroute {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(Shape shape);
  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  /// Rows/cols of a rank-2 tensor; a rank-1 tensor is treated as a column.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const noexcept { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }
  double item() const;

  /// Mutable access for in-place updates (SGD, aggregation). Callers keep values finite.
  std::span<double> mutable_values() noexcept { return values_; }

  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }
  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<double> values_;
};

/// Plain (non-recording) products used by oracles and tape-free inference.
Tensor matmul(const Tensor& a, const Tensor& b);

/// exp(logits/tau) normalised, with max subtraction. tau must be positive.
Tensor softmax_temperature(const Tensor& logits, double tau);

/// -log softmax(logits)[label].
double cross_entropy(const Tensor& logits, std::size_t label);

/// Shannon entropy (nats) of a probability vector.
double entropy(const Tensor& probs);

/// 64-bit FNV-1a over the raw bytes of shape and values; used to assert that
/// a parameter set is untouched by a stage.
std::uint64_t tensor_hash(const Tensor& t, std::uint64_t seed = 1469598103934665603ULL);

}  // namespace dynroute
