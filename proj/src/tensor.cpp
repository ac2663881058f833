// Copyright (c) 2026, The dynroute Authors
// SPDX-License-Identifier: Apache-2.0

#include "dynroute/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <sstream>

#include "dynroute/errors.hpp"

namespace dynroute {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), values_(std::move(values)) {
  for (auto d : shape_) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape_));
  }
  if (shape_size(shape_) != values_.size()) {
    throw DimensionError("shape " + shape_string(shape_) + " does not match " + std::to_string(values_.size()) +
                         " values");
  }
  for (double v : values_) {
    if (!std::isfinite(v)) throw NumericError("non-finite value in tensor of shape " + shape_string(shape_));
  }
}

Tensor Tensor::zeros(Shape shape) {
  auto n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::vector(std::vector<double> values) {
  auto n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  std::vector<double> values;
  std::size_t cols = rows.size() ? rows.begin()->size() : 0;
  for (const auto& row : rows) {
    if (row.size() != cols) throw DimensionError("ragged matrix literal");
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor({rows.size(), cols}, std::move(values));
}

std::size_t Tensor::rows() const {
  if (rank() == 1) return shape_[0];
  if (rank() == 2) return shape_[0];
  throw DimensionError("rows() needs a rank-1 or rank-2 tensor, got " + shape_string(shape_));
}

std::size_t Tensor::cols() const {
  if (rank() == 1) return 1;
  if (rank() == 2) return shape_[1];
  throw DimensionError("cols() needs a rank-1 or rank-2 tensor, got " + shape_string(shape_));
}

double Tensor::item() const {
  if (values_.size() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape_));
  return values_[0];
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw DimensionError("matmul needs rank-2 operands, got " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
  }
  const std::size_t p = a.rows(), q = a.cols(), r = b.cols();
  if (b.rows() != q) {
    throw DimensionError("matmul inner dimensions differ: " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  std::vector<double> out(p * r, 0.0);
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t k = 0; k < q; ++k) {
      const double aik = av[i * q + k];
      for (std::size_t j = 0; j < r; ++j) out[i * r + j] += aik * bv[k * r + j];
    }
  }
  return Tensor({p, r}, std::move(out));
}

Tensor softmax_temperature(const Tensor& logits, double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ParameterError("softmax temperature must be positive");
  auto v = logits.values();
  const double mx = *std::max_element(v.begin(), v.end());
  std::vector<double> out(v.size());
  double z = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp((v[i] - mx) / tau);
    z += out[i];
  }
  for (auto& o : out) o /= z;
  return Tensor(logits.shape(), std::move(out));
}

double cross_entropy(const Tensor& logits, std::size_t label) {
  auto v = logits.values();
  if (label >= v.size()) {
    throw IndexError("label " + std::to_string(label) + " out of range for " + std::to_string(v.size()) + " classes");
  }
  const double mx = *std::max_element(v.begin(), v.end());
  double z = 0.0;
  for (double x : v) z += std::exp(x - mx);
  return -(v[label] - mx - std::log(z));
}

double entropy(const Tensor& probs) {
  double h = 0.0;
  for (double p : probs.values()) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

std::uint64_t tensor_hash(const Tensor& t, std::uint64_t seed) {
  std::uint64_t h = seed;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  };
  for (auto d : t.shape()) {
    std::uint64_t d64 = d;
    mix(&d64, sizeof d64);
  }
  auto v = t.values();
  mix(v.data(), v.size() * sizeof(double));
  return h;
}

}  // namespace dynroute
