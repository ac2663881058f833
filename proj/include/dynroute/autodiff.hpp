// Copyright (c) 2026, The dynroute Authors
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode automatic differentiation over a linear tape.
//
// Every op appends a node whose inputs have strictly smaller indices, so the
// tape is topologically ordered by construction and backward is a single
// reverse sweep that visits each node once. Parameters enter the tape as
// leaves; a leaf bound with trainable=false still propagates values but never
// receives gradient, and subgraphs that cannot reach a trainable leaf are
// skipped during the sweep.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dynroute/tensor.hpp"

namespace dynroute {

struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Tensor value);

  std::string name;
  Tensor value;
  Tensor grad;  // same shape as value

  void zero_grad();
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; only valid while its tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  Tape* tape() const noexcept { return tape_; }
  std::uint32_t index() const noexcept { return index_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::uint32_t index) : tape_(tape), index_(index) {}

  Tape* tape_ = nullptr;
  std::uint32_t index_ = 0;
};

enum class Op : std::uint8_t {
  kConstant,
  kParam,
  kMatMul,
  kMatVec,
  kAdd,
  kSub,
  kMul,
  kScale,
  kScaleBy,
  kSigmoid,
  kTanh,
  kOneMinus,
  kConcat,
  kElement,
  kRow,
  kSoftmax,
  kCrossEntropy,
  kLogClamped,
  kSum,
  kAddN,
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Binds a parameter as a leaf. The tape keeps a pointer to p, which must outlive it.
  Var param(Parameter& p, bool trainable = true);
  /// Non-trainable leaf that references value without copying; value must outlive the tape.
  Var ref(const Tensor& value);

  /// Populates grads of every trainable parameter reachable from root.
  /// Root must be a single-element tensor.
  void backward(Var root);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.index()].needs_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Recording entry point used by the op functions below.
  Var record(Op op, Tensor value, std::span<const Var> inputs, double aux = 0.0, std::size_t iaux = 0,
             std::vector<double> saved = {});

 private:
  struct Node {
    Op op = Op::kConstant;
    Tensor owned;
    const Tensor* ref = nullptr;
    Parameter* param = nullptr;
    std::vector<double> grad;
    std::vector<double> saved;
    std::uint32_t in_begin = 0;
    std::uint32_t in_count = 0;
    double aux = 0.0;
    std::size_t iaux = 0;
    bool needs_grad = false;

    const Tensor& value() const { return ref ? *ref : owned; }
  };

  std::vector<double>& grad_of(std::uint32_t index);
  void propagate(const Node& node);

  std::vector<Node> nodes_;
  std::vector<std::uint32_t> inputs_;
};

// --- differentiable ops -----------------------------------------------------

Var matmul(Var a, Var b);                  // [p x q] x [q x r]
Var matvec(Var w, Var x);                  // [p x q] x [q]
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);                     // element-wise
Var scale(Var a, double c);
Var scale_by(Var s, Var v);                // single-element s times v
Var sigmoid(Var a);
Var tanh(Var a);
Var one_minus(Var a);                      // 1 - a
Var concat(Var a, Var b);                  // rank-1 concatenation
Var element(Var v, std::size_t i);         // v[i] as a single-element tensor
Var row(Var table, std::size_t i);         // i-th row of a matrix as rank-1
Var softmax_temperature(Var logits, double tau);
Var cross_entropy(Var logits, std::size_t label);
Var log_clamped(Var a, double floor);      // log(max(a, floor)); zero grad where clamped
Var sum(Var a);
Var add_n(std::span<const Var> terms);     // same-shape sum of any number of terms

// --- optimisation -----------------------------------------------------------

/// value -= lr * grad for every parameter, then zeroes grads. lr must be positive.
void sgd_step(std::span<Parameter* const> params, double lr);

/// Rescales grads so their joint L2 norm is at most max_norm. Returns the pre-clip norm.
double clip_grad_norm(std::span<Parameter* const> params, double max_norm);

void zero_grads(std::span<Parameter* const> params);

}  // namespace dynroute
