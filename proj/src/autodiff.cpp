// Copyright (c) 2026, The dynroute Authors
// SPDX-License-Identifier: Apache-2.0

#include "dynroute/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "dynroute/errors.hpp"

namespace dynroute {

Parameter::Parameter(std::string name_, Tensor value_)
    : name(std::move(name_)), value(std::move(value_)), grad(Tensor::zeros(value.shape())) {}

void Parameter::zero_grad() {
  auto g = grad.mutable_values();
  std::fill(g.begin(), g.end(), 0.0);
}

const Tensor& Var::value() const { return tape_->value(*this); }

Var Tape::constant(Tensor value) {
  Node n;
  n.op = Op::kConstant;
  n.owned = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::param(Parameter& p, bool trainable) {
  Node n;
  n.op = Op::kParam;
  n.ref = &p.value;
  n.param = &p;
  n.needs_grad = trainable;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::ref(const Tensor& value) {
  Node n;
  n.op = Op::kConstant;
  n.ref = &value;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

const Tensor& Tape::value(Var v) const { return nodes_[v.index()].value(); }

Var Tape::record(Op op, Tensor value, std::span<const Var> inputs, double aux, std::size_t iaux,
                 std::vector<double> saved) {
  Node n;
  n.op = op;
  n.owned = std::move(value);
  n.aux = aux;
  n.iaux = iaux;
  n.saved = std::move(saved);
  n.in_begin = static_cast<std::uint32_t>(inputs_.size());
  n.in_count = static_cast<std::uint32_t>(inputs.size());
  for (const Var& in : inputs) {
    if (in.tape() != this) throw UsageError("op mixes variables from different tapes");
    inputs_.push_back(in.index());
    n.needs_grad = n.needs_grad || nodes_[in.index()].needs_grad;
  }
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

std::vector<double>& Tape::grad_of(std::uint32_t index) {
  auto& node = nodes_[index];
  if (node.grad.empty()) node.grad.assign(node.value().size(), 0.0);
  return node.grad;
}

void Tape::backward(Var root) {
  if (root.tape() != this) throw UsageError("backward root belongs to another tape");
  if (value(root).size() != 1) {
    throw UsageError("backward needs a scalar root, got shape " + shape_string(value(root).shape()));
  }
  for (auto& n : nodes_) n.grad.clear();
  grad_of(root.index())[0] = 1.0;
  for (std::int64_t i = root.index(); i >= 0; --i) {
    const Node& node = nodes_[static_cast<std::size_t>(i)];
    if (!node.needs_grad || node.grad.empty()) continue;
    propagate(node);
  }
}

void Tape::propagate(const Node& node) {
  const std::uint32_t* in = inputs_.data() + node.in_begin;
  const std::vector<double>& g = node.grad;
  auto wants = [&](std::size_t k) { return nodes_[in[k]].needs_grad; };

  switch (node.op) {
    case Op::kConstant:
      return;
    case Op::kParam: {
      auto pg = node.param->grad.mutable_values();
      for (std::size_t j = 0; j < g.size(); ++j) pg[j] += g[j];
      return;
    }
    case Op::kMatMul: {
      const Tensor& a = nodes_[in[0]].value();
      const Tensor& b = nodes_[in[1]].value();
      const std::size_t p = a.rows(), q = a.cols(), r = b.cols();
      auto av = a.values();
      auto bv = b.values();
      if (wants(0)) {
        auto& ga = grad_of(in[0]);
        for (std::size_t i = 0; i < p; ++i)
          for (std::size_t k = 0; k < q; ++k) {
            double acc = 0.0;
            for (std::size_t j = 0; j < r; ++j) acc += g[i * r + j] * bv[k * r + j];
            ga[i * q + k] += acc;
          }
      }
      if (wants(1)) {
        auto& gb = grad_of(in[1]);
        for (std::size_t i = 0; i < p; ++i)
          for (std::size_t k = 0; k < q; ++k) {
            const double aik = av[i * q + k];
            for (std::size_t j = 0; j < r; ++j) gb[k * r + j] += aik * g[i * r + j];
          }
      }
      return;
    }
    case Op::kMatVec: {
      const Tensor& w = nodes_[in[0]].value();
      const Tensor& x = nodes_[in[1]].value();
      const std::size_t p = w.rows(), q = w.cols();
      auto wv = w.values();
      auto xv = x.values();
      if (wants(0)) {
        auto& gw = grad_of(in[0]);
        for (std::size_t i = 0; i < p; ++i) {
          const double gi = g[i];
          if (gi == 0.0) continue;
          double* row = gw.data() + i * q;
          for (std::size_t k = 0; k < q; ++k) row[k] += gi * xv[k];
        }
      }
      if (wants(1)) {
        auto& gx = grad_of(in[1]);
        for (std::size_t i = 0; i < p; ++i) {
          const double gi = g[i];
          if (gi == 0.0) continue;
          const double* row = wv.data() + i * q;
          for (std::size_t k = 0; k < q; ++k) gx[k] += gi * row[k];
        }
      }
      return;
    }
    case Op::kAdd:
    case Op::kSub: {
      const double sign = node.op == Op::kAdd ? 1.0 : -1.0;
      if (wants(0)) {
        auto& ga = grad_of(in[0]);
        for (std::size_t j = 0; j < g.size(); ++j) ga[j] += g[j];
      }
      if (wants(1)) {
        auto& gb = grad_of(in[1]);
        for (std::size_t j = 0; j < g.size(); ++j) gb[j] += sign * g[j];
      }
      return;
    }
    case Op::kMul: {
      auto av = nodes_[in[0]].value().values();
      auto bv = nodes_[in[1]].value().values();
      if (wants(0)) {
        auto& ga = grad_of(in[0]);
        for (std::size_t j = 0; j < g.size(); ++j) ga[j] += g[j] * bv[j];
      }
      if (wants(1)) {
        auto& gb = grad_of(in[1]);
        for (std::size_t j = 0; j < g.size(); ++j) gb[j] += g[j] * av[j];
      }
      return;
    }
    case Op::kScale: {
      auto& ga = grad_of(in[0]);
      for (std::size_t j = 0; j < g.size(); ++j) ga[j] += node.aux * g[j];
      return;
    }
    case Op::kScaleBy: {
      const double s = nodes_[in[0]].value()[0];
      auto vv = nodes_[in[1]].value().values();
      if (wants(0)) {
        double acc = 0.0;
        for (std::size_t j = 0; j < g.size(); ++j) acc += g[j] * vv[j];
        grad_of(in[0])[0] += acc;
      }
      if (wants(1)) {
        auto& gv = grad_of(in[1]);
        for (std::size_t j = 0; j < g.size(); ++j) gv[j] += s * g[j];
      }
      return;
    }
    case Op::kSigmoid: {
      auto y = node.value().values();
      auto& ga = grad_of(in[0]);
      for (std::size_t j = 0; j < g.size(); ++j) ga[j] += g[j] * y[j] * (1.0 - y[j]);
      return;
    }
    case Op::kTanh: {
      auto y = node.value().values();
      auto& ga = grad_of(in[0]);
      for (std::size_t j = 0; j < g.size(); ++j) ga[j] += g[j] * (1.0 - y[j] * y[j]);
      return;
    }
    case Op::kOneMinus: {
      auto& ga = grad_of(in[0]);
      for (std::size_t j = 0; j < g.size(); ++j) ga[j] -= g[j];
      return;
    }
    case Op::kConcat: {
      const std::size_t na = nodes_[in[0]].value().size();
      if (wants(0)) {
        auto& ga = grad_of(in[0]);
        for (std::size_t j = 0; j < na; ++j) ga[j] += g[j];
      }
      if (wants(1)) {
        auto& gb = grad_of(in[1]);
        for (std::size_t j = na; j < g.size(); ++j) gb[j - na] += g[j];
      }
      return;
    }
    case Op::kElement: {
      grad_of(in[0])[node.iaux] += g[0];
      return;
    }
    case Op::kRow: {
      auto& gt = grad_of(in[0]);
      const std::size_t cols = g.size();
      for (std::size_t j = 0; j < cols; ++j) gt[node.iaux * cols + j] += g[j];
      return;
    }
    case Op::kSoftmax: {
      // d(softmax(z/tau))/dz = (diag(y) - y y^T) / tau
      auto y = node.value().values();
      double dot = 0.0;
      for (std::size_t j = 0; j < g.size(); ++j) dot += g[j] * y[j];
      auto& ga = grad_of(in[0]);
      for (std::size_t j = 0; j < g.size(); ++j) ga[j] += y[j] * (g[j] - dot) / node.aux;
      return;
    }
    case Op::kCrossEntropy: {
      const auto& probs = node.saved;
      auto& ga = grad_of(in[0]);
      for (std::size_t j = 0; j < probs.size(); ++j) {
        ga[j] += g[0] * (probs[j] - (j == node.iaux ? 1.0 : 0.0));
      }
      return;
    }
    case Op::kLogClamped: {
      auto x = nodes_[in[0]].value().values();
      auto& ga = grad_of(in[0]);
      for (std::size_t j = 0; j < g.size(); ++j) {
        if (x[j] > node.aux) ga[j] += g[j] / x[j];
      }
      return;
    }
    case Op::kSum: {
      auto& ga = grad_of(in[0]);
      for (double& v : ga) v += g[0];
      return;
    }
    case Op::kAddN: {
      for (std::uint32_t k = 0; k < node.in_count; ++k) {
        if (!wants(k)) continue;
        auto& gk = grad_of(in[k]);
        for (std::size_t j = 0; j < g.size(); ++j) gk[j] += g[j];
      }
      return;
    }
  }
}

// --- ops --------------------------------------------------------------------

namespace {

Tape& tape_of(Var v) {
  if (!v.valid()) throw UsageError("op on an unbound variable");
  return *v.tape();
}

void require_same_shape(const char* op, Var a, Var b) {
  if (!a.value().same_shape(b.value())) {
    throw DimensionError(std::string(op) + ": shapes " + shape_string(a.value().shape()) + " and " +
                         shape_string(b.value().shape()) + " differ");
  }
}

template <typename F>
Var unary(Op op, Var a, F&& f, double aux = 0.0) {
  const Tensor& x = a.value();
  std::vector<double> out(x.size());
  auto xv = x.values();
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = f(xv[j]);
  Var in[] = {a};
  return tape_of(a).record(op, Tensor(x.shape(), std::move(out)), in, aux);
}

}  // namespace

Var matmul(Var a, Var b) {
  Var in[] = {a, b};
  return tape_of(a).record(Op::kMatMul, matmul(a.value(), b.value()), in);
}

Var matvec(Var w, Var x) {
  const Tensor& wt = w.value();
  const Tensor& xt = x.value();
  if (wt.rank() != 2 || xt.rank() != 1 || wt.cols() != xt.size()) {
    throw DimensionError("matvec: " + shape_string(wt.shape()) + " x " + shape_string(xt.shape()));
  }
  const std::size_t p = wt.rows(), q = wt.cols();
  auto wv = wt.values();
  auto xv = xt.values();
  std::vector<double> out(p, 0.0);
  for (std::size_t i = 0; i < p; ++i) {
    const double* r = wv.data() + i * q;
    double acc = 0.0;
    for (std::size_t k = 0; k < q; ++k) acc += r[k] * xv[k];
    out[i] = acc;
  }
  Var in[] = {w, x};
  return tape_of(w).record(Op::kMatVec, Tensor({p}, std::move(out)), in);
}

Var add(Var a, Var b) {
  require_same_shape("add", a, b);
  auto av = a.value().values();
  auto bv = b.value().values();
  std::vector<double> out(av.size());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = av[j] + bv[j];
  Var in[] = {a, b};
  return tape_of(a).record(Op::kAdd, Tensor(a.value().shape(), std::move(out)), in);
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a, b);
  auto av = a.value().values();
  auto bv = b.value().values();
  std::vector<double> out(av.size());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = av[j] - bv[j];
  Var in[] = {a, b};
  return tape_of(a).record(Op::kSub, Tensor(a.value().shape(), std::move(out)), in);
}

Var mul(Var a, Var b) {
  require_same_shape("mul", a, b);
  auto av = a.value().values();
  auto bv = b.value().values();
  std::vector<double> out(av.size());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = av[j] * bv[j];
  Var in[] = {a, b};
  return tape_of(a).record(Op::kMul, Tensor(a.value().shape(), std::move(out)), in);
}

Var scale(Var a, double c) {
  return unary(Op::kScale, a, [c](double x) { return c * x; }, c);
}

Var scale_by(Var s, Var v) {
  if (s.value().size() != 1) throw DimensionError("scale_by needs a single-element scale");
  const double c = s.value()[0];
  auto vv = v.value().values();
  std::vector<double> out(vv.size());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = c * vv[j];
  Var in[] = {s, v};
  return tape_of(s).record(Op::kScaleBy, Tensor(v.value().shape(), std::move(out)), in);
}

Var sigmoid(Var a) {
  return unary(Op::kSigmoid, a, [](double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
}

Var tanh(Var a) {
  return unary(Op::kTanh, a, [](double x) { return std::tanh(x); });
}

Var one_minus(Var a) {
  return unary(Op::kOneMinus, a, [](double x) { return 1.0 - x; });
}

Var concat(Var a, Var b) {
  if (a.value().rank() != 1 || b.value().rank() != 1) throw DimensionError("concat needs rank-1 operands");
  auto av = a.value().values();
  auto bv = b.value().values();
  std::vector<double> out;
  out.reserve(av.size() + bv.size());
  out.insert(out.end(), av.begin(), av.end());
  out.insert(out.end(), bv.begin(), bv.end());
  Var in[] = {a, b};
  return tape_of(a).record(Op::kConcat, Tensor::vector(std::move(out)), in);
}

Var element(Var v, std::size_t i) {
  if (i >= v.value().size()) throw IndexError("element index " + std::to_string(i) + " out of range");
  Var in[] = {v};
  return tape_of(v).record(Op::kElement, Tensor::scalar(v.value()[i]), in, 0.0, i);
}

Var row(Var table, std::size_t i) {
  const Tensor& t = table.value();
  if (t.rank() != 2) throw DimensionError("row needs a matrix");
  if (i >= t.rows()) {
    throw IndexError("row " + std::to_string(i) + " out of range for " + std::to_string(t.rows()) + " rows");
  }
  const std::size_t c = t.cols();
  auto v = t.values();
  std::vector<double> out(v.begin() + static_cast<std::ptrdiff_t>(i * c),
                          v.begin() + static_cast<std::ptrdiff_t>((i + 1) * c));
  Var in[] = {table};
  return tape_of(table).record(Op::kRow, Tensor::vector(std::move(out)), in, 0.0, i);
}

Var softmax_temperature(Var logits, double tau) {
  Var in[] = {logits};
  return tape_of(logits).record(Op::kSoftmax, softmax_temperature(logits.value(), tau), in, tau);
}

Var cross_entropy(Var logits, std::size_t label) {
  const Tensor& z = logits.value();
  if (label >= z.size()) {
    throw IndexError("label " + std::to_string(label) + " out of range for " + std::to_string(z.size()) + " classes");
  }
  Tensor probs = softmax_temperature(z, 1.0);
  const double loss = cross_entropy(z, label);
  auto pv = probs.values();
  Var in[] = {logits};
  return tape_of(logits).record(Op::kCrossEntropy, Tensor::scalar(loss), in, 0.0, label,
                                std::vector<double>(pv.begin(), pv.end()));
}

Var log_clamped(Var a, double floor) {
  return unary(Op::kLogClamped, a, [floor](double x) { return std::log(std::max(x, floor)); }, floor);
}

Var sum(Var a) {
  double s = 0.0;
  for (double x : a.value().values()) s += x;
  Var in[] = {a};
  return tape_of(a).record(Op::kSum, Tensor::scalar(s), in);
}

Var add_n(std::span<const Var> terms) {
  if (terms.empty()) throw UsageError("add_n of no terms");
  const Tensor& first = terms.front().value();
  std::vector<double> out(first.values().begin(), first.values().end());
  for (std::size_t k = 1; k < terms.size(); ++k) {
    const Tensor& t = terms[k].value();
    if (!t.same_shape(first)) throw DimensionError("add_n terms differ in shape");
    auto tv = t.values();
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += tv[j];
  }
  return tape_of(terms.front()).record(Op::kAddN, Tensor(first.shape(), std::move(out)), terms);
}

// --- optimisation -----------------------------------------------------------

void sgd_step(std::span<Parameter* const> params, double lr) {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ParameterError("learning rate must be positive");
  for (Parameter* p : params) {
    auto v = p->value.mutable_values();
    auto g = p->grad.mutable_values();
    for (std::size_t j = 0; j < v.size(); ++j) {
      v[j] -= lr * g[j];
      if (!std::isfinite(v[j])) throw NumericError("parameter " + p->name + " diverged");
    }
    p->zero_grad();
  }
}

double clip_grad_norm(std::span<Parameter* const> params, double max_norm) {
  if (!(max_norm > 0.0)) throw ParameterError("clip norm must be positive");
  double sq = 0.0;
  for (const Parameter* p : params)
    for (double g : p->grad.values()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double f = max_norm / norm;
    for (Parameter* p : params)
      for (double& g : p->grad.mutable_values()) g *= f;
  }
  return norm;
}

void zero_grads(std::span<Parameter* const> params) {
  for (Parameter* p : params) p->zero_grad();
}

}  // namespace dynroute
