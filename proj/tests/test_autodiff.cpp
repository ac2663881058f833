// Copyright (c) 2026, The dynroute Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <functional>
#include <random>

#include <gtest/gtest.h>

#include "dynroute/autodiff.hpp"
#include "dynroute/errors.hpp"
#include "dynroute/tensor.hpp"
#include "support.hpp"

namespace dynroute {
namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v));
}

TEST(Tensor, MatmulMatchesTripleLoop) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    std::uniform_int_distribution<std::size_t> dim(1, 6);
    const std::size_t p = dim(rng), q = dim(rng), r = dim(rng);
    const Tensor a = random_tensor({p, q}, rng);
    const Tensor b = random_tensor({q, r}, rng);
    const Tensor c = matmul(a, b);
    ASSERT_EQ(c.shape(), (Shape{p, r}));
    for (std::size_t i = 0; i < p; ++i) {
      for (std::size_t j = 0; j < r; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < q; ++k) s += a.at(i, k) * b.at(k, j);
        EXPECT_NEAR(c.at(i, j), s, 1e-14);
      }
    }
  }
}

TEST(Tensor, MatmulShapeMismatchThrows) {
  EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
  EXPECT_THROW(matmul(Tensor::vector({1.0}), Tensor::zeros({1, 1})), DimensionError);
}

TEST(Tensor, RejectsBadShapesAndNonFinite) {
  EXPECT_THROW(Tensor({2, 2}, {1.0, 2.0}), DimensionError);
  EXPECT_THROW(Tensor::zeros({0}), DimensionError);
  EXPECT_THROW(Tensor::vector({1.0, NAN}), NumericError);
  EXPECT_THROW(Tensor::vector({1.0, 2.0}).item(), DimensionError);
}

TEST(Tensor, SoftmaxAndCrossEntropyMatchOracle) {
  const Tensor z = Tensor::vector({0.3, -1.2, 2.5, 0.0});
  for (double tau : {0.25, 0.75, 1.0, 3.0}) {
    const Tensor p = softmax_temperature(z, tau);
    const auto want = testing::oracle_softmax(testing::vec(z), tau);
    double sum = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
      EXPECT_NEAR(p[i], want[i], 1e-15);
      sum += p[i];
    }
    EXPECT_NEAR(sum, 1.0, 1e-15);
  }
  EXPECT_NEAR(cross_entropy(z, 2), testing::oracle_ce(z.values(), 2), 1e-15);
  EXPECT_THROW(softmax_temperature(z, 0.0), ParameterError);
}

TEST(Tensor, SoftmaxStableForLargeLogits) {
  const Tensor p = softmax_temperature(Tensor::vector({1000.0, 999.0}), 1.0);
  EXPECT_NEAR(p[0], 1.0 / (1.0 + std::exp(-1.0)), 1e-15);
  EXPECT_NEAR(cross_entropy(Tensor::vector({1000.0, 0.0}), 1), 1000.0, 1e-9);
}

// Checks d(sum(w * f(inputs)))/d(inputs) of one op against central differences.
void check_op(const std::vector<Tensor>& inputs, const std::function<Var(Tape&, std::vector<Var>&)>& op,
              double tol = 1e-7) {
  std::vector<Parameter> params;
  for (std::size_t i = 0; i < inputs.size(); ++i) params.emplace_back("in" + std::to_string(i), inputs[i]);
  Rng rng(3);
  Tensor weights;
  auto loss_of = [&](bool backward) {
    Tape tape;
    std::vector<Var> vars;
    for (auto& p : params) vars.push_back(tape.param(p, true));
    Var out = op(tape, vars);
    if (weights.empty()) weights = random_tensor(out.value().shape(), rng);
    Var loss = sum(mul(out, tape.constant(weights)));
    if (backward) tape.backward(loss);
    return loss.value().item();
  };
  for (auto& p : params) p.zero_grad();
  loss_of(true);
  const double eps = 1e-6;
  for (auto& p : params) {
    const Tensor analytic = p.grad;
    auto v = p.value.mutable_values();
    for (std::size_t j = 0; j < v.size(); ++j) {
      const double keep = v[j];
      v[j] = keep + eps;
      const double up = loss_of(false);
      v[j] = keep - eps;
      const double down = loss_of(false);
      v[j] = keep;
      EXPECT_NEAR(analytic[j], (up - down) / (2 * eps), tol) << p.name << "[" << j << "]";
    }
  }
}

TEST(Autodiff, OpGradientsMatchFiniteDifferences) {
  Rng rng(5);
  const Tensor m23 = random_tensor({2, 3}, rng), m34 = random_tensor({3, 4}, rng);
  const Tensor v3 = random_tensor({3}, rng), w3 = random_tensor({3}, rng), v2 = random_tensor({2}, rng);
  const Tensor s = random_tensor({1}, rng, 0.2, 0.9);
  check_op({m23, m34}, [](Tape&, std::vector<Var>& v) { return matmul(v[0], v[1]); });
  check_op({m23, v3}, [](Tape&, std::vector<Var>& v) { return matvec(v[0], v[1]); });
  check_op({v3, w3}, [](Tape&, std::vector<Var>& v) { return add(v[0], v[1]); });
  check_op({v3, w3}, [](Tape&, std::vector<Var>& v) { return sub(v[0], v[1]); });
  check_op({v3, w3}, [](Tape&, std::vector<Var>& v) { return mul(v[0], v[1]); });
  check_op({v3}, [](Tape&, std::vector<Var>& v) { return scale(v[0], -2.5); });
  check_op({s, v3}, [](Tape&, std::vector<Var>& v) { return scale_by(v[0], v[1]); });
  check_op({v3}, [](Tape&, std::vector<Var>& v) { return sigmoid(v[0]); });
  check_op({v3}, [](Tape&, std::vector<Var>& v) { return tanh(v[0]); });
  check_op({v3}, [](Tape&, std::vector<Var>& v) { return one_minus(v[0]); });
  check_op({v3, v2}, [](Tape&, std::vector<Var>& v) { return concat(v[0], v[1]); });
  check_op({v3}, [](Tape&, std::vector<Var>& v) { return element(v[0], 1); });
  check_op({m23}, [](Tape&, std::vector<Var>& v) { return row(v[0], 1); });
  check_op({v3}, [](Tape&, std::vector<Var>& v) { return softmax_temperature(v[0], 0.75); });
  check_op({v3}, [](Tape&, std::vector<Var>& v) { return cross_entropy(v[0], 2); });
  check_op({s}, [](Tape&, std::vector<Var>& v) { return log_clamped(v[0], 1e-12); });
  check_op({v3}, [](Tape&, std::vector<Var>& v) { return sum(v[0]); });
  check_op({v3, w3, v3}, [](Tape&, std::vector<Var>& v) { return add_n(v); });
}

TEST(Autodiff, ReusedNodeAccumulatesGradient) {
  Parameter x("x", Tensor::vector({0.7}));
  x.zero_grad();
  Tape tape;
  Var v = tape.param(x);
  tape.backward(sum(mul(v, mul(v, v))));  // x^3
  EXPECT_NEAR(x.grad[0], 3 * 0.7 * 0.7, 1e-15);
}

TEST(Autodiff, BackwardAccumulatesIntoParameterGrad) {
  Parameter x("x", Tensor::vector({1.0, 2.0}));
  x.zero_grad();
  for (int pass = 0; pass < 2; ++pass) {
    Tape tape;
    tape.backward(sum(scale(tape.param(x), 3.0)));
  }
  EXPECT_EQ(x.grad[0], 6.0);
  EXPECT_EQ(x.grad[1], 6.0);
}

TEST(Autodiff, FrozenLeavesReceiveNoGradient) {
  Parameter a("a", Tensor::vector({1.0, 2.0}));
  Parameter b("b", Tensor::vector({3.0, 4.0}));
  a.zero_grad();
  b.zero_grad();
  Tape tape;
  Var va = tape.param(a, true);
  Var vb = tape.param(b, false);
  EXPECT_TRUE(tape.requires_grad(va));
  EXPECT_FALSE(tape.requires_grad(vb));
  tape.backward(sum(mul(va, vb)));
  EXPECT_EQ(a.grad, Tensor::vector({3.0, 4.0}));
  EXPECT_EQ(b.grad, Tensor::vector({0.0, 0.0}));
}

TEST(Autodiff, LogClampedHasZeroGradientBelowFloor) {
  Parameter x("x", Tensor::vector({1e-20}));
  x.zero_grad();
  Tape tape;
  Var out = log_clamped(tape.param(x), 1e-12);
  EXPECT_NEAR(out.value()[0], std::log(1e-12), 1e-12);
  tape.backward(sum(out));
  EXPECT_EQ(x.grad[0], 0.0);
}

TEST(Autodiff, UsageErrors) {
  Parameter x("x", Tensor::vector({1.0, 2.0}));
  Tape a, b;
  Var va = a.param(x);
  Var vb = b.param(x);
  EXPECT_THROW(add(va, vb), UsageError);
  EXPECT_THROW(a.backward(va), UsageError);
  EXPECT_THROW(add(va, a.constant(Tensor::vector({1.0}))), DimensionError);
  EXPECT_THROW(element(va, 5), IndexError);
  EXPECT_THROW(cross_entropy(va, 2), IndexError);
  EXPECT_THROW(add_n(std::span<const Var>{}), UsageError);
}

TEST(Optim, SgdStepIsExactAndZeroesGrads) {
  Parameter p("p", Tensor::vector({1.0, -2.0}));
  p.grad = Tensor::vector({0.5, 0.25});
  std::vector<Parameter*> ps{&p};
  sgd_step(ps, 0.1);
  EXPECT_EQ(p.value[0], 1.0 - 0.1 * 0.5);
  EXPECT_EQ(p.value[1], -2.0 - 0.1 * 0.25);
  EXPECT_EQ(p.grad, Tensor::vector({0.0, 0.0}));
}

TEST(Optim, SgdRejectsBadLearningRateAndDivergence) {
  Parameter p("p", Tensor::vector({1.0}));
  p.grad = Tensor::vector({1.0});
  std::vector<Parameter*> ps{&p};
  EXPECT_THROW(sgd_step(ps, 0.0), ParameterError);
  EXPECT_THROW(sgd_step(ps, -1.0), ParameterError);
  p.grad = Tensor::vector({1e308});
  EXPECT_THROW(sgd_step(ps, 1e10), NumericError);
}

TEST(Optim, ClipGradNormRescalesJointNorm) {
  Parameter a("a", Tensor::vector({3.0}));
  Parameter b("b", Tensor::vector({4.0}));
  a.grad = Tensor::vector({3.0});
  b.grad = Tensor::vector({4.0});
  std::vector<Parameter*> ps{&a, &b};
  EXPECT_DOUBLE_EQ(clip_grad_norm(ps, 1.0), 5.0);
  EXPECT_NEAR(a.grad[0], 0.6, 1e-15);
  EXPECT_NEAR(b.grad[0], 0.8, 1e-15);
  EXPECT_DOUBLE_EQ(clip_grad_norm(ps, 10.0), 1.0);
  EXPECT_NEAR(a.grad[0], 0.6, 1e-15);
  EXPECT_THROW(clip_grad_norm(ps, 0.0), ParameterError);
}

}  // namespace
}  // namespace dynroute
