// Copyright (c) 2026, The dynroute Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include <gtest/gtest.h>

#include "dynroute/checkpoint.hpp"
#include "dynroute/errors.hpp"
#include "dynroute/model.hpp"
#include "support.hpp"

namespace dynroute {
namespace {

using testing::cls_dims;
using testing::seq_dims;

std::vector<double> embed(const DynamicPersonalizedModel& m, std::uint32_t tok) {
  const Tensor& t = m.global.embedding->table.value;
  std::vector<double> x(t.cols());
  for (std::size_t c = 0; c < x.size(); ++c) x[c] = t.at(tok, c);
  return x;
}

TEST(ModelDims, ValidateRejectsInconsistentShapes) {
  auto d = seq_dims();
  d.num_classes = 7;
  EXPECT_THROW(d.validate(), ConfigError);
  d = seq_dims();
  d.hidden_dim = 0;
  EXPECT_THROW(d.validate(), ConfigError);
  auto c = cls_dims();
  c.input_dim = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_EQ(seq_dims().gate_input_dim(), 3u + 4u);
  EXPECT_EQ(cls_dims().gate_input_dim(), 4u);
}

TEST(GlobalModel, InitIsSeededAndOrdered) {
  const auto a = GlobalModel::init(seq_dims(), 1);
  const auto b = GlobalModel::init(seq_dims(), 1);
  const auto c = GlobalModel::init(seq_dims(), 2);
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_NE(a.hash(), c.hash());
  const auto ps = a.parameters();
  ASSERT_EQ(ps.size(), 6u + 2u + 1u);
  EXPECT_EQ(ps.front()->name, "encoder.z.w");
  EXPECT_EQ(ps.back()->name, "embedding");
  EXPECT_EQ(a.tensor_count(), ps.size());
}

TEST(GlobalModel, ParameterCountsMatchLayerArithmetic) {
  const std::size_t V = 5, m = 3, d = 4;
  const auto gru = GlobalModel::init(seq_dims(CellKind::kGru, V, m, d), 0);
  EXPECT_EQ(gru.parameter_count(), 3 * (d * (m + d) + d) + (V * d + V) + V * m);
  const auto rnn = GlobalModel::init(seq_dims(CellKind::kRnn, V, m, d), 0);
  EXPECT_EQ(rnn.parameter_count(), (d * (m + d) + d) + (V * d + V) + V * m);
  const auto ff = GlobalModel::init(cls_dims(4, 3, 2, {5}, 6), 0);
  EXPECT_EQ(ff.parameter_count(), (5 * 4 + 5) + (3 * 5 + 3) + (6 * 3 + 6) + (2 * 6 + 2));

  auto dpm = testing::random_model(seq_dims(CellKind::kGru, V, m, d), 3, ExecMode::kSoft);
  const auto counts = param_counts(dpm);
  EXPECT_EQ(counts.global, gru.parameter_count());
  EXPECT_EQ(counts.local, 3 * (d * (m + d) + d));
  EXPECT_EQ(counts.policy, 2 * (m + d) + 2);
}

TEST(RoutingPolicy, GateMatchesScalarOracle) {
  const auto m = testing::random_model(seq_dims(), 4, ExecMode::kSoft, 0.6);
  const std::vector<double> x{0.2, -0.4, 0.9}, h{0.1, 0.0, -0.3, 0.5};
  const Tensor r = route_probs_recurrent(m.policy, Tensor::vector(x), Tensor::vector(h));
  const auto& w = m.policy.weight.value;
  const auto& b = m.policy.bias.value;
  const auto in = testing::cat(x, h);
  double z0 = b[0], z1 = b[1];
  for (std::size_t c = 0; c < in.size(); ++c) {
    z0 += w.at(0, c) * in[c];
    z1 += w.at(1, c) * in[c];
  }
  const double r1 = 1.0 / (1.0 + std::exp((z1 - z0) / 0.6));
  EXPECT_NEAR(r[0], r1, 1e-15);
  EXPECT_NEAR(r[1], 1.0 - r1, 1e-15);
  EXPECT_THROW(route_probs_recurrent(m.policy, Tensor::vector({1.0}), Tensor::vector(h)), DimensionError);
}

TEST(DynamicModel, BlendedStepMatchesHandWrittenCells) {
  for (auto cell : {CellKind::kGru, CellKind::kRnn}) {
    const auto m = testing::random_model(seq_dims(cell), 5, ExecMode::kSoft);
    const std::vector<double> x = embed(m, 2), h{0.3, -0.2, 0.1, 0.4};
    const auto res = blended_step(m, Tensor::vector(h), Tensor::vector(x));
    const auto r = testing::vec(res.probs);
    const auto hg = testing::oracle_cell(m.global.encoder, x, h);
    const auto hl = testing::oracle_cell(m.local.encoder, x, h);
    for (std::size_t i = 0; i < h.size(); ++i) EXPECT_NEAR(res.out[i], r[0] * hg[i] + r[1] * hl[i], 1e-14);
  }
}

TEST(DynamicModel, BlendedEncodeMatchesOracle) {
  const auto m = testing::random_model(cls_dims(4, 3, 3, {5}), 6, ExecMode::kSoft);
  const std::vector<double> x{0.5, -1.0, 0.25, 2.0};
  const auto res = blended_encode(m, Tensor::vector(x));
  const auto fg = testing::oracle_feedforward(m.global.encoder, x);
  const auto fl = testing::oracle_feedforward(m.local.encoder, x);
  for (std::size_t i = 0; i < fg.size(); ++i) EXPECT_NEAR(res.out[i], res.probs[0] * fg[i] + res.probs[1] * fl[i], 1e-14);
}

TEST(DynamicModel, HardStepThresholdsOnGlobalProbability) {
  auto m = testing::random_model(seq_dims(), 7, ExecMode::kHard);
  const Tensor h = Tensor::vector({0.1, 0.2, -0.1, 0.0});
  const Tensor x = Tensor::vector(embed(m, 1));
  const auto res = hard_step(m, h, x);
  const Route want = res.probs[0] > 0.5 ? Route::kGlobal : Route::kLocal;
  EXPECT_EQ(res.route, want);
  const auto& enc = want == Route::kGlobal ? m.global.encoder : m.local.encoder;
  const auto oracle = testing::oracle_cell(enc, testing::vec(x), testing::vec(h));
  for (std::size_t i = 0; i < oracle.size(); ++i) EXPECT_NEAR(res.out[i], oracle[i], 1e-14);

  m.policy = RoutingPolicy::zeros(m.global.dims.gate_input_dim(), 0.75);
  EXPECT_EQ(hard_step(m, h, x).route, Route::kLocal);  // r = (0.5, 0.5): tie goes local
  EXPECT_THROW(blended_step(m, h, x), UsageError);
}

TEST(DynamicModel, CountersTrackEncoderEvaluations) {
  auto soft = testing::random_model(seq_dims(), 8, ExecMode::kSoft);
  auto hard = soft;
  hard.mode = ExecMode::kHard;
  const std::vector<std::uint32_t> tokens{0, 1, 2, 3, 4, 0};
  forward_sequence(soft, tokens, ExecMode::kSoft);
  const auto out = forward_sequence(hard, tokens, ExecMode::kHard);
  EXPECT_EQ(soft.counters.total(), 2 * tokens.size());
  EXPECT_EQ(soft.counters.global_calls, tokens.size());
  EXPECT_EQ(hard.counters.total(), tokens.size());
  std::size_t local = 0;
  for (auto r : out.routes) local += r == Route::kLocal;
  EXPECT_EQ(hard.counters.local_calls, local);
}

TEST(DynamicModel, ForcedRoutesOverrideGate) {
  auto m = testing::random_model(cls_dims(), 9, ExecMode::kHard);
  m.forced_routes = std::array<double, 2>{0.0, 1.0};
  const Tensor x = Tensor::vector({1.0, 0.0, -1.0, 0.5});
  const auto out = forward_instance(m, x, ExecMode::kHard);
  EXPECT_EQ(out.route, Route::kLocal);
  EXPECT_EQ(out.r_global, 0.0);
}

TEST(DynamicModel, SequenceLimitsAndVocabulary) {
  auto dims = seq_dims();
  dims.max_seq_len = 3;
  auto m = DynamicPersonalizedModel::assemble(GlobalModel::init(dims, 1), LocalParams::copy_of(GlobalModel::init(dims, 1)),
                                              RoutingPolicy::zeros(dims.gate_input_dim(), 1.0), ExecMode::kSoft);
  const std::vector<std::uint32_t> too_long{0, 1, 2, 3}, oov{0, 9};
  EXPECT_THROW(forward_sequence(m, too_long, ExecMode::kSoft), DimensionError);
  EXPECT_THROW(forward_sequence(m, oov, ExecMode::kSoft), IndexError);
  EXPECT_THROW(forward_sequence(m, std::span<const std::uint32_t>{}, ExecMode::kSoft), DimensionError);
}

TEST(DynamicModel, AssembleRejectsMismatchedParts) {
  const auto g = GlobalModel::init(seq_dims(), 1);
  const auto other = GlobalModel::init(seq_dims(CellKind::kRnn), 1);
  EXPECT_THROW(DynamicPersonalizedModel::assemble(g, LocalParams::copy_of(other), RoutingPolicy::zeros(7, 1.0),
                                                  ExecMode::kSoft),
               DimensionError);
  EXPECT_THROW(DynamicPersonalizedModel::assemble(g, LocalParams::copy_of(g), RoutingPolicy::zeros(5, 1.0),
                                                  ExecMode::kSoft),
               DimensionError);
  EXPECT_THROW(RoutingPolicy::zeros(3, 0.0), ParameterError);
}

TEST(Loss, RegularizedLossMatchesDefinition) {
  const std::vector<double> ce{1.0, 2.0, 0.5}, r{0.5, 0.9, 1e-20};
  const double want = (1.0 + 2.0 + 0.5 - 0.1 * (std::log(0.5) + std::log(0.9) + std::log(1e-12))) / 3.0;
  EXPECT_NEAR(regularized_loss(ce, r, 0.1), want, 1e-14);
  EXPECT_NEAR(regularized_loss(ce, r, 0.0), 3.5 / 3.0, 1e-15);
  EXPECT_THROW(regularized_loss(std::vector<double>{}, std::vector<double>{}, 0.0), UsageError);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  for (const auto& dims : {seq_dims(), seq_dims(CellKind::kRnn), cls_dims(4, 3, 3, {5}, 6)}) {
    const auto g = GlobalModel::init(dims, 42);
    const auto dir = testing::scratch_dir("ckpt");
    save_checkpoint(g, dir / "m.json");
    const auto back = load_checkpoint(dir / "m.json");
    EXPECT_EQ(back.dims, g.dims);
    EXPECT_EQ(back.hash(), g.hash());
    const auto a = g.parameters();
    const auto b = back.parameters();
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i]->value, b[i]->value);
  }
}

TEST(Checkpoint, RejectsMismatchedTensors) {
  auto j = model_to_json(GlobalModel::init(seq_dims(), 1));
  auto bad = j;
  bad["tensors"][0]["name"] = "encoder.q.w";
  EXPECT_THROW(model_from_json(bad), FormatError);
  bad = j;
  bad["tensors"][0]["shape"] = {1, 1};
  EXPECT_THROW(model_from_json(bad), FormatError);
  bad = j;
  bad["tensors"].erase(0);
  EXPECT_THROW(model_from_json(bad), FormatError);
  bad = j;
  bad["format"] = "other";
  EXPECT_THROW(model_from_json(bad), FormatError);
  EXPECT_THROW(load_checkpoint("/nonexistent/ckpt.json"), FormatError);
}

}  // namespace
}  // namespace dynroute
