// Copyright (c) 2026, The dynroute Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include <gtest/gtest.h>

#include "dynroute/errors.hpp"
#include "dynroute/metrics.hpp"
#include "support.hpp"

namespace dynroute {
namespace {

using testing::seq;
using testing::seq_dims;

std::vector<ClientDataset> seq_clients(std::size_t n, std::uint64_t seed) {
  std::vector<ClientDataset> out;
  for (std::uint32_t id = 0; id < n; ++id) {
    Rng rng(derive_seed(seed, "fixture", {id}));
    ClientDataset c;
    c.client_id = id;
    c.kind = TaskKind::kSequence;
    c.train = testing::random_sequences(rng, 5, 6, 3, 7);
    c.valid = testing::random_sequences(rng, 5, 2, 3, 7);
    c.test = testing::random_sequences(rng, 5, 3, 3, 7);
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<const ClientDataset*> pointers(const std::vector<ClientDataset>& v) {
  std::vector<const ClientDataset*> out;
  for (const auto& c : v) out.push_back(&c);
  return out;
}

TrainHyper hyper() {
  TrainHyper h = TrainHyper::sequence_defaults();
  h.batch_size = 4;
  return h;
}

TEST(Kl, HandCalculation) {
  const std::vector<double> pl{0.8, 0.5}, pg{0.4, 0.5};
  const auto k = kl_from_probs(pl, pg);
  EXPECT_NEAR(k.value, 0.8 * std::log(2.0), 1e-15);
  EXPECT_FALSE(k.clamped);

  const std::vector<double> ql{0.1}, qg{0.9};
  const auto neg = kl_from_probs(ql, qg);
  EXPECT_NEAR(neg.raw, 0.1 * std::log(0.1 / 0.9), 1e-15);
  EXPECT_EQ(neg.value, 0.0);
  EXPECT_TRUE(neg.clamped);

  const std::vector<double> zl{0.0}, zg{0.5};
  EXPECT_NEAR(kl_from_probs(zl, zg).raw, 1e-12 * std::log(1e-12 / 0.5), 1e-20);
  EXPECT_THROW(kl_from_probs(pl, ql), DimensionError);
}

TEST(Routing, RecountFromScoredRun) {
  ScoredRun run;
  run.r_local = {{0.2, 0.8, 0.6}, {0.4, 0.6}, {1.0}};
  run.routes = {{Route::kGlobal, Route::kLocal, Route::kLocal},
                {Route::kGlobal, Route::kLocal},
                {Route::kLocal}};
  const auto s = routing_stats_from(run);
  ASSERT_EQ(s.mean_r_local.size(), 3u);
  EXPECT_NEAR(s.mean_r_local[0], (0.2 + 0.4 + 1.0) / 3.0, 1e-15);
  EXPECT_NEAR(s.mean_r_local[1], 0.7, 1e-15);
  EXPECT_NEAR(s.mean_r_local[2], 0.6, 1e-15);
  const double m0 = (0.2 + 0.4 + 1.0) / 3.0;
  EXPECT_NEAR(s.std_r_local[0],
              std::sqrt(((0.2 - m0) * (0.2 - m0) + (0.4 - m0) * (0.4 - m0) + (1.0 - m0) * (1.0 - m0)) / 3.0), 1e-15);
  EXPECT_NEAR(s.std_r_local[1], 0.1, 1e-15);
  EXPECT_EQ(s.count, (std::vector<std::size_t>{3, 2, 1}));
  EXPECT_EQ(s.local_instances, 2u);  // one of two local is a tie: global
  EXPECT_EQ(s.global_instances, 1u);
}

TEST(Routing, ZeroGateGivesHalfEverywhere) {
  const auto g = GlobalModel::init(seq_dims(), 1);
  const auto m = DynamicPersonalizedModel::assemble(g, LocalParams::copy_of(g), RoutingPolicy::zeros(7, 0.75),
                                                    ExecMode::kHard);
  Rng rng(2);
  const auto data = testing::random_sequences(rng, 5, 5, 2, 8);
  const auto s = routing_stats(m, data);
  for (std::size_t t = 0; t < s.mean_r_local.size(); ++t) {
    EXPECT_EQ(s.mean_r_local[t], 0.5);
    EXPECT_EQ(s.std_r_local[t], 0.0);
  }
  EXPECT_EQ(s.local_instances, data.size());
  auto soft = m;
  soft.mode = ExecMode::kSoft;
  EXPECT_THROW(routing_stats(soft, data), UsageError);
}

TEST(Comparison, HandTally) {
  const std::vector<std::uint8_t> p1{1, 1, 0, 0}, l1{1, 0, 1, 1};   // local right 3, missed 2
  const std::vector<std::uint8_t> p2{1, 1, 1}, l2{1, 1, 0};         // local right 2, missed 0
  const std::vector<std::uint8_t> p3{0, 1}, l3{1, 0};               // local right 1, missed 1
  const std::vector<ClientComparison> rows{compare_predictions(0, p1, l1), compare_predictions(1, p2, l2),
                                           compare_predictions(2, p3, l3)};
  EXPECT_EQ(rows[0].local_correct, 3u);
  EXPECT_EQ(rows[0].local_correct_missed, 2u);
  const auto s = comparison_stats(rows);
  EXPECT_EQ(s.clients, 3u);
  EXPECT_EQ(s.local_correct, 6u);
  EXPECT_EQ(s.local_correct_missed, 3u);
  EXPECT_NEAR(s.i_pct, 50.0, 1e-12);
  EXPECT_NEAR(s.c_pct, 100.0 / 3.0, 1e-12);  // client 2 ties and does not count
  EXPECT_THROW(compare_predictions(0, p1, l2), DimensionError);
}

TEST(Spearman, ValuesTiesAndDegenerateInput) {
  const std::vector<double> x{1, 2, 3, 4}, y{1, 3, 2, 4};
  EXPECT_NEAR(*spearman(x, y), 0.8, 1e-15);
  const std::vector<double> a{1, 1, 2}, b{1, 2, 3};
  EXPECT_NEAR(*spearman(a, b), 1.5 / std::sqrt(3.0), 1e-15);
  const std::vector<double> flat{2, 2, 2};
  EXPECT_FALSE(spearman(flat, b).has_value());
  const std::vector<double> nine(9, 1.0);
  EXPECT_THROW(divergence_routing_correlation(nine, nine), MetricError);
  std::vector<double> u(10), v(10);
  for (int i = 0; i < 10; ++i) u[i] = i, v[i] = -i;
  EXPECT_NEAR(*divergence_routing_correlation(u, v), -1.0, 1e-15);
}

TEST(Accuracy, EmptyInputIsAnError) {
  const auto m = testing::random_model(seq_dims(), 3, ExecMode::kHard);
  EXPECT_THROW(accuracy(m, std::vector<Instance>{}), MetricError);
  EXPECT_THROW(accuracy_of(std::vector<std::uint8_t>{}), MetricError);
  EXPECT_THROW(accuracy(m, std::vector<Instance>{seq({1})}), MetricError);
  EXPECT_NEAR(accuracy_of(std::vector<std::uint8_t>{1, 0, 1, 1}), 0.75, 1e-15);
}

TEST(Evaluate, SoftInferenceDoublesEncoderCalls) {
  const auto clients = seq_clients(4, 1);
  const auto g = GlobalModel::init(seq_dims(), 2);
  EvalOptions opts;
  opts.soft_inference = true;
  const auto s = evaluate_clients(g, pointers(clients), hyper(), opts);
  ASSERT_TRUE(s.acc_soft.has_value());
  EXPECT_GT(s.hard_encoder_calls, 0u);
  EXPECT_EQ(2 * s.hard_encoder_calls, s.soft_encoder_calls);
  std::size_t positions = 0;
  for (const auto& c : clients)
    for (const auto& inst : c.test) positions += inst.tokens.size() - 1;
  EXPECT_EQ(s.hard_encoder_calls, positions);
  opts.soft_inference = false;
  EXPECT_FALSE(evaluate_clients(g, pointers(clients), hyper(), opts).acc_soft.has_value());
}

TEST(Evaluate, NoLocalTrainingMakesFlowEqualGlobal) {
  const auto clients = seq_clients(3, 4);
  const auto g = GlobalModel::init(seq_dims(), 5);
  TrainHyper h = hyper();
  h.local_epochs = 0;
  const auto s = evaluate_clients(g, pointers(clients), h, EvalOptions{});
  EXPECT_EQ(s.acc_flow, s.acc_global);
  EXPECT_EQ(s.acc_local, s.acc_global);
  for (const auto& c : s.clients) EXPECT_EQ(c.kl.value, 0.0);
}

TEST(Evaluate, DeterministicWithCorrelationsAndDivergence) {
  const auto clients = seq_clients(10, 6);
  const auto g = GlobalModel::init(seq_dims(), 7);
  EvalOptions opts;
  opts.seed = 3;
  const DivergenceLookup truth = [](std::uint32_t id) { return std::optional<double>(id * 0.1); };
  const auto a = evaluate_clients(g, pointers(clients), hyper(), opts, truth);
  opts.workers = 3;
  const auto b = evaluate_clients(g, pointers(clients), hyper(), opts, truth);
  EXPECT_EQ(to_json(a), to_json(b));
  EXPECT_EQ(a.clients[4].true_divergence, 0.4);
  for (const auto& c : a.clients) {
    EXPECT_EQ(c.local_instances + c.global_instances, c.instances);
    EXPECT_LE(c.flow_missed, c.local_correct);
  }
  EXPECT_THROW(evaluate_clients(g, std::vector<const ClientDataset*>{}, hyper(), opts), MetricError);
}

TEST(EvalSplit, ParseRoundTrip) {
  for (auto s : {EvalSplit::kTrain, EvalSplit::kValid, EvalSplit::kTest}) EXPECT_EQ(parse_eval_split(to_string(s)), s);
  EXPECT_THROW(parse_eval_split("holdout"), ConfigError);
}

}  // namespace
}  // namespace dynroute
