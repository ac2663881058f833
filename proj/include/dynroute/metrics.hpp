// Copyright (c) 2026, The dynroute Authors
// SPDX-License-Identifier: Apache-2.0
//
// Evaluation metrics.
//
// Scored positions: a sequence of length T contributes T - 1 next-token
// predictions (inputs tokens[0..T-2]); a labelled instance contributes one.
// Routing statistics use the decisions made at the same positions.

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"

#include "dynroute/client.hpp"
#include "dynroute/data.hpp"
#include "dynroute/model.hpp"

namespace dynroute {

/// Per-position outcome of running a model over instances.
struct ScoredRun {
  std::vector<std::uint8_t> correct;         // flattened over all scored positions
  std::vector<double> p_true;                // probability assigned to the true label
  std::vector<std::vector<double>> r_local;  // per instance, per position
  std::vector<std::vector<Route>> routes;    // per instance, per position
};

ScoredRun score_instances(const DynamicPersonalizedModel& model, std::span<const Instance> instances);

/// Fraction of correct scored predictions. Empty input (or no scored position) throws MetricError.
double accuracy(const DynamicPersonalizedModel& model, std::span<const Instance> instances);
double accuracy_of(std::span<const std::uint8_t> correct);

struct KlEstimate {
  double value = 0.0;  // max(raw, 0)
  double raw = 0.0;
  bool clamped = false;
};

/// sum_i p_l,i * log(p_l,i / p_g,i) with both probabilities clamped to [1e-12, 1].
KlEstimate kl_from_probs(std::span<const double> p_local, std::span<const double> p_global);
/// Local route only vs global route only of the same personalized model.
KlEstimate kl_estimate(const DynamicPersonalizedModel& model, std::span<const Instance> instances);

struct RoutingStats {
  std::vector<double> mean_r_local;  // per timestep (index 0 = first decision)
  std::vector<double> std_r_local;   // population standard deviation
  std::vector<std::size_t> count;    // instances contributing to each timestep
  std::size_t local_instances = 0;
  std::size_t global_instances = 0;
};

/// An instance counts as locally routed when more than half of its hard decisions are local.
RoutingStats routing_stats(const DynamicPersonalizedModel& model, std::span<const Instance> instances);
RoutingStats routing_stats_from(const ScoredRun& run);

struct ClientComparison {
  std::uint32_t client_id = 0;
  double acc_personalized = 0.0;
  double acc_local = 0.0;
  std::size_t local_correct = 0;          // positions the local model gets right
  std::size_t local_correct_missed = 0;   // ... that the personalized model gets wrong
};

struct ComparisonStats {
  double c_pct = 0.0;  // clients with acc_personalized > acc_local (strict)
  double i_pct = 0.0;  // pooled local_correct_missed / local_correct
  std::size_t clients = 0;
  std::size_t local_correct = 0;
  std::size_t local_correct_missed = 0;
};

ClientComparison compare_predictions(std::uint32_t client_id, std::span<const std::uint8_t> personalized,
                                     std::span<const std::uint8_t> local);
ComparisonStats comparison_stats(std::span<const ClientComparison> clients);
/// Builds each client's personalized model by pre-inference and compares it to its local route on the test split.
ComparisonStats comparison_stats(std::span<const ClientDataset* const> eval_clients, const GlobalModel& global,
                                 const TrainHyper& hyper, std::uint64_t seed);

/// Spearman rank correlation with average ranks for ties; absent when either series is constant.
std::optional<double> spearman(std::span<const double> x, std::span<const double> y);
/// Requires at least 10 clients.
std::optional<double> divergence_routing_correlation(std::span<const double> divergence,
                                                     std::span<const double> local_fraction);

enum class EvalSplit : std::uint8_t { kTrain, kValid, kTest };
std::string to_string(EvalSplit s);
EvalSplit parse_eval_split(std::string_view s);
const std::vector<Instance>& split_of(const ClientDataset& client, EvalSplit split);

struct EvalOptions {
  EvalSplit split = EvalSplit::kTest;
  EvalSplit kl_split = EvalSplit::kTrain;
  bool soft_inference = false;
  std::size_t workers = 1;
  std::uint64_t seed = 0;  // per-client pre-inference seeds derive from it
};

struct ClientEval {
  std::uint32_t client_id = 0;
  std::size_t instances = 0;
  std::size_t predictions = 0;
  double acc_flow = 0.0;
  double acc_global = 0.0;
  double acc_local = 0.0;
  std::optional<double> acc_soft;
  KlEstimate kl;
  std::size_t local_instances = 0;
  std::size_t global_instances = 0;
  double local_fraction = 0.0;
  double mean_r_global = 0.0;  // mean gate probability at the scored positions
  RoutingStats routing;
  std::size_t local_correct = 0;
  std::size_t flow_missed = 0;    // local right, flow wrong
  std::size_t global_missed = 0;  // local right, global route wrong
  std::uint64_t hard_encoder_calls = 0;
  std::uint64_t soft_encoder_calls = 0;
  std::optional<double> true_divergence;
};

struct EvalSummary {
  std::vector<ClientEval> clients;
  double acc_flow = 0.0;  // means of per-client accuracies
  double acc_global = 0.0;
  double acc_local = 0.0;
  std::optional<double> acc_soft;
  double mean_r_global = 0.0;
  ComparisonStats flow_vs_local;
  ComparisonStats global_vs_local;
  std::optional<double> rho_kl_routing;
  std::optional<double> rho_true_routing;
  std::uint64_t hard_encoder_calls = 0;
  std::uint64_t soft_encoder_calls = 0;
};

using DivergenceLookup = std::function<std::optional<double>(std::uint32_t)>;

/// Pre-inference plus flow / global-route / local-route (and optionally soft) evaluation per client.
EvalSummary evaluate_clients(const GlobalModel& global, std::span<const ClientDataset* const> clients,
                             const TrainHyper& hyper, const EvalOptions& options,
                             const DivergenceLookup& true_divergence = {});

nlohmann::json to_json(const EvalSummary& summary, bool include_clients = true);

}  // namespace dynroute
