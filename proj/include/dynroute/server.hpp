// Copyright (c) 2026, The dynroute Authors
// SPDX-License-Identifier: Apache-2.0
//
// Server round loop: sample k clients, train them (optionally in parallel),
// average their returned global models weighted by training-set size.
//
// Every random stream is keyed by coordinates, not by call order:
//   sampling of round t        derive_seed(seed, "sample", {t})
//   client c in round t        derive_seed(seed, "client", {t, c})
//   eval sampling of round t   derive_seed(seed, "eval-sample", {t})
// so the schedule is identical across variants and worker counts.

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "dynroute/client.hpp"
#include "dynroute/metrics.hpp"
#include "dynroute/model.hpp"
#include "dynroute/random.hpp"

namespace dynroute {

enum class FailurePolicy : std::uint8_t { kFailRound, kDropClient };

std::string to_string(FailurePolicy p);
FailurePolicy parse_failure_policy(std::string_view s);

struct FederationConfig {
  std::size_t rounds = 50;
  std::size_t clients_per_round = 10;
  std::vector<std::uint32_t> population;       // training client ids
  std::vector<std::uint32_t> eval_population;  // periodic evaluation client ids
  std::size_t eval_every = 0;                  // 0 = no periodic evaluation
  std::size_t eval_clients = 10;
  std::size_t workers = 1;
  std::size_t checkpoint_every = 0;            // 0 = final checkpoint only
  FailurePolicy failure_policy = FailurePolicy::kDropClient;
  std::uint64_t seed = 0;

  void validate() const;
};

struct RoundReport {
  std::size_t round = 0;
  std::vector<std::uint32_t> sampled;  // in sampling order
  std::vector<std::uint32_t> merged;   // ids aggregated, ascending
  std::vector<std::size_t> n;          // per merged client
  std::size_t total_n = 0;
  std::vector<std::uint32_t> dropped;
  double train_loss = 0.0;       // n-weighted mean over merged clients
  double train_accuracy = 0.0;   // n-weighted mean over merged clients
  double train_mean_r_global = 0.0;
  std::optional<EvalSummary> eval;
  double wall_ms = 0.0;
};

/// k distinct ids drawn uniformly without replacement, in random order.
std::vector<std::uint32_t> sample_clients(std::span<const std::uint32_t> population, std::size_t k, Rng& rng);

/// Parameter-wise mean weighted by n / sum(n), compensated summation in update order.
GlobalModel aggregate_fedavg(std::span<const ClientUpdate> updates);

using ClientProvider = std::function<std::shared_ptr<const Client>(std::uint32_t)>;

struct RoundContext {
  ClientProvider clients;
  TrainHyper hyper;
  Variant variant = Variant::kFlow;
  FederationConfig federation;
  EvalOptions eval;  // seed is overridden per round
};

struct RoundResult {
  GlobalModel global;
  RoundReport report;
};

/// One server round. `global` is not modified.
RoundResult run_round(const GlobalModel& global, const RoundContext& ctx, std::size_t round_index);

using RoundObserver = std::function<void(const RoundReport&, const GlobalModel&)>;

struct TrainingResult {
  GlobalModel global;
  std::vector<RoundReport> reports;
};

TrainingResult run_training(const GlobalModel& initial, const RoundContext& ctx, const RoundObserver& observer = {});

}  // namespace dynroute
