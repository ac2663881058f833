// Copyright (c) 2026, The dynroute Authors
// SPDX-License-Identifier: Apache-2.0

#include "dynroute/server.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <set>

#include <spdlog/spdlog.h>

#include "dynroute/errors.hpp"
#include "dynroute/parallel.hpp"

namespace dynroute {

std::string to_string(FailurePolicy p) { return p == FailurePolicy::kFailRound ? "fail_round" : "drop_client"; }

FailurePolicy parse_failure_policy(std::string_view s) {
  if (s == "fail_round") return FailurePolicy::kFailRound;
  if (s == "drop_client") return FailurePolicy::kDropClient;
  throw ConfigError("unknown failure policy '" + std::string(s) + "' (expected fail_round|drop_client)");
}

void FederationConfig::validate() const {
  if (population.empty()) throw ConfigError("federation has an empty client population");
  if (clients_per_round == 0) throw ConfigError("federation.clients_per_round must be at least 1");
  if (clients_per_round > population.size()) {
    throw ConfigError("federation.clients_per_round (" + std::to_string(clients_per_round) +
                      ") exceeds the population (" + std::to_string(population.size()) + ")");
  }
  if (std::set<std::uint32_t>(population.begin(), population.end()).size() != population.size())
    throw ConfigError("federation population has duplicate ids");
  if (eval_every > 0 && (eval_population.empty() || eval_clients == 0))
    throw ConfigError("periodic evaluation needs a non-empty eval population and eval_clients >= 1");
  if (workers == 0) throw ConfigError("workers must be at least 1");
}

std::vector<std::uint32_t> sample_clients(std::span<const std::uint32_t> population, std::size_t k, Rng& rng) {
  if (k > population.size()) {
    throw ConfigError("cannot sample " + std::to_string(k) + " clients from a population of " +
                      std::to_string(population.size()));
  }
  std::vector<std::uint32_t> ids(population.begin(), population.end());
  // Partial Fisher-Yates: the first k slots are a uniform k-subset in random order.
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, ids.size() - 1);
    std::swap(ids[i], ids[pick(rng)]);
  }
  ids.resize(k);
  return ids;
}

namespace {

struct Neumaier {
  double sum = 0.0;
  double comp = 0.0;

  void add(double x) {
    const double t = sum + x;
    if (std::fabs(sum) >= std::fabs(x)) {
      comp += (sum - t) + x;
    } else {
      comp += (x - t) + sum;
    }
    sum = t;
  }
  double value() const { return sum + comp; }
};

}  // namespace

GlobalModel aggregate_fedavg(std::span<const ClientUpdate> updates) {
  if (updates.empty()) throw RoundError("aggregation over no client updates");
  std::size_t total = 0;
  for (const auto& u : updates) total += u.n;
  if (total == 0) throw RoundError("aggregation with zero total instance count");

  GlobalModel out = updates.front().global_model;
  auto dst = out.parameters();
  std::vector<std::vector<const Parameter*>> src;
  src.reserve(updates.size());
  for (const auto& u : updates) {
    src.push_back(u.global_model.parameters());
    if (src.back().size() != dst.size())
      throw ProtocolError("client update carries " + std::to_string(src.back().size()) + " tensors, expected " +
                          std::to_string(dst.size()));
    for (std::size_t p = 0; p < dst.size(); ++p) {
      if (src.back()[p]->name != dst[p]->name || !src.back()[p]->value.same_shape(dst[p]->value))
        throw ProtocolError("client update tensor " + src.back()[p]->name + " does not match " + dst[p]->name);
    }
  }

  const double n_total = static_cast<double>(total);
  for (std::size_t p = 0; p < dst.size(); ++p) {
    auto values = dst[p]->value.mutable_values();
    for (std::size_t j = 0; j < values.size(); ++j) {
      Neumaier acc;
      double lo = src[0][p]->value[j], hi = lo;
      for (std::size_t u = 0; u < updates.size(); ++u) {
        const double x = src[u][p]->value[j];
        lo = std::min(lo, x);
        hi = std::max(hi, x);
        acc.add(static_cast<double>(updates[u].n) * x);
      }
      // A weighted mean lies in [lo, hi]; clamping only removes rounding
      // excursions and makes equal inputs (and a single update) exact.
      values[j] = std::clamp(acc.value() / n_total, lo, hi);
    }
    dst[p]->zero_grad();
  }
  return out;
}

RoundResult run_round(const GlobalModel& global, const RoundContext& ctx, std::size_t round_index) {
  const auto start = std::chrono::steady_clock::now();
  const auto& fed = ctx.federation;
  fed.validate();

  RoundReport report;
  report.round = round_index;
  Rng sample_rng(derive_seed(fed.seed, "sample", {round_index}));
  report.sampled = sample_clients(fed.population, fed.clients_per_round, sample_rng);

  const std::size_t k = report.sampled.size();
  std::vector<std::optional<ClientUpdate>> updates(k);
  std::vector<TrainStats> stats(k);
  const auto errors = parallel_for(k, fed.workers, [&](std::size_t i) {
    const std::uint32_t id = report.sampled[i];
    const auto client = ctx.clients(id);
    if (!client) throw UsageError("no client with id " + std::to_string(id));
    updates[i] = client->train(global, ctx.hyper, derive_seed(fed.seed, "client", {round_index, id}), ctx.variant,
                               &stats[i]);
  });

  std::vector<std::size_t> ok;
  for (std::size_t i = 0; i < k; ++i) {
    if (!errors[i]) {
      ok.push_back(i);
      continue;
    }
    std::string what = "unknown error";
    try {
      std::rethrow_exception(errors[i]);
    } catch (const std::exception& e) {
      what = e.what();
    } catch (...) {
    }
    if (fed.failure_policy == FailurePolicy::kFailRound) {
      throw RoundError("round " + std::to_string(round_index) + ": client " + std::to_string(report.sampled[i]) +
                       " failed: " + what);
    }
    spdlog::warn("round {}: dropping client {}: {}", round_index, report.sampled[i], what);
    report.dropped.push_back(report.sampled[i]);
  }
  if (ok.empty()) throw RoundError("round " + std::to_string(round_index) + ": every sampled client failed");

  // Merge in client-id order so the aggregate never depends on completion order.
  std::sort(ok.begin(), ok.end(), [&](std::size_t a, std::size_t b) { return report.sampled[a] < report.sampled[b]; });
  std::vector<ClientUpdate> merged;
  merged.reserve(ok.size());
  for (std::size_t i : ok) {
    report.merged.push_back(report.sampled[i]);
    report.n.push_back(updates[i]->n);
    report.total_n += updates[i]->n;
    merged.push_back(std::move(*updates[i]));
  }
  RoundResult result{aggregate_fedavg(merged), {}};

  const double total = static_cast<double>(report.total_n);
  for (std::size_t j = 0; j < ok.size(); ++j) {
    const double w = static_cast<double>(report.n[j]) / total;
    const TrainStats& s = stats[ok[j]];
    report.train_loss += w * s.global_loss;
    report.train_accuracy += w * s.train_accuracy;
    report.train_mean_r_global += w * s.mean_r_global;
  }

  if (fed.eval_every > 0 && (round_index + 1) % fed.eval_every == 0) {
    Rng eval_rng(derive_seed(fed.seed, "eval-sample", {round_index}));
    const auto ids =
        sample_clients(fed.eval_population, std::min(fed.eval_clients, fed.eval_population.size()), eval_rng);
    std::vector<std::shared_ptr<const Client>> holders;
    std::vector<const ClientDataset*> data;
    for (auto id : ids) {
      holders.push_back(ctx.clients(id));
      if (!holders.back()) throw UsageError("no eval client with id " + std::to_string(id));
      data.push_back(&holders.back()->data());
    }
    EvalOptions opts = ctx.eval;
    opts.seed = derive_seed(fed.seed, "eval", {round_index});
    opts.workers = fed.workers;
    report.eval = evaluate_clients(result.global, data, ctx.hyper, opts);
  }

  report.wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  result.report = std::move(report);
  return result;
}

TrainingResult run_training(const GlobalModel& initial, const RoundContext& ctx, const RoundObserver& observer) {
  ctx.federation.validate();
  ctx.hyper.validate();
  TrainingResult out{initial, {}};
  out.reports.reserve(ctx.federation.rounds);
  for (std::size_t r = 0; r < ctx.federation.rounds; ++r) {
    RoundResult step = run_round(out.global, ctx, r);
    out.global = std::move(step.global);
    if (observer) observer(step.report, out.global);
    out.reports.push_back(std::move(step.report));
  }
  return out;
}

}  // namespace dynroute
