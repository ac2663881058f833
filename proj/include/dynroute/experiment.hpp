// Copyright (c) 2026, The dynroute Authors
// SPDX-License-Identifier: Apache-2.0
//
// Experiment harness behind the command-line tool.
//
// Run directory layout (<root> = $DYNROUTE_OUTPUT_ROOT or config output_dir):
//
//   <root>/<name>/config.yaml            effective config, every default spelled out
//   <root>/<name>/run.json               per-seed final metrics and their mean
//   <root>/<name>/seed_<s>/manifest.json config, version, seed, sampled ids per round, file paths
//   <root>/<name>/seed_<s>/rounds.csv    one row per round (deterministic columns only)
//   <root>/<name>/seed_<s>/rounds.jsonl  one RoundReport per line, including wall-clock
//   <root>/<name>/seed_<s>/final_eval.json
//   <root>/<name>/seed_<s>/clients.csv   final per-client metrics
//   <root>/<name>/seed_<s>/routing.csv   final per-client, per-timestep routing statistics
//   <root>/<name>/seed_<s>/checkpoints/  round_<t>.json at the configured cadence, final.json

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "dynroute/config.hpp"
#include "dynroute/metrics.hpp"
#include "dynroute/server.hpp"

namespace dynroute {

inline constexpr const char* kVersion = DYNROUTE_VERSION;
inline constexpr const char* kOutputRootEnv = "DYNROUTE_OUTPUT_ROOT";

struct LoadedFederation {
  ExperimentConfig config;  // data spec replaced by the file header when loaded from a file
  std::vector<std::shared_ptr<const ClientDataset>> clients;  // index == client id
  DivergenceLookup true_divergence;                            // empty without a generator spec
};

LoadedFederation load_federation(const ExperimentConfig& config, std::uint64_t run_seed);

/// Training population and final-evaluation population for a federation.
std::vector<std::uint32_t> training_population(const ExperimentConfig& config, std::size_t num_clients);
std::vector<std::uint32_t> final_eval_population(const ExperimentConfig& config, std::size_t num_clients,
                                                 std::uint64_t run_seed);

/// Headline accuracy of a variant: flow, global route, local route, or the plain global model.
double headline_accuracy(const EvalSummary& s, Variant variant);

struct SeedResult {
  std::uint64_t seed = 0;
  GlobalModel model;
  std::vector<RoundReport> reports;
  EvalSummary final_eval;
};

/// Trains and evaluates one seed. Writes the seed directory when dir is non-empty.
SeedResult run_seed(const ExperimentConfig& config, std::uint64_t seed, const std::filesystem::path& dir = {});

std::filesystem::path output_root(const ExperimentConfig& config);

/// Loads a YAML config, or the config embedded in a manifest.json.
ExperimentConfig load_config_or_manifest(const std::filesystem::path& path, const std::vector<Override>& overrides);

std::filesystem::path cmd_run(const ExperimentConfig& config);

/// Pre-inference and hard inference with the given checkpoint on the config's evaluation clients.
nlohmann::json cmd_eval(const ExperimentConfig& config, const std::filesystem::path& checkpoint);

/// One run per axis value (each over all seeds) plus sweep.csv and sweep_summary.csv.
std::filesystem::path cmd_sweep(const ExperimentConfig& config);

struct ExportResult {
  std::vector<std::filesystem::path> written;
  std::vector<std::filesystem::path> missing;
};

/// Tidy CSVs under <dir>/plots/: metrics_long.csv, accuracy.csv, routing_long.csv.
ExportResult cmd_export_plots(const std::filesystem::path& dir);

/// Generates the synthetic federation of the first seed and writes it as a dataset file.
std::filesystem::path cmd_gen_data(const ExperimentConfig& config, const std::filesystem::path& out);

}  // namespace dynroute
