// Copyright (c) 2026, The dynroute Authors
// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration (YAML). Every key is optional and has a default;
// unknown keys are rejected with their line number. See README for the schema.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "dynroute/client.hpp"
#include "dynroute/data.hpp"
#include "dynroute/metrics.hpp"
#include "dynroute/model.hpp"
#include "dynroute/server.hpp"

namespace YAML {
class Node;
}

namespace dynroute {

enum class DataSource : std::uint8_t { kSynthetic, kFile };

struct DataConfig {
  DataSource source = DataSource::kSynthetic;
  std::string path;                    // dataset file when source == file
  std::optional<std::uint64_t> seed;   // unset: each run seed also seeds its data
  SequenceTaskSpec sequence;
  ClassifyTaskSpec classify;
};

struct ModelConfig {
  CellKind cell = CellKind::kGru;
  std::size_t embed_dim = 16;
  std::size_t hidden_dim = 24;
  std::vector<std::size_t> encoder_hidden;
  std::size_t decoder_hidden = 0;
  std::size_t max_seq_len = 0;  // 0 = longest generated sequence
};

struct FederationSettings {
  std::size_t rounds = 50;
  std::size_t clients_per_round = 10;
  std::size_t holdout_clients = 0;  // highest ids never train; evaluated as newly joined clients
  std::size_t eval_every = 0;
  std::size_t eval_clients = 10;
  std::size_t checkpoint_every = 0;
  FailurePolicy failure_policy = FailurePolicy::kDropClient;
};

struct EvalSettings {
  EvalSplit split = EvalSplit::kTest;
  EvalSplit kl_split = EvalSplit::kTrain;
  bool soft_inference = false;
  std::size_t clients = 0;  // final evaluation: 0 = every eval-population client
};

enum class SweepAxis : std::uint8_t { kGamma, kLocalEpochs, kTau, kLambda };
std::string to_string(SweepAxis a);
SweepAxis parse_sweep_axis(std::string_view s);

struct SweepSettings {
  std::optional<SweepAxis> axis;
  std::vector<double> values;
};

struct ExperimentConfig {
  std::string name = "experiment";
  TaskKind task = TaskKind::kSequence;
  Variant variant = Variant::kFlow;
  std::vector<std::uint64_t> seeds{0};
  std::string output_dir = "runs";
  std::size_t workers = 1;
  DataConfig data;
  ModelConfig model;
  TrainHyper train = TrainHyper::sequence_defaults();
  FederationSettings federation;
  EvalSettings eval;
  SweepSettings sweep;

  /// Model dimensions implied by the task and data spec.
  ModelDims dims() const;
  std::uint64_t data_seed(std::uint64_t run_seed) const { return data.seed.value_or(run_seed); }
  void validate() const;
};

/// key.path=value override; value is parsed as YAML.
struct Override {
  std::string path;
  std::string value;
};

Override parse_override(const std::string& text);

ExperimentConfig parse_config(const YAML::Node& root);
ExperimentConfig parse_config_text(const std::string& text, const std::vector<Override>& overrides = {});
ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<Override>& overrides = {});

/// Complete snapshot including defaults; parse_config_text(to_yaml(c)) == c.
std::string to_yaml(const ExperimentConfig& config);
nlohmann::json to_json(const ExperimentConfig& config);

/// Applies one sweep value to a copy of the config.
ExperimentConfig with_axis_value(const ExperimentConfig& config, SweepAxis axis, double value);

}  // namespace dynroute
