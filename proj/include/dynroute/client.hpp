// Copyright (c) 2026, The dynroute Authors
// SPDX-License-Identifier: Apache-2.0
//
// Per-round client procedure.
//
//   1. split the training data into D_local / D_global
//   2. copy the global encoder and finetune the copy on D_local
//   3. with a freshly initialised gate, alternate per epoch:
//        a pass over D_global updating the gate (global model frozen),
//        a pass over D_global updating the global model (gate frozen)
//   4. return (|train|, global model); the local encoder and gate are dropped
//
// Pre-inference runs the same pipeline without the global-model pass and
// returns the personalized model in hard mode.

#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "dynroute/data.hpp"
#include "dynroute/model.hpp"
#include "dynroute/random.hpp"

namespace dynroute {

enum class Variant : std::uint8_t { kFlow, kGlobalOnly, kLocalOnly, kFedAvgPlain };

std::string to_string(Variant v);
Variant parse_variant(std::string_view s);

/// Forward used while finetuning the local encoder.
enum class LocalStageForward : std::uint8_t { kBlended, kLocalOnly };

std::string to_string(LocalStageForward f);
LocalStageForward parse_local_stage_forward(std::string_view s);

/// Initial routing policy of every personalization: seeded random or all zeros (r = 0.5 everywhere).
enum class PolicyInit : std::uint8_t { kRandom, kZeros };

std::string to_string(PolicyInit p);
PolicyInit parse_policy_init(std::string_view s);

struct TrainHyper {
  std::size_t local_epochs = 1;
  std::size_t global_epochs = 1;
  double local_lr = 0.3;
  double global_lr = 0.3;
  double tau = 0.75;
  double gamma = 0.01;
  std::size_t batch_size = 16;
  double clip_norm = 0.0;  // 0 = no clipping
  LocalStageForward local_stage = LocalStageForward::kBlended;
  PolicyInit policy_init = PolicyInit::kRandom;
  /// Global-stage epochs during pre-inference; unset = global_epochs.
  std::optional<std::size_t> pre_inference_epochs;

  static TrainHyper sequence_defaults();
  static TrainHyper classify_defaults();
  static TrainHyper defaults_for(TaskKind kind);

  std::size_t effective_pre_inference_epochs() const { return pre_inference_epochs.value_or(global_epochs); }
  /// Learning rates may be zero (the update is skipped); everything else must be positive.
  void validate() const;
};

struct SplitPair {
  std::vector<Instance> d_local;
  std::vector<Instance> d_global;
};

/// Sequences: the first ceil(len/2) tokens go to d_local, the rest to d_global.
/// Classification: seeded shuffle, first ceil(n/2) to d_local.
/// A length-1 sequence or a single instance is placed in both halves.
SplitPair split_dataset(std::span<const Instance> train, TaskKind kind, std::uint64_t seed);

struct ClientUpdate {
  std::size_t n = 0;
  GlobalModel global_model;
};

nlohmann::json update_to_json(const ClientUpdate& update);
ClientUpdate update_from_json(const nlohmann::json& j, const ModelDims& dims);

struct TrainStats {
  double local_loss = 0.0;      // mean cross-entropy, last local epoch
  double policy_loss = 0.0;     // mean regularized loss, last gate pass
  double global_loss = 0.0;     // mean regularized loss, last global pass
  double mean_r_global = 0.0;   // mean gate probability of the global route, last gate pass
  double train_accuracy = 0.0;  // accuracy of the soft forward during the last training pass
  std::size_t local_steps = 0;
  std::size_t global_steps = 0;
  bool local_unfinetuned = false;
  bool global_skipped = false;
};

/// Finetunes a copy of the global encoder on d_local. Only the copy changes.
LocalParams derive_local_params(const GlobalModel& global, const RoutingPolicy& policy,
                                std::span<const Instance> d_local, const TrainHyper& hyper, Rng& rng,
                                TrainStats* stats = nullptr);

/// Alternating gate / global-model passes over d_global; updates model in place.
/// With update_global = false only the gate is trained (pre-inference).
void run_global_stage(DynamicPersonalizedModel& model, std::span<const Instance> d_global, const TrainHyper& hyper,
                      std::size_t epochs, bool update_global, Rng& rng, TrainStats* stats = nullptr);

/// run_global_stage with global updates; returns the updated global model.
GlobalModel train_policy_and_global(DynamicPersonalizedModel& model, std::span<const Instance> d_global,
                                    const TrainHyper& hyper, Rng& rng, TrainStats* stats = nullptr);

/// Plain FedAvg local training of the global model on the whole train split.
GlobalModel train_plain(const GlobalModel& global, std::span<const Instance> train, const TrainHyper& hyper, Rng& rng,
                        TrainStats* stats = nullptr);

ClientUpdate client_train(const ClientDataset& client, const GlobalModel& global, const TrainHyper& hyper,
                          std::uint64_t seed, Variant variant = Variant::kFlow, TrainStats* stats = nullptr);

/// Hard-mode personalized model built without touching the global model.
DynamicPersonalizedModel client_pre_inference(const ClientDataset& client, const GlobalModel& global,
                                              const TrainHyper& hyper, std::uint64_t seed,
                                              TrainStats* stats = nullptr);

struct Inference {
  std::vector<std::uint32_t> predictions;  // one per decision point
  std::vector<Route> route_trace;
  std::vector<double> r_global;            // gate probability before thresholding
};

/// Runs the model in its current mode. Sequences yield one prediction per token
/// (the predicted next token).
Inference infer(const DynamicPersonalizedModel& model, const Instance& instance);
Inference infer_tokens(const DynamicPersonalizedModel& model, std::span<const std::uint32_t> tokens);

/// Client handle used by the server. Holds only the immutable dataset; every
/// round's local encoder and gate live on the stack of train().
class Client {
 public:
  explicit Client(std::shared_ptr<const ClientDataset> data);

  std::uint32_t id() const { return data_->client_id; }
  const ClientDataset& data() const { return *data_; }

  ClientUpdate train(const GlobalModel& global, const TrainHyper& hyper, std::uint64_t seed, Variant variant,
                     TrainStats* stats = nullptr) const;
  DynamicPersonalizedModel pre_inference(const GlobalModel& global, const TrainHyper& hyper,
                                         std::uint64_t seed) const;

 private:
  std::shared_ptr<const ClientDataset> data_;
};

}  // namespace dynroute
