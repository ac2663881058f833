// Copyright (c) 2026, The dynroute Authors
// SPDX-License-Identifier: Apache-2.0
//
// Model architectures and the dynamic personalized model.
//
// A dynamic personalized model holds two encoders with identical shapes (the
// global one, part of the server model, and a local copy finetuned on the
// client), a shared decoder, an optional token embedding, and a two-way
// routing gate. Route index 0 is the global encoder, index 1 the local one.
//
// In soft mode both encoders run and their outputs are blended by the gate
// probabilities. In hard mode the gate picks one encoder per decision point:
// global when r_global > 0.5, local otherwise (a tie goes local).

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dynroute/autodiff.hpp"
#include "dynroute/tensor.hpp"

namespace dynroute {

enum class TaskKind : std::uint8_t { kSequence, kClassify };
enum class CellKind : std::uint8_t { kGru, kRnn };
enum class ExecMode : std::uint8_t { kSoft, kHard };
enum class Route : std::uint8_t { kGlobal, kLocal };

std::string to_string(TaskKind k);
std::string to_string(CellKind k);
std::string to_string(Route r);
TaskKind parse_task_kind(std::string_view s);
CellKind parse_cell_kind(std::string_view s);

struct ModelDims {
  TaskKind task = TaskKind::kSequence;
  CellKind cell = CellKind::kGru;
  std::size_t vocab_size = 0;   // sequence tasks
  std::size_t embed_dim = 0;    // m, sequence tasks
  std::size_t input_dim = 0;    // n, classification tasks
  std::size_t hidden_dim = 0;   // d
  std::size_t num_classes = 0;  // k; equals vocab_size for sequence tasks
  std::size_t max_seq_len = 0;  // 0 = unbounded
  std::vector<std::size_t> encoder_hidden;  // feed-forward widths before d
  std::size_t decoder_hidden = 0;           // 0 = single affine decoder

  std::size_t gate_input_dim() const;
  void validate() const;
  bool operator==(const ModelDims&) const = default;
};

struct EncoderParams {
  TaskKind variant = TaskKind::kSequence;  // kSequence = recurrent cell
  CellKind cell = CellKind::kGru;
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  std::vector<Parameter> params;

  std::size_t parameter_count() const;
};

struct DecoderParams {
  std::vector<Parameter> params;  // alternating weight, bias
  std::size_t parameter_count() const;
};

struct EmbeddingParams {
  Parameter table;  // vocab_size x m
};

struct GlobalModel {
  ModelDims dims;
  EncoderParams encoder;
  DecoderParams decoder;
  std::optional<EmbeddingParams> embedding;

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights from a seeded stream.
  static GlobalModel init(const ModelDims& dims, std::uint64_t seed);

  /// Fixed order: encoder, decoder, embedding. Serialization and FedAvg rely on it.
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::size_t parameter_count() const;
  std::size_t tensor_count() const;
  std::uint64_t hash() const;
};

struct LocalParams {
  EncoderParams encoder;
  bool unfinetuned = false;  // set when stage 1 had no data to train on

  static LocalParams copy_of(const GlobalModel& global);
  std::uint64_t hash() const;
};

struct RoutingPolicy {
  Parameter weight;  // 2 x gate_dim
  Parameter bias;    // 2
  double tau = 1.0;

  static RoutingPolicy init(std::size_t gate_dim, double tau, std::uint64_t seed);
  static RoutingPolicy zeros(std::size_t gate_dim, double tau);

  std::size_t gate_dim() const { return weight.value.cols(); }
  std::vector<Parameter*> parameters() { return {&weight, &bias}; }
  std::uint64_t hash() const;
};

/// Number of encoder evaluations per route since the last reset.
struct RouteCounters {
  std::uint64_t global_calls = 0;
  std::uint64_t local_calls = 0;
  std::uint64_t total() const { return global_calls + local_calls; }
};

struct DynamicPersonalizedModel {
  GlobalModel global;
  LocalParams local;
  RoutingPolicy policy;
  ExecMode mode = ExecMode::kSoft;
  /// Replaces the gate output at every decision point (global-only / local-only variants, tests).
  std::optional<std::array<double, 2>> forced_routes;
  mutable RouteCounters counters;

  static DynamicPersonalizedModel assemble(GlobalModel global, LocalParams local, RoutingPolicy policy,
                                           ExecMode mode);
};

// --- tape-level building blocks (used by training) ---------------------------

struct TrainableSet {
  bool global = false;  // encoder, decoder, embedding of the global model
  bool local = false;   // local encoder
  bool policy = false;  // gate weights and bias
};

struct BoundModel {
  Tape* tape = nullptr;
  const DynamicPersonalizedModel* model = nullptr;
  std::vector<Var> global_encoder;
  std::vector<Var> local_encoder;
  std::vector<Var> decoder;
  std::optional<Var> embedding;
  Var gate_weight;
  Var gate_bias;
};

BoundModel bind(Tape& tape, DynamicPersonalizedModel& model, TrainableSet trainable);
/// Inference binding: nothing trainable.
BoundModel bind(Tape& tape, const DynamicPersonalizedModel& model);

struct StepVars {
  Var out;            // h_t (recurrent) or encoder features (feed-forward)
  Var r_global;       // single-element probability of the global route
  std::array<double, 2> probs{};
  Route route = Route::kGlobal;  // hard mode: route executed; soft mode: argmax
};

StepVars step_graph(const BoundModel& bm, Var x_t, Var h_prev, ExecMode mode);
StepVars encode_graph(const BoundModel& bm, Var x, ExecMode mode);
Var decode_graph(const BoundModel& bm, Var features);
Var embed_graph(const BoundModel& bm, std::uint32_t token);

struct SequenceGraph {
  std::vector<Var> logits;
  std::vector<Var> r_global;
  std::vector<std::array<double, 2>> probs;
  std::vector<Route> routes;
};

SequenceGraph sequence_graph(const BoundModel& bm, std::span<const std::uint32_t> tokens, ExecMode mode);

/// (1/count) * sum(ce_i - gamma * log(max(r_i, 1e-12))).
Var regularized_loss(std::span<const Var> step_losses, std::span<const Var> step_r_global, double gamma);

// --- tensor-level operations ---------------------------------------------------

inline constexpr double kLogFloor = 1e-12;

Tensor route_probs_recurrent(const RoutingPolicy& policy, const Tensor& x_t, const Tensor& h_prev);
Tensor route_probs_feedforward(const RoutingPolicy& policy, const Tensor& x);

struct BlendResult {
  Tensor out;
  Tensor probs;
};

struct HardResult {
  Tensor out;
  Route route = Route::kGlobal;
  Tensor probs;
};

BlendResult blended_step(const DynamicPersonalizedModel& model, const Tensor& h_prev, const Tensor& x_t);
BlendResult blended_encode(const DynamicPersonalizedModel& model, const Tensor& x);
HardResult hard_step(const DynamicPersonalizedModel& model, const Tensor& h_prev, const Tensor& x_t);
HardResult hard_encode(const DynamicPersonalizedModel& model, const Tensor& x);

struct SequenceOutput {
  std::vector<Tensor> logits;  // one per input token
  std::vector<double> r_global;
  std::vector<Route> routes;
};

SequenceOutput forward_sequence(const DynamicPersonalizedModel& model, std::span<const std::uint32_t> tokens,
                                ExecMode mode);

struct InstanceOutput {
  Tensor logits;
  double r_global = 0.0;
  Route route = Route::kGlobal;
};

InstanceOutput forward_instance(const DynamicPersonalizedModel& model, const Tensor& x, ExecMode mode);

double regularized_loss(std::span<const double> step_losses, std::span<const double> step_r_global, double gamma);

struct ParamCounts {
  std::size_t global = 0;
  std::size_t local = 0;
  std::size_t policy = 0;
};

ParamCounts param_counts(const DynamicPersonalizedModel& model);

}  // namespace dynroute
