// Copyright (c) 2026, The dynroute Authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic heterogeneous federations.
//
// Sequence federation: every client draws token sequences from its own
// Markov chain
//
//     M_c = (1 - lambda) * P_global + lambda * P_client
//     P_client = (1 - s_c) * P_global + s_c * Q_c
//
// where Q_c has sparse Dirichlet rows and s_c ~ U[skew_min, skew_max] spreads
// clients between "close to the population" and "idiosyncratic". lambda = 0
// makes every client iid from P_global; lambda = 1 makes each client sample
// exactly from P_client.
//
// Classification federation: label proportions per client follow
// Dirichlet(alpha), features are class-conditional Gaussians around shared
// class means plus a per-client mean shift.
//
// Both generators are pure functions of their spec; all randomness comes from
// streams keyed by (seed, purpose, client id).

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "dynroute/model.hpp"
#include "dynroute/tensor.hpp"

namespace dynroute {

struct Instance {
  std::vector<std::uint32_t> tokens;  // sequence tasks
  std::vector<double> features;       // classification tasks
  std::uint32_t label = 0;            // classification tasks

  bool is_sequence() const noexcept { return !tokens.empty(); }
  /// Next-token targets for a sequence (length - 1), one for a labelled instance.
  std::size_t prediction_count() const noexcept;
  bool operator==(const Instance&) const = default;
};

struct ClientDataset {
  std::uint32_t client_id = 0;
  TaskKind kind = TaskKind::kSequence;
  std::vector<Instance> train;
  std::vector<Instance> valid;
  std::vector<Instance> test;

  bool operator==(const ClientDataset&) const = default;
};

struct SequenceTaskSpec {
  std::size_t vocab_size = 32;
  std::size_t min_length = 6;
  std::size_t max_length = 12;
  std::size_t num_clients = 30;
  std::size_t min_instances = 20;
  std::size_t max_instances = 40;
  double lambda = 0.6;
  double global_concentration = 1.0;
  double client_concentration = 0.1;
  double client_skew_min = 0.0;
  double client_skew_max = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct ClassifyTaskSpec {
  std::size_t input_dim = 8;
  std::size_t num_classes = 4;
  std::size_t num_clients = 30;
  std::size_t min_instances = 30;
  std::size_t max_instances = 60;
  double alpha = 0.5;
  double shift_scale = 1.5;
  double class_separation = 1.5;
  double noise = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Ground-truth generating chains of one sequence client.
struct SequenceClientTruth {
  Tensor global_transitions;  // P_global, V x V
  Tensor client_transitions;  // P_client, V x V
  Tensor mixed_transitions;   // M_c, V x V
  double skew = 0.0;
};

struct ClassifyClientTruth {
  Tensor class_means;   // k x n
  Tensor label_probs;   // k
  Tensor shift;         // n
};

std::vector<ClientDataset> generate_sequence_federation(const SequenceTaskSpec& spec);
std::vector<ClientDataset> generate_classify_federation(const ClassifyTaskSpec& spec);

SequenceClientTruth sequence_client_truth(const SequenceTaskSpec& spec, std::uint32_t client_id);
ClassifyClientTruth classify_client_truth(const ClassifyTaskSpec& spec, std::uint32_t client_id);

/// Exact divergence of a client's generating distribution from the global one.
/// Sequence: KL rate sum_i pi_c(i) sum_j M_c(i,j) log(M_c(i,j) / P_global(i,j)),
/// pi_c the stationary distribution of M_c.
/// Classification: KL(label_probs || uniform) + |shift|^2 / (2 noise^2), the
/// joint KL of (y, x) between shifted and unshifted class-conditional Gaussians.
double true_client_divergence(const SequenceTaskSpec& spec, std::uint32_t client_id);
double true_client_divergence(const ClassifyTaskSpec& spec, std::uint32_t client_id);

/// KL rate between two chains with row-stochastic transition matrices.
double markov_kl_rate(const Tensor& client, const Tensor& global);
Tensor stationary_distribution(const Tensor& transitions);

/// Splits n instances 8:1:1 into (train, valid, test) counts.
std::array<std::size_t, 3> split_counts(std::size_t n);

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SequenceTaskSpec, vocab_size, min_length, max_length, num_clients,
                                                min_instances, max_instances, lambda, global_concentration,
                                                client_concentration, client_skew_min, client_skew_max, seed)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ClassifyTaskSpec, input_dim, num_classes, num_clients, min_instances,
                                                max_instances, alpha, shift_scale, class_separation, noise, seed)

// Newline-delimited dataset files: one header record, then one record per instance.
struct DatasetFile {
  TaskKind kind = TaskKind::kSequence;
  nlohmann::json spec;
  std::vector<ClientDataset> clients;
};

void write_dataset(const std::filesystem::path& path, const DatasetFile& file);
DatasetFile read_dataset(const std::filesystem::path& path);

}  // namespace dynroute
