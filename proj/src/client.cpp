// Copyright (c) 2026, The dynroute Authors
// SPDX-License-Identifier: Apache-2.0

#include "dynroute/client.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dynroute/checkpoint.hpp"
#include "dynroute/errors.hpp"

namespace dynroute {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kFlow:
      return "flow";
    case Variant::kGlobalOnly:
      return "global_only";
    case Variant::kLocalOnly:
      return "local_only";
    case Variant::kFedAvgPlain:
      return "fedavg_plain";
  }
  return "?";
}

Variant parse_variant(std::string_view s) {
  if (s == "flow") return Variant::kFlow;
  if (s == "global_only") return Variant::kGlobalOnly;
  if (s == "local_only") return Variant::kLocalOnly;
  if (s == "fedavg_plain") return Variant::kFedAvgPlain;
  throw ConfigError("unknown variant '" + std::string(s) + "' (expected flow|global_only|local_only|fedavg_plain)");
}

std::string to_string(LocalStageForward f) { return f == LocalStageForward::kBlended ? "blended" : "local_only"; }

LocalStageForward parse_local_stage_forward(std::string_view s) {
  if (s == "blended") return LocalStageForward::kBlended;
  if (s == "local_only") return LocalStageForward::kLocalOnly;
  throw ConfigError("unknown local stage forward '" + std::string(s) + "' (expected blended|local_only)");
}

std::string to_string(PolicyInit p) { return p == PolicyInit::kRandom ? "random" : "zeros"; }

PolicyInit parse_policy_init(std::string_view s) {
  if (s == "random") return PolicyInit::kRandom;
  if (s == "zeros") return PolicyInit::kZeros;
  throw ConfigError("unknown policy init '" + std::string(s) + "' (expected random|zeros)");
}

TrainHyper TrainHyper::sequence_defaults() { return TrainHyper{}; }

TrainHyper TrainHyper::classify_defaults() {
  TrainHyper h;
  h.local_epochs = 5;
  h.local_lr = 0.05;
  h.global_lr = 0.05;
  h.gamma = 0.05;
  h.batch_size = 20;
  return h;
}

TrainHyper TrainHyper::defaults_for(TaskKind kind) {
  return kind == TaskKind::kSequence ? sequence_defaults() : classify_defaults();
}

void TrainHyper::validate() const {
  auto finite_nonneg = [](double x) { return std::isfinite(x) && x >= 0.0; };
  if (!finite_nonneg(local_lr)) throw ConfigError("train.local_lr must be a finite non-negative number");
  if (!finite_nonneg(global_lr)) throw ConfigError("train.global_lr must be a finite non-negative number");
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("train.tau must be positive");
  if (!finite_nonneg(gamma)) throw ConfigError("train.gamma must be non-negative");
  if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (!finite_nonneg(clip_norm)) throw ConfigError("train.clip_norm must be non-negative");
}

// --- split ----------------------------------------------------------------------

SplitPair split_dataset(std::span<const Instance> train, TaskKind kind, std::uint64_t seed) {
  SplitPair out;
  if (kind == TaskKind::kSequence) {
    out.d_local.reserve(train.size());
    out.d_global.reserve(train.size());
    for (const auto& inst : train) {
      if (!inst.is_sequence()) throw DimensionError("sequence split on a non-sequence instance");
      const std::size_t len = inst.tokens.size();
      if (len < 2) {
        out.d_local.push_back(inst);
        out.d_global.push_back(inst);
        continue;
      }
      const std::size_t cut = (len + 1) / 2;
      Instance a, b;
      a.tokens.assign(inst.tokens.begin(), inst.tokens.begin() + static_cast<std::ptrdiff_t>(cut));
      b.tokens.assign(inst.tokens.begin() + static_cast<std::ptrdiff_t>(cut), inst.tokens.end());
      out.d_local.push_back(std::move(a));
      out.d_global.push_back(std::move(b));
    }
    return out;
  }

  if (train.size() == 1) {
    out.d_local.push_back(train[0]);
    out.d_global.push_back(train[0]);
    return out;
  }
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t cut = (train.size() + 1) / 2;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < cut ? out.d_local : out.d_global).push_back(train[order[i]]);
  }
  return out;
}

// --- update payload ----------------------------------------------------------------

nlohmann::json update_to_json(const ClientUpdate& update) {
  return {{"n", update.n}, {"tensors", tensors_to_json(update.global_model.parameters())}};
}

ClientUpdate update_from_json(const nlohmann::json& j, const ModelDims& dims) {
  ClientUpdate u;
  try {
    u.n = j.at("n").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string("bad client update: ") + e.what());
  }
  u.global_model = GlobalModel::init(dims, 0);
  try {
    tensors_from_json(j.at("tensors"), u.global_model.parameters());
  } catch (const std::exception& e) {
    throw ProtocolError(std::string("bad client update: ") + e.what());
  }
  return u;
}

// --- training passes -------------------------------------------------------------

namespace {

std::size_t argmax(const Tensor& t) {
  const auto v = t.values();
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::size_t total_predictions(std::span<const Instance> data) {
  std::size_t n = 0;
  for (const auto& inst : data) n += inst.prediction_count();
  return n;
}

struct PassTotals {
  double loss = 0.0;  // sum over batches of batch loss * batch steps
  double ce = 0.0;
  double r_global = 0.0;
  std::size_t steps = 0;
  std::size_t correct = 0;

  double mean(double x) const { return steps ? x / static_cast<double>(steps) : 0.0; }
};

struct PassSpec {
  TrainableSet trainable;
  std::vector<Parameter*> params;
  double gamma = 0.0;
  double lr = 0.0;
};

PassTotals run_pass(DynamicPersonalizedModel& model, std::span<const Instance> data, const PassSpec& spec,
                    const TrainHyper& hyper, Rng& rng) {
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  zero_grads(spec.params);

  PassTotals totals;
  std::vector<Var> ces, rs;
  for (std::size_t start = 0; start < order.size(); start += hyper.batch_size) {
    const std::size_t stop = std::min(order.size(), start + hyper.batch_size);
    Tape tape;
    BoundModel bm = bind(tape, model, spec.trainable);
    ces.clear();
    rs.clear();
    for (std::size_t i = start; i < stop; ++i) {
      const Instance& inst = data[order[i]];
      if (inst.is_sequence()) {
        if (inst.tokens.size() < 2) continue;
        const std::span<const std::uint32_t> tokens(inst.tokens);
        SequenceGraph g = sequence_graph(bm, tokens.first(tokens.size() - 1), model.mode);
        for (std::size_t t = 0; t < g.logits.size(); ++t) {
          const std::uint32_t target = tokens[t + 1];
          ces.push_back(cross_entropy(g.logits[t], target));
          rs.push_back(g.r_global[t]);
          totals.correct += argmax(g.logits[t].value()) == target;
        }
      } else {
        Var x = tape.constant(Tensor::vector(inst.features));
        StepVars s = encode_graph(bm, x, model.mode);
        Var logits = decode_graph(bm, s.out);
        ces.push_back(cross_entropy(logits, inst.label));
        rs.push_back(s.r_global);
        totals.correct += argmax(logits.value()) == inst.label;
      }
    }
    if (ces.empty()) continue;
    Var loss = regularized_loss(ces, rs, spec.gamma);
    const double n = static_cast<double>(ces.size());
    totals.loss += loss.value().item() * n;
    for (std::size_t i = 0; i < ces.size(); ++i) {
      totals.ce += ces[i].value().item();
      totals.r_global += rs[i].value().item();
    }
    totals.steps += ces.size();
    if (spec.lr > 0.0) {
      tape.backward(loss);
      if (hyper.clip_norm > 0.0) clip_grad_norm(spec.params, hyper.clip_norm);
      sgd_step(spec.params, spec.lr);
    }
  }
  return totals;
}

std::vector<Parameter*> encoder_params(EncoderParams& enc) {
  std::vector<Parameter*> out;
  for (auto& p : enc.params) out.push_back(&p);
  return out;
}

}  // namespace

LocalParams derive_local_params(const GlobalModel& global, const RoutingPolicy& policy,
                                std::span<const Instance> d_local, const TrainHyper& hyper, Rng& rng,
                                TrainStats* stats) {
  if (hyper.local_epochs == 0) return LocalParams::copy_of(global);
  if (total_predictions(d_local) == 0) {
    LocalParams lp = LocalParams::copy_of(global);
    lp.unfinetuned = true;
    if (stats) stats->local_unfinetuned = true;
    return lp;
  }
  auto model = DynamicPersonalizedModel::assemble(global, LocalParams::copy_of(global), policy, ExecMode::kSoft);
  if (hyper.local_stage == LocalStageForward::kLocalOnly) model.forced_routes = std::array<double, 2>{0.0, 1.0};

  PassSpec spec;
  spec.trainable.local = true;
  spec.params = encoder_params(model.local.encoder);
  spec.lr = hyper.local_lr;
  PassTotals last;
  for (std::size_t e = 0; e < hyper.local_epochs; ++e) last = run_pass(model, d_local, spec, hyper, rng);
  if (stats) {
    stats->local_loss = last.mean(last.ce);
    stats->local_steps = last.steps;
  }
  return std::move(model.local);
}

void run_global_stage(DynamicPersonalizedModel& model, std::span<const Instance> d_global, const TrainHyper& hyper,
                      std::size_t epochs, bool update_global, Rng& rng, TrainStats* stats) {
  if (model.mode != ExecMode::kSoft) throw UsageError("global stage trains a soft-mode model");
  if (epochs == 0) return;
  if (total_predictions(d_global) == 0) {
    if (stats) stats->global_skipped = true;
    return;
  }
  PassSpec policy_pass;
  policy_pass.trainable.policy = true;
  policy_pass.params = model.policy.parameters();
  policy_pass.gamma = hyper.gamma;
  policy_pass.lr = hyper.global_lr;

  PassSpec global_pass;
  global_pass.trainable.global = true;
  global_pass.params = model.global.parameters();
  global_pass.gamma = hyper.gamma;
  global_pass.lr = hyper.global_lr;

  PassTotals last_policy, last_global;
  for (std::size_t e = 0; e < epochs; ++e) {
    last_policy = run_pass(model, d_global, policy_pass, hyper, rng);
    if (update_global) last_global = run_pass(model, d_global, global_pass, hyper, rng);
  }
  if (stats) {
    stats->policy_loss = last_policy.mean(last_policy.loss);
    stats->mean_r_global = last_policy.mean(last_policy.r_global);
    const PassTotals& last = update_global ? last_global : last_policy;
    stats->global_loss = last.mean(last.loss);
    stats->train_accuracy = last.mean(static_cast<double>(last.correct));
    stats->global_steps = last.steps;
  }
}

GlobalModel train_policy_and_global(DynamicPersonalizedModel& model, std::span<const Instance> d_global,
                                    const TrainHyper& hyper, Rng& rng, TrainStats* stats) {
  run_global_stage(model, d_global, hyper, hyper.global_epochs, true, rng, stats);
  return model.global;
}

GlobalModel train_plain(const GlobalModel& global, std::span<const Instance> train, const TrainHyper& hyper, Rng& rng,
                        TrainStats* stats) {
  // Hard mode with the gate pinned to the global route runs exactly the global network.
  auto model = DynamicPersonalizedModel::assemble(global, LocalParams::copy_of(global),
                                                  RoutingPolicy::zeros(global.dims.gate_input_dim(), 1.0),
                                                  ExecMode::kHard);
  model.forced_routes = std::array<double, 2>{1.0, 0.0};
  if (total_predictions(train) == 0) {
    if (stats) stats->global_skipped = true;
    return model.global;
  }
  PassSpec spec;
  spec.trainable.global = true;
  spec.params = model.global.parameters();
  spec.lr = hyper.global_lr;
  PassTotals last;
  for (std::size_t e = 0; e < hyper.global_epochs; ++e) last = run_pass(model, train, spec, hyper, rng);
  if (stats) {
    stats->global_loss = last.mean(last.loss);
    stats->train_accuracy = last.mean(static_cast<double>(last.correct));
    stats->mean_r_global = 1.0;
    stats->global_steps = last.steps;
  }
  return std::move(model.global);
}

namespace {

DynamicPersonalizedModel build_personalized(const ClientDataset& client, const GlobalModel& global,
                                            const TrainHyper& hyper, std::uint64_t seed, std::size_t epochs,
                                            bool update_global, TrainStats* stats) {
  hyper.validate();
  const SplitPair split = split_dataset(client.train, client.kind, derive_seed(seed, "split"));
  RoutingPolicy policy = hyper.policy_init == PolicyInit::kZeros
                             ? RoutingPolicy::zeros(global.dims.gate_input_dim(), hyper.tau)
                             : RoutingPolicy::init(global.dims.gate_input_dim(), hyper.tau, derive_seed(seed, "policy"));
  Rng rng(derive_seed(seed, "train"));
  LocalParams local = derive_local_params(global, policy, split.d_local, hyper, rng, stats);
  auto model = DynamicPersonalizedModel::assemble(global, std::move(local), std::move(policy), ExecMode::kSoft);
  run_global_stage(model, split.d_global, hyper, epochs, update_global, rng, stats);
  return model;
}

}  // namespace

ClientUpdate client_train(const ClientDataset& client, const GlobalModel& global, const TrainHyper& hyper,
                          std::uint64_t seed, Variant variant, TrainStats* stats) {
  if (client.train.empty()) throw UsageError("client " + std::to_string(client.client_id) + " has no training data");
  if (variant == Variant::kFedAvgPlain) {
    hyper.validate();
    Rng rng(derive_seed(seed, "train"));
    return {client.train.size(), train_plain(global, client.train, hyper, rng, stats)};
  }
  auto model = build_personalized(client, global, hyper, seed, hyper.global_epochs, true, stats);
  return {client.train.size(), std::move(model.global)};
}

DynamicPersonalizedModel client_pre_inference(const ClientDataset& client, const GlobalModel& global,
                                              const TrainHyper& hyper, std::uint64_t seed, TrainStats* stats) {
  auto model = build_personalized(client, global, hyper, seed, hyper.effective_pre_inference_epochs(), false, stats);
  model.mode = ExecMode::kHard;
  return model;
}

// --- inference ---------------------------------------------------------------------

Inference infer_tokens(const DynamicPersonalizedModel& model, std::span<const std::uint32_t> tokens) {
  const SequenceOutput out = forward_sequence(model, tokens, model.mode);
  Inference inf;
  inf.predictions.reserve(out.logits.size());
  for (const auto& l : out.logits) inf.predictions.push_back(static_cast<std::uint32_t>(argmax(l)));
  inf.route_trace = out.routes;
  inf.r_global = out.r_global;
  return inf;
}

Inference infer(const DynamicPersonalizedModel& model, const Instance& instance) {
  if (instance.is_sequence()) return infer_tokens(model, instance.tokens);
  const InstanceOutput out = forward_instance(model, Tensor::vector(instance.features), model.mode);
  Inference inf;
  inf.predictions.push_back(static_cast<std::uint32_t>(argmax(out.logits)));
  inf.route_trace.push_back(out.route);
  inf.r_global.push_back(out.r_global);
  return inf;
}

// --- client handle ------------------------------------------------------------------

Client::Client(std::shared_ptr<const ClientDataset> data) : data_(std::move(data)) {
  if (!data_) throw UsageError("client needs a dataset");
}

ClientUpdate Client::train(const GlobalModel& global, const TrainHyper& hyper, std::uint64_t seed, Variant variant,
                           TrainStats* stats) const {
  return client_train(*data_, global, hyper, seed, variant, stats);
}

DynamicPersonalizedModel Client::pre_inference(const GlobalModel& global, const TrainHyper& hyper,
                                               std::uint64_t seed) const {
  return client_pre_inference(*data_, global, hyper, seed);
}

}  // namespace dynroute
