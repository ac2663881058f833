// Copyright (c) 2026, The dynroute Authors
// SPDX-License-Identifier: Apache-2.0

#include "dynroute/model.hpp"

#include <cmath>

#include "dynroute/errors.hpp"
#include "dynroute/random.hpp"

namespace dynroute {

std::string to_string(TaskKind k) { return k == TaskKind::kSequence ? "sequence" : "classify"; }
std::string to_string(CellKind k) { return k == CellKind::kGru ? "gru" : "rnn"; }
std::string to_string(Route r) { return r == Route::kGlobal ? "global" : "local"; }

TaskKind parse_task_kind(std::string_view s) {
  if (s == "sequence") return TaskKind::kSequence;
  if (s == "classify") return TaskKind::kClassify;
  throw ConfigError("unknown task kind '" + std::string(s) + "' (expected sequence|classify)");
}

CellKind parse_cell_kind(std::string_view s) {
  if (s == "gru") return CellKind::kGru;
  if (s == "rnn") return CellKind::kRnn;
  throw ConfigError("unknown cell kind '" + std::string(s) + "' (expected gru|rnn)");
}

std::size_t ModelDims::gate_input_dim() const {
  return task == TaskKind::kSequence ? embed_dim + hidden_dim : input_dim;
}

void ModelDims::validate() const {
  if (hidden_dim == 0) throw ConfigError("model.hidden_dim must be positive");
  if (num_classes < 2) throw ConfigError("model needs at least 2 output classes");
  if (task == TaskKind::kSequence) {
    if (vocab_size < 2) throw ConfigError("vocab_size must be at least 2");
    if (embed_dim == 0) throw ConfigError("model.embed_dim must be positive");
    if (num_classes != vocab_size) throw ConfigError("sequence tasks predict the vocabulary: num_classes != vocab_size");
  } else {
    if (input_dim == 0) throw ConfigError("input_dim must be positive");
  }
  for (auto w : encoder_hidden) {
    if (w == 0) throw ConfigError("encoder hidden widths must be positive");
  }
}

namespace {

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v));
}

void add_affine(std::vector<Parameter>& out, const std::string& prefix, std::size_t rows, std::size_t cols, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
  out.emplace_back(prefix + ".w", uniform_tensor({rows, cols}, bound, rng));
  out.emplace_back(prefix + ".b", uniform_tensor({rows}, bound, rng));
}

std::size_t count(const std::vector<Parameter>& ps) {
  std::size_t n = 0;
  for (const auto& p : ps) n += p.value.size();
  return n;
}

std::uint64_t hash_params(const std::vector<Parameter>& ps, std::uint64_t h) {
  for (const auto& p : ps) h = tensor_hash(p.value, h);
  return h;
}

}  // namespace

std::size_t EncoderParams::parameter_count() const { return count(params); }
std::size_t DecoderParams::parameter_count() const { return count(params); }

GlobalModel GlobalModel::init(const ModelDims& dims, std::uint64_t seed) {
  dims.validate();
  Rng rng(seed);
  GlobalModel m;
  m.dims = dims;
  const std::size_t d = dims.hidden_dim;

  m.encoder.variant = dims.task;
  m.encoder.cell = dims.cell;
  m.encoder.hidden_dim = d;
  if (dims.task == TaskKind::kSequence) {
    const std::size_t in = dims.embed_dim + d;
    m.encoder.input_dim = dims.embed_dim;
    if (dims.cell == CellKind::kGru) {
      add_affine(m.encoder.params, "encoder.z", d, in, rng);
      add_affine(m.encoder.params, "encoder.r", d, in, rng);
      add_affine(m.encoder.params, "encoder.n", d, in, rng);
    } else {
      add_affine(m.encoder.params, "encoder.h", d, in, rng);
    }
  } else {
    m.encoder.input_dim = dims.input_dim;
    std::size_t width = dims.input_dim;
    std::size_t layer = 0;
    for (auto w : dims.encoder_hidden) {
      add_affine(m.encoder.params, "encoder.l" + std::to_string(layer++), w, width, rng);
      width = w;
    }
    add_affine(m.encoder.params, "encoder.l" + std::to_string(layer), d, width, rng);
  }

  if (dims.decoder_hidden > 0) {
    add_affine(m.decoder.params, "decoder.l0", dims.decoder_hidden, d, rng);
    add_affine(m.decoder.params, "decoder.l1", dims.num_classes, dims.decoder_hidden, rng);
  } else {
    add_affine(m.decoder.params, "decoder.l0", dims.num_classes, d, rng);
  }

  if (dims.task == TaskKind::kSequence) {
    m.embedding = EmbeddingParams{
        Parameter("embedding", uniform_tensor({dims.vocab_size, dims.embed_dim}, 1.0, rng))};
  }
  return m;
}

std::vector<Parameter*> GlobalModel::parameters() {
  std::vector<Parameter*> out;
  for (auto& p : encoder.params) out.push_back(&p);
  for (auto& p : decoder.params) out.push_back(&p);
  if (embedding) out.push_back(&embedding->table);
  return out;
}

std::vector<const Parameter*> GlobalModel::parameters() const {
  std::vector<const Parameter*> out;
  for (const auto& p : encoder.params) out.push_back(&p);
  for (const auto& p : decoder.params) out.push_back(&p);
  if (embedding) out.push_back(&embedding->table);
  return out;
}

std::size_t GlobalModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += p->value.size();
  return n;
}

std::size_t GlobalModel::tensor_count() const { return parameters().size(); }

std::uint64_t GlobalModel::hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto* p : parameters()) h = tensor_hash(p->value, h);
  return h;
}

LocalParams LocalParams::copy_of(const GlobalModel& global) {
  LocalParams lp;
  lp.encoder = global.encoder;
  for (auto& p : lp.encoder.params) p.zero_grad();
  return lp;
}

std::uint64_t LocalParams::hash() const { return hash_params(encoder.params, 1469598103934665603ULL); }

RoutingPolicy RoutingPolicy::init(std::size_t gate_dim, double tau, std::uint64_t seed) {
  if (!(tau > 0.0)) throw ParameterError("routing temperature must be positive");
  if (gate_dim == 0) throw DimensionError("gate input dimension must be positive");
  Rng rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(gate_dim));
  RoutingPolicy p;
  p.weight = Parameter("policy.w", uniform_tensor({2, gate_dim}, bound, rng));
  p.bias = Parameter("policy.b", uniform_tensor({2}, bound, rng));
  p.tau = tau;
  return p;
}

RoutingPolicy RoutingPolicy::zeros(std::size_t gate_dim, double tau) {
  if (!(tau > 0.0)) throw ParameterError("routing temperature must be positive");
  if (gate_dim == 0) throw DimensionError("gate input dimension must be positive");
  RoutingPolicy p;
  p.weight = Parameter("policy.w", Tensor::zeros({2, gate_dim}));
  p.bias = Parameter("policy.b", Tensor::zeros({2}));
  p.tau = tau;
  return p;
}

std::uint64_t RoutingPolicy::hash() const {
  return tensor_hash(bias.value, tensor_hash(weight.value)) ^ std::hash<double>{}(tau);
}

DynamicPersonalizedModel DynamicPersonalizedModel::assemble(GlobalModel global, LocalParams local,
                                                            RoutingPolicy policy, ExecMode mode) {
  if (local.encoder.params.size() != global.encoder.params.size()) {
    throw DimensionError("local and global encoders differ in structure");
  }
  for (std::size_t i = 0; i < local.encoder.params.size(); ++i) {
    if (!local.encoder.params[i].value.same_shape(global.encoder.params[i].value)) {
      throw DimensionError("local encoder tensor " + local.encoder.params[i].name + " differs in shape");
    }
  }
  if (policy.gate_dim() != global.dims.gate_input_dim()) {
    throw DimensionError("policy expects gate input of " + std::to_string(policy.gate_dim()) + ", model provides " +
                         std::to_string(global.dims.gate_input_dim()));
  }
  DynamicPersonalizedModel m;
  m.global = std::move(global);
  m.local = std::move(local);
  m.policy = std::move(policy);
  m.mode = mode;
  return m;
}

// --- tape-level graph -------------------------------------------------------------

namespace {

std::vector<Var> bind_params(Tape& tape, std::vector<Parameter>& ps, bool trainable) {
  std::vector<Var> out;
  out.reserve(ps.size());
  for (auto& p : ps) out.push_back(trainable ? tape.param(p, true) : tape.ref(p.value));
  return out;
}

std::vector<Var> bind_refs(Tape& tape, const std::vector<Parameter>& ps) {
  std::vector<Var> out;
  out.reserve(ps.size());
  for (const auto& p : ps) out.push_back(tape.ref(p.value));
  return out;
}

Var affine(Var w, Var b, Var x) { return add(matvec(w, x), b); }

Var recurrent_cell(const EncoderParams& enc, const std::vector<Var>& v, Var x, Var h) {
  Var xh = concat(x, h);
  if (enc.cell == CellKind::kRnn) return tanh(affine(v[0], v[1], xh));
  Var z = sigmoid(affine(v[0], v[1], xh));
  Var r = sigmoid(affine(v[2], v[3], xh));
  Var n = tanh(affine(v[4], v[5], concat(x, mul(r, h))));
  return add(mul(one_minus(z), n), mul(z, h));
}

Var feedforward(const std::vector<Var>& v, Var x) {
  Var a = x;
  for (std::size_t i = 0; i + 1 < v.size(); i += 2) a = tanh(affine(v[i], v[i + 1], a));
  return a;
}

Var run_encoder(const BoundModel& bm, Route route, Var x, std::optional<Var> h) {
  const auto& m = *bm.model;
  const auto& enc = route == Route::kGlobal ? m.global.encoder : m.local.encoder;
  const auto& vars = route == Route::kGlobal ? bm.global_encoder : bm.local_encoder;
  if (route == Route::kGlobal) {
    ++m.counters.global_calls;
  } else {
    ++m.counters.local_calls;
  }
  return h ? recurrent_cell(enc, vars, x, *h) : feedforward(vars, x);
}

StepVars route_and_run(const BoundModel& bm, Var gate_input, Var x, std::optional<Var> h, ExecMode mode) {
  const auto& m = *bm.model;
  Tape& tape = *bm.tape;
  Var probs;
  if (m.forced_routes) {
    probs = tape.constant(Tensor::vector({(*m.forced_routes)[0], (*m.forced_routes)[1]}));
  } else {
    probs = softmax_temperature(affine(bm.gate_weight, bm.gate_bias, gate_input), m.policy.tau);
  }
  StepVars out;
  out.probs = {probs.value()[0], probs.value()[1]};
  out.r_global = element(probs, 0);
  if (mode == ExecMode::kSoft) {
    Var hg = run_encoder(bm, Route::kGlobal, x, h);
    Var hl = run_encoder(bm, Route::kLocal, x, h);
    out.out = add(scale_by(out.r_global, hg), scale_by(element(probs, 1), hl));
    out.route = out.probs[0] > 0.5 ? Route::kGlobal : Route::kLocal;
  } else {
    out.route = out.probs[0] > 0.5 ? Route::kGlobal : Route::kLocal;
    out.out = run_encoder(bm, out.route, x, h);
  }
  return out;
}

}  // namespace

BoundModel bind(Tape& tape, DynamicPersonalizedModel& model, TrainableSet trainable) {
  BoundModel bm;
  bm.tape = &tape;
  bm.model = &model;
  bm.global_encoder = bind_params(tape, model.global.encoder.params, trainable.global);
  bm.local_encoder = bind_params(tape, model.local.encoder.params, trainable.local);
  bm.decoder = bind_params(tape, model.global.decoder.params, trainable.global);
  if (model.global.embedding) {
    bm.embedding = trainable.global ? tape.param(model.global.embedding->table, true)
                                    : tape.ref(model.global.embedding->table.value);
  }
  bm.gate_weight = trainable.policy ? tape.param(model.policy.weight, true) : tape.ref(model.policy.weight.value);
  bm.gate_bias = trainable.policy ? tape.param(model.policy.bias, true) : tape.ref(model.policy.bias.value);
  return bm;
}

BoundModel bind(Tape& tape, const DynamicPersonalizedModel& model) {
  BoundModel bm;
  bm.tape = &tape;
  bm.model = &model;
  bm.global_encoder = bind_refs(tape, model.global.encoder.params);
  bm.local_encoder = bind_refs(tape, model.local.encoder.params);
  bm.decoder = bind_refs(tape, model.global.decoder.params);
  if (model.global.embedding) bm.embedding = tape.ref(model.global.embedding->table.value);
  bm.gate_weight = tape.ref(model.policy.weight.value);
  bm.gate_bias = tape.ref(model.policy.bias.value);
  return bm;
}

StepVars step_graph(const BoundModel& bm, Var x_t, Var h_prev, ExecMode mode) {
  const auto& enc = bm.model->global.encoder;
  if (enc.variant != TaskKind::kSequence) throw UsageError("step on a feed-forward encoder");
  if (x_t.value().size() != enc.input_dim || h_prev.value().size() != enc.hidden_dim) {
    throw DimensionError("recurrent step expects x in R^" + std::to_string(enc.input_dim) + " and h in R^" +
                         std::to_string(enc.hidden_dim) + ", got " + shape_string(x_t.value().shape()) + " and " +
                         shape_string(h_prev.value().shape()));
  }
  return route_and_run(bm, concat(x_t, h_prev), x_t, h_prev, mode);
}

StepVars encode_graph(const BoundModel& bm, Var x, ExecMode mode) {
  const auto& enc = bm.model->global.encoder;
  if (enc.variant != TaskKind::kClassify) throw UsageError("encode on a recurrent encoder");
  if (x.value().size() != enc.input_dim) {
    throw DimensionError("feed-forward encoder expects R^" + std::to_string(enc.input_dim) + ", got " +
                         shape_string(x.value().shape()));
  }
  return route_and_run(bm, x, x, std::nullopt, mode);
}

Var decode_graph(const BoundModel& bm, Var features) {
  Var a = features;
  const auto& v = bm.decoder;
  for (std::size_t i = 0; i < v.size(); i += 2) {
    a = affine(v[i], v[i + 1], a);
    if (i + 2 < v.size()) a = tanh(a);
  }
  return a;
}

Var embed_graph(const BoundModel& bm, std::uint32_t token) {
  if (!bm.embedding) throw UsageError("model has no embedding table");
  const std::size_t vocab = bm.embedding->value().rows();
  if (token >= vocab) {
    throw IndexError("unknown token id " + std::to_string(token) + " (vocabulary size " + std::to_string(vocab) + ")");
  }
  return row(*bm.embedding, token);
}

SequenceGraph sequence_graph(const BoundModel& bm, std::span<const std::uint32_t> tokens, ExecMode mode) {
  const auto& dims = bm.model->global.dims;
  if (tokens.empty()) throw DimensionError("empty token sequence");
  if (dims.max_seq_len > 0 && tokens.size() > dims.max_seq_len) {
    throw DimensionError("sequence of length " + std::to_string(tokens.size()) + " exceeds max_seq_len " +
                         std::to_string(dims.max_seq_len));
  }
  SequenceGraph g;
  g.logits.reserve(tokens.size());
  g.r_global.reserve(tokens.size());
  Var h = bm.tape->constant(Tensor::zeros({dims.hidden_dim}));
  for (auto tok : tokens) {
    Var x = embed_graph(bm, tok);
    StepVars s = step_graph(bm, x, h, mode);
    h = s.out;
    g.logits.push_back(decode_graph(bm, h));
    g.r_global.push_back(s.r_global);
    g.probs.push_back(s.probs);
    g.routes.push_back(s.route);
  }
  return g;
}

Var regularized_loss(std::span<const Var> step_losses, std::span<const Var> step_r_global, double gamma) {
  if (step_losses.empty()) throw UsageError("regularized loss over no steps");
  if (step_losses.size() != step_r_global.size()) throw DimensionError("loss and route lists differ in length");
  std::vector<Var> terms;
  terms.reserve(step_losses.size());
  for (std::size_t i = 0; i < step_losses.size(); ++i) {
    Var t = step_losses[i];
    if (gamma != 0.0) t = sub(t, scale(log_clamped(step_r_global[i], kLogFloor), gamma));
    terms.push_back(t);
  }
  return scale(add_n(terms), 1.0 / static_cast<double>(terms.size()));
}

// --- tensor-level operations ---------------------------------------------------------

namespace {

Tensor gate_probs(const RoutingPolicy& policy, const Tensor& input) {
  if (policy.gate_dim() != input.size()) {
    throw DimensionError("gate expects input in R^" + std::to_string(policy.gate_dim()) + ", got R^" +
                         std::to_string(input.size()));
  }
  Tape tape;
  Var w = tape.ref(policy.weight.value);
  Var b = tape.ref(policy.bias.value);
  Var x = tape.ref(input);
  return softmax_temperature(affine(w, b, x), policy.tau).value();
}

Tensor concat_values(const Tensor& a, const Tensor& b) {
  std::vector<double> v(a.values().begin(), a.values().end());
  v.insert(v.end(), b.values().begin(), b.values().end());
  return Tensor::vector(std::move(v));
}

void require_mode(const DynamicPersonalizedModel& m, ExecMode mode, const char* op) {
  if (m.mode != mode) {
    throw UsageError(std::string(op) + " requires a " + (mode == ExecMode::kSoft ? "soft" : "hard") + "-mode model");
  }
}

}  // namespace

Tensor route_probs_recurrent(const RoutingPolicy& policy, const Tensor& x_t, const Tensor& h_prev) {
  if (x_t.rank() != 1 || h_prev.rank() != 1) throw DimensionError("route inputs must be vectors");
  return gate_probs(policy, concat_values(x_t, h_prev));
}

Tensor route_probs_feedforward(const RoutingPolicy& policy, const Tensor& x) {
  if (x.rank() != 1) throw DimensionError("route input must be a vector");
  return gate_probs(policy, x);
}

BlendResult blended_step(const DynamicPersonalizedModel& model, const Tensor& h_prev, const Tensor& x_t) {
  require_mode(model, ExecMode::kSoft, "blended_step");
  Tape tape;
  BoundModel bm = bind(tape, model);
  StepVars s = step_graph(bm, tape.ref(x_t), tape.ref(h_prev), ExecMode::kSoft);
  return {s.out.value(), Tensor::vector({s.probs[0], s.probs[1]})};
}

BlendResult blended_encode(const DynamicPersonalizedModel& model, const Tensor& x) {
  require_mode(model, ExecMode::kSoft, "blended_encode");
  Tape tape;
  BoundModel bm = bind(tape, model);
  StepVars s = encode_graph(bm, tape.ref(x), ExecMode::kSoft);
  return {s.out.value(), Tensor::vector({s.probs[0], s.probs[1]})};
}

HardResult hard_step(const DynamicPersonalizedModel& model, const Tensor& h_prev, const Tensor& x_t) {
  require_mode(model, ExecMode::kHard, "hard_step");
  Tape tape;
  BoundModel bm = bind(tape, model);
  StepVars s = step_graph(bm, tape.ref(x_t), tape.ref(h_prev), ExecMode::kHard);
  return {s.out.value(), s.route, Tensor::vector({s.probs[0], s.probs[1]})};
}

HardResult hard_encode(const DynamicPersonalizedModel& model, const Tensor& x) {
  require_mode(model, ExecMode::kHard, "hard_encode");
  Tape tape;
  BoundModel bm = bind(tape, model);
  StepVars s = encode_graph(bm, tape.ref(x), ExecMode::kHard);
  return {s.out.value(), s.route, Tensor::vector({s.probs[0], s.probs[1]})};
}

SequenceOutput forward_sequence(const DynamicPersonalizedModel& model, std::span<const std::uint32_t> tokens,
                                ExecMode mode) {
  Tape tape;
  BoundModel bm = bind(tape, model);
  SequenceGraph g = sequence_graph(bm, tokens, mode);
  SequenceOutput out;
  out.logits.reserve(g.logits.size());
  for (std::size_t t = 0; t < g.logits.size(); ++t) {
    out.logits.push_back(g.logits[t].value());
    out.r_global.push_back(g.probs[t][0]);
  }
  out.routes = std::move(g.routes);
  return out;
}

InstanceOutput forward_instance(const DynamicPersonalizedModel& model, const Tensor& x, ExecMode mode) {
  Tape tape;
  BoundModel bm = bind(tape, model);
  StepVars s = encode_graph(bm, tape.ref(x), mode);
  return {decode_graph(bm, s.out).value(), s.probs[0], s.route};
}

double regularized_loss(std::span<const double> step_losses, std::span<const double> step_r_global, double gamma) {
  if (step_losses.empty()) throw UsageError("regularized loss over no steps");
  if (step_losses.size() != step_r_global.size()) throw DimensionError("loss and route lists differ in length");
  double total = 0.0;
  for (std::size_t i = 0; i < step_losses.size(); ++i) {
    total += step_losses[i] - gamma * std::log(std::max(step_r_global[i], kLogFloor));
  }
  return total / static_cast<double>(step_losses.size());
}

ParamCounts param_counts(const DynamicPersonalizedModel& model) {
  return {model.global.parameter_count(), model.local.encoder.parameter_count(),
          model.policy.weight.value.size() + model.policy.bias.value.size()};
}

}  // namespace dynroute
