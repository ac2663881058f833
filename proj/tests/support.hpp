// Copyright (c) 2026, The dynroute Authors
// SPDX-License-Identifier: Apache-2.0
//
// Shared fixtures and independent oracles for the test binaries. The oracles
// recompute quantities with plain loops so they share no code path with the
// library beyond the forward functions they probe.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dynroute/autodiff.hpp"
#include "dynroute/data.hpp"
#include "dynroute/model.hpp"
#include "dynroute/random.hpp"

namespace dynroute::testing {

inline ModelDims seq_dims(CellKind cell = CellKind::kGru, std::size_t vocab = 5, std::size_t embed = 3,
                          std::size_t hidden = 4) {
  ModelDims d;
  d.task = TaskKind::kSequence;
  d.cell = cell;
  d.vocab_size = vocab;
  d.num_classes = vocab;
  d.embed_dim = embed;
  d.hidden_dim = hidden;
  return d;
}

inline ModelDims cls_dims(std::size_t input = 4, std::size_t hidden = 3, std::size_t classes = 3,
                          std::vector<std::size_t> encoder_hidden = {}, std::size_t decoder_hidden = 0) {
  ModelDims d;
  d.task = TaskKind::kClassify;
  d.input_dim = input;
  d.hidden_dim = hidden;
  d.num_classes = classes;
  d.encoder_hidden = std::move(encoder_hidden);
  d.decoder_hidden = decoder_hidden;
  return d;
}

inline Instance seq(std::vector<std::uint32_t> tokens) {
  Instance i;
  i.tokens = std::move(tokens);
  return i;
}

inline Instance point(std::vector<double> x, std::uint32_t label) {
  Instance i;
  i.features = std::move(x);
  i.label = label;
  return i;
}

inline std::vector<Instance> random_sequences(Rng& rng, std::size_t vocab, std::size_t count, std::size_t min_len,
                                              std::size_t max_len) {
  std::uniform_int_distribution<std::size_t> len(min_len, max_len);
  std::uniform_int_distribution<std::uint32_t> tok(0, static_cast<std::uint32_t>(vocab - 1));
  std::vector<Instance> out;
  for (std::size_t i = 0; i < count; ++i) {
    std::vector<std::uint32_t> t(len(rng));
    for (auto& x : t) x = tok(rng);
    out.push_back(seq(std::move(t)));
  }
  return out;
}

inline std::vector<Instance> random_points(Rng& rng, std::size_t dim, std::size_t classes, std::size_t count) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_int_distribution<std::uint32_t> lab(0, static_cast<std::uint32_t>(classes - 1));
  std::vector<Instance> out;
  for (std::size_t i = 0; i < count; ++i) {
    std::vector<double> x(dim);
    for (auto& v : x) v = g(rng);
    out.push_back(point(std::move(x), lab(rng)));
  }
  return out;
}

inline void perturb(std::vector<Parameter>& ps, double scale, Rng& rng) {
  std::normal_distribution<double> g(0.0, scale);
  for (auto& p : ps) {
    for (auto& v : p.value.mutable_values()) v += g(rng);
  }
}

/// Soft-mode model with a local encoder that differs from the global one.
inline DynamicPersonalizedModel random_model(const ModelDims& dims, std::uint64_t seed, ExecMode mode,
                                             double tau = 0.75, double local_shift = 0.3) {
  Rng rng(seed);
  GlobalModel g = GlobalModel::init(dims, derive_seed(seed, "global"));
  LocalParams l = LocalParams::copy_of(g);
  perturb(l.encoder.params, local_shift, rng);
  RoutingPolicy p = RoutingPolicy::init(dims.gate_input_dim(), tau, derive_seed(seed, "policy"));
  return DynamicPersonalizedModel::assemble(std::move(g), std::move(l), std::move(p), mode);
}

inline std::vector<Instance> random_data(const ModelDims& dims, Rng& rng, std::size_t count) {
  return dims.task == TaskKind::kSequence ? random_sequences(rng, dims.vocab_size, count, 2, 5)
                                          : random_points(rng, dims.input_dim, dims.num_classes, count);
}

// --- scalar oracles -------------------------------------------------------------

inline double oracle_ce(std::span<const double> logits, std::size_t label) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (double z : logits) s += std::exp(z - mx);
  return mx + std::log(s) - logits[label];
}

inline std::vector<double> oracle_softmax(const std::vector<double>& z, double tau) {
  double mx = -INFINITY;
  for (double v : z) mx = std::max(mx, v / tau);
  std::vector<double> p(z.size());
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) s += p[i] = std::exp(z[i] / tau - mx);
  for (auto& v : p) v /= s;
  return p;
}

/// y = W x + b with W stored row-major.
inline std::vector<double> oracle_affine(const Tensor& w, const Tensor& b, const std::vector<double>& x) {
  std::vector<double> y(w.rows());
  for (std::size_t r = 0; r < w.rows(); ++r) {
    double s = b[r];
    for (std::size_t c = 0; c < w.cols(); ++c) s += w.at(r, c) * x[c];
    y[r] = s;
  }
  return y;
}

inline double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline std::vector<double> cat(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> v = a;
  v.insert(v.end(), b.begin(), b.end());
  return v;
}

inline std::vector<double> vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

/// One recurrent step written out by hand.
inline std::vector<double> oracle_cell(const EncoderParams& enc, const std::vector<double>& x,
                                       const std::vector<double>& h) {
  const auto& p = enc.params;
  const std::size_t d = h.size();
  std::vector<double> out(d);
  if (enc.cell == CellKind::kRnn) {
    const auto a = oracle_affine(p[0].value, p[1].value, cat(x, h));
    for (std::size_t i = 0; i < d; ++i) out[i] = std::tanh(a[i]);
    return out;
  }
  const auto z = oracle_affine(p[0].value, p[1].value, cat(x, h));
  const auto r = oracle_affine(p[2].value, p[3].value, cat(x, h));
  std::vector<double> rh(d);
  for (std::size_t i = 0; i < d; ++i) rh[i] = sigm(r[i]) * h[i];
  const auto n = oracle_affine(p[4].value, p[5].value, cat(x, rh));
  for (std::size_t i = 0; i < d; ++i) {
    const double zi = sigm(z[i]);
    out[i] = (1.0 - zi) * std::tanh(n[i]) + zi * h[i];
  }
  return out;
}

inline std::vector<double> oracle_feedforward(const EncoderParams& enc, std::vector<double> x) {
  for (std::size_t i = 0; i + 1 < enc.params.size(); i += 2) {
    x = oracle_affine(enc.params[i].value, enc.params[i + 1].value, x);
    for (auto& v : x) v = std::tanh(v);
  }
  return x;
}

inline std::vector<double> oracle_decode(const DecoderParams& dec, std::vector<double> h) {
  for (std::size_t i = 0; i < dec.params.size(); i += 2) {
    h = oracle_affine(dec.params[i].value, dec.params[i + 1].value, h);
    if (i + 2 < dec.params.size()) {
      for (auto& v : h) v = std::tanh(v);
    }
  }
  return h;
}

/// Soft-mode regularized loss, mean over scored positions, computed without the tape.
inline double oracle_loss(const DynamicPersonalizedModel& m, std::span<const Instance> data, double gamma) {
  double total = 0.0;
  std::size_t steps = 0;
  auto gate = [&](const std::vector<double>& in) {
    return oracle_softmax(oracle_affine(m.policy.weight.value, m.policy.bias.value, in), m.policy.tau);
  };
  auto blend = [](const std::vector<double>& r, const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = r[0] * a[i] + r[1] * b[i];
    return out;
  };
  for (const auto& inst : data) {
    if (inst.is_sequence()) {
      std::vector<double> h(m.global.dims.hidden_dim, 0.0);
      const Tensor& table = m.global.embedding->table.value;
      for (std::size_t t = 0; t + 1 < inst.tokens.size(); ++t) {
        std::vector<double> x(table.cols());
        for (std::size_t c = 0; c < x.size(); ++c) x[c] = table.at(inst.tokens[t], c);
        const auto r = m.forced_routes ? std::vector<double>{(*m.forced_routes)[0], (*m.forced_routes)[1]}
                                       : gate(cat(x, h));
        h = blend(r, oracle_cell(m.global.encoder, x, h), oracle_cell(m.local.encoder, x, h));
        const auto logits = oracle_decode(m.global.decoder, h);
        total += oracle_ce(logits, inst.tokens[t + 1]) - gamma * std::log(std::max(r[0], kLogFloor));
        ++steps;
      }
    } else {
      const auto r = m.forced_routes ? std::vector<double>{(*m.forced_routes)[0], (*m.forced_routes)[1]}
                                     : gate(inst.features);
      const auto f = blend(r, oracle_feedforward(m.global.encoder, inst.features),
                           oracle_feedforward(m.local.encoder, inst.features));
      total += oracle_ce(oracle_decode(m.global.decoder, f), inst.label) - gamma * std::log(std::max(r[0], kLogFloor));
      ++steps;
    }
  }
  return total / static_cast<double>(steps);
}

/// Every trainable tensor of a dynamic personalized model, in a fixed order.
inline std::vector<Parameter*> all_params(DynamicPersonalizedModel& m) {
  std::vector<Parameter*> out = m.global.parameters();
  for (auto& p : m.local.encoder.params) out.push_back(&p);
  out.push_back(&m.policy.weight);
  out.push_back(&m.policy.bias);
  return out;
}

/// Analytic loss gradient of the tape for every parameter of m.
inline void tape_gradients(DynamicPersonalizedModel& m, std::span<const Instance> data, double gamma) {
  auto params = all_params(m);
  zero_grads(params);
  Tape tape;
  BoundModel bm = bind(tape, m, TrainableSet{true, true, true});
  std::vector<Var> ces, rs;
  for (const auto& inst : data) {
    if (inst.is_sequence()) {
      const std::span<const std::uint32_t> tokens(inst.tokens);
      SequenceGraph g = sequence_graph(bm, tokens.first(tokens.size() - 1), ExecMode::kSoft);
      for (std::size_t t = 0; t < g.logits.size(); ++t) {
        ces.push_back(cross_entropy(g.logits[t], tokens[t + 1]));
        rs.push_back(g.r_global[t]);
      }
    } else {
      StepVars s = encode_graph(bm, tape.constant(Tensor::vector(inst.features)), ExecMode::kSoft);
      ces.push_back(cross_entropy(decode_graph(bm, s.out), inst.label));
      rs.push_back(s.r_global);
    }
  }
  tape.backward(regularized_loss(ces, rs, gamma));
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t entries = 0;
  std::string worst;
};

/// Relative error |a - n| / max(|a|, |n|, floor) over every parameter entry,
/// with n from central differences of the tape-free oracle loss.
inline GradCheck check_gradients(DynamicPersonalizedModel& m, std::span<const Instance> data, double gamma,
                                 double eps = 1e-5, double floor = 1e-4) {
  tape_gradients(m, data, gamma);
  GradCheck out;
  for (Parameter* p : all_params(m)) {
    auto values = p->value.mutable_values();
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double keep = values[j];
      values[j] = keep + eps;
      const double up = oracle_loss(m, data, gamma);
      values[j] = keep - eps;
      const double down = oracle_loss(m, data, gamma);
      values[j] = keep;
      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = p->grad[j];
      const double rel =
          std::fabs(analytic - numeric) / std::max({std::fabs(analytic), std::fabs(numeric), floor});
      if (rel > out.max_rel_error) {
        out.max_rel_error = rel;
        out.worst = p->name + "[" + std::to_string(j) + "]";
      }
      ++out.entries;
    }
  }
  return out;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("dynroute_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace dynroute::testing
