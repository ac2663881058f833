// Copyright (c) 2026, The dynroute Authors
// SPDX-License-Identifier: Apache-2.0

#include "dynroute/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "dynroute/errors.hpp"
#include "dynroute/random.hpp"

namespace dynroute {

std::size_t Instance::prediction_count() const noexcept {
  if (is_sequence()) return tokens.size() - 1;
  return 1;
}

void SequenceTaskSpec::validate() const {
  if (vocab_size < 2) throw ConfigError("data.sequence.vocab_size must be at least 2");
  if (min_length < 2 || max_length < min_length)
    throw ConfigError("data.sequence lengths need 2 <= min_length <= max_length");
  if (num_clients == 0) throw ConfigError("data.sequence.num_clients must be positive");
  if (min_instances < 4 || max_instances < min_instances)
    throw ConfigError("data.sequence instances need 4 <= min_instances <= max_instances");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("data.sequence.lambda must lie in [0, 1]");
  if (!(global_concentration > 0.0) || !(client_concentration > 0.0))
    throw ConfigError("data.sequence concentrations must be positive");
  if (!(client_skew_min >= 0.0 && client_skew_min <= client_skew_max && client_skew_max <= 1.0))
    throw ConfigError("data.sequence skew range needs 0 <= client_skew_min <= client_skew_max <= 1");
}

void ClassifyTaskSpec::validate() const {
  if (input_dim == 0) throw ConfigError("data.classify.input_dim must be positive");
  if (num_classes < 2) throw ConfigError("data.classify.num_classes must be at least 2");
  if (num_clients == 0) throw ConfigError("data.classify.num_clients must be positive");
  if (min_instances < 4 || max_instances < min_instances)
    throw ConfigError("data.classify instances need 4 <= min_instances <= max_instances");
  if (!(alpha > 0.0)) throw ConfigError("data.classify.alpha must be positive");
  if (!(shift_scale >= 0.0)) throw ConfigError("data.classify.shift_scale must be non-negative");
  if (!(class_separation >= 0.0)) throw ConfigError("data.classify.class_separation must be non-negative");
  if (!(noise > 0.0)) throw ConfigError("data.classify.noise must be positive");
}

std::array<std::size_t, 3> split_counts(std::size_t n) {
  const std::size_t held = std::max<std::size_t>(1, n / 10);
  if (n < 2 * held + 1) throw ConfigError("too few instances to split 8:1:1");
  return {n - 2 * held, held, held};
}

namespace {

std::vector<double> dirichlet(std::size_t k, double alpha, Rng& rng) {
  std::gamma_distribution<double> g(alpha, 1.0);
  std::vector<double> p(k);
  double total = 0.0;
  for (auto& x : p) {
    x = g(rng);
    total += x;
  }
  if (!(total > 0.0)) {
    // Every draw underflowed (tiny alpha): all mass on one component.
    std::uniform_int_distribution<std::size_t> pick(0, k - 1);
    std::fill(p.begin(), p.end(), 0.0);
    p[pick(rng)] = 1.0;
    return p;
  }
  for (auto& x : p) x /= total;
  return p;
}

Tensor dirichlet_rows(std::size_t v, double alpha, Rng& rng) {
  std::vector<double> values;
  values.reserve(v * v);
  for (std::size_t i = 0; i < v; ++i) {
    auto row = dirichlet(v, alpha, rng);
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor::matrix(v, v, std::move(values));
}

Tensor blend(const Tensor& a, const Tensor& b, double w) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - w) * a[i] + w * b[i];
  return Tensor(a.shape(), std::move(out));
}

Tensor global_chain(const SequenceTaskSpec& spec) {
  Rng rng(derive_seed(spec.seed, "seq.global"));
  return dirichlet_rows(spec.vocab_size, spec.global_concentration, rng);
}

void check_client(std::uint32_t client_id, std::size_t num_clients) {
  if (client_id >= num_clients)
    throw IndexError("unknown client id " + std::to_string(client_id) + " (population " +
                     std::to_string(num_clients) + ")");
}

SequenceClientTruth sequence_truth_with(const SequenceTaskSpec& spec, const Tensor& global, std::uint32_t client_id) {
  Rng rng(derive_seed(spec.seed, "seq.client", {client_id}));
  SequenceClientTruth t;
  t.global_transitions = global;
  Tensor q = dirichlet_rows(spec.vocab_size, spec.client_concentration, rng);
  std::uniform_real_distribution<double> skew(spec.client_skew_min, spec.client_skew_max);
  t.skew = skew(rng);
  t.client_transitions = blend(global, q, t.skew);
  t.mixed_transitions = blend(global, t.client_transitions, spec.lambda);
  return t;
}

std::size_t sample_row(const Tensor& m, std::size_t row, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double r = u(rng);
  const std::size_t v = m.cols();
  double acc = 0.0;
  std::size_t last = 0;
  for (std::size_t j = 0; j < v; ++j) {
    const double p = m.at(row, j);
    if (p <= 0.0) continue;
    acc += p;
    last = j;
    if (r < acc) return j;
  }
  return last;
}

template <class Make>
void fill_splits(ClientDataset& ds, std::size_t n, Make make) {
  const auto [n_train, n_valid, n_test] = split_counts(n);
  ds.train.reserve(n_train);
  ds.valid.reserve(n_valid);
  ds.test.reserve(n_test);
  for (std::size_t i = 0; i < n_train; ++i) ds.train.push_back(make());
  for (std::size_t i = 0; i < n_valid; ++i) ds.valid.push_back(make());
  for (std::size_t i = 0; i < n_test; ++i) ds.test.push_back(make());
}

struct ClassifyGlobal {
  Tensor means;  // k x n
};

ClassifyGlobal classify_global(const ClassifyTaskSpec& spec) {
  Rng rng(derive_seed(spec.seed, "cls.global"));
  std::normal_distribution<double> n(0.0, spec.class_separation);
  std::vector<double> v(spec.num_classes * spec.input_dim);
  for (auto& x : v) x = n(rng);
  return {Tensor::matrix(spec.num_classes, spec.input_dim, std::move(v))};
}

ClassifyClientTruth classify_truth_with(const ClassifyTaskSpec& spec, const ClassifyGlobal& g,
                                        std::uint32_t client_id) {
  Rng rng(derive_seed(spec.seed, "cls.client", {client_id}));
  ClassifyClientTruth t;
  t.class_means = g.means;
  t.label_probs = Tensor::vector(dirichlet(spec.num_classes, spec.alpha, rng));

  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> dir(spec.input_dim);
  double norm = 0.0;
  for (auto& x : dir) {
    x = n(rng);
    norm += x * x;
  }
  norm = std::sqrt(norm);
  std::uniform_real_distribution<double> mag(0.0, spec.shift_scale);
  const double m = spec.shift_scale > 0.0 ? mag(rng) : 0.0;
  for (auto& x : dir) x = norm > 0.0 ? x / norm * m : 0.0;
  t.shift = Tensor::vector(std::move(dir));
  return t;
}

std::size_t draw_instances(std::size_t lo, std::size_t hi, Rng& rng) {
  std::uniform_int_distribution<std::size_t> d(lo, hi);
  return d(rng);
}

}  // namespace

SequenceClientTruth sequence_client_truth(const SequenceTaskSpec& spec, std::uint32_t client_id) {
  spec.validate();
  check_client(client_id, spec.num_clients);
  return sequence_truth_with(spec, global_chain(spec), client_id);
}

ClassifyClientTruth classify_client_truth(const ClassifyTaskSpec& spec, std::uint32_t client_id) {
  spec.validate();
  check_client(client_id, spec.num_clients);
  return classify_truth_with(spec, classify_global(spec), client_id);
}

std::vector<ClientDataset> generate_sequence_federation(const SequenceTaskSpec& spec) {
  spec.validate();
  const Tensor global = global_chain(spec);
  std::vector<ClientDataset> out;
  out.reserve(spec.num_clients);
  for (std::uint32_t c = 0; c < spec.num_clients; ++c) {
    const auto truth = sequence_truth_with(spec, global, c);
    const Tensor& m = truth.mixed_transitions;
    Rng rng(derive_seed(spec.seed, "seq.sample", {c}));
    std::uniform_int_distribution<std::size_t> start(0, spec.vocab_size - 1);
    std::uniform_int_distribution<std::size_t> length(spec.min_length, spec.max_length);

    ClientDataset ds;
    ds.client_id = c;
    ds.kind = TaskKind::kSequence;
    const std::size_t n = draw_instances(spec.min_instances, spec.max_instances, rng);
    fill_splits(ds, n, [&] {
      Instance inst;
      const std::size_t len = length(rng);
      inst.tokens.reserve(len);
      std::size_t tok = start(rng);
      inst.tokens.push_back(static_cast<std::uint32_t>(tok));
      while (inst.tokens.size() < len) {
        tok = sample_row(m, tok, rng);
        inst.tokens.push_back(static_cast<std::uint32_t>(tok));
      }
      return inst;
    });
    out.push_back(std::move(ds));
  }
  return out;
}

std::vector<ClientDataset> generate_classify_federation(const ClassifyTaskSpec& spec) {
  spec.validate();
  const ClassifyGlobal g = classify_global(spec);
  std::vector<ClientDataset> out;
  out.reserve(spec.num_clients);
  for (std::uint32_t c = 0; c < spec.num_clients; ++c) {
    const auto truth = classify_truth_with(spec, g, c);
    Rng rng(derive_seed(spec.seed, "cls.sample", {c}));
    std::discrete_distribution<std::uint32_t> label(truth.label_probs.values().begin(),
                                                    truth.label_probs.values().end());
    std::normal_distribution<double> noise(0.0, spec.noise);

    ClientDataset ds;
    ds.client_id = c;
    ds.kind = TaskKind::kClassify;
    const std::size_t n = draw_instances(spec.min_instances, spec.max_instances, rng);
    fill_splits(ds, n, [&] {
      Instance inst;
      inst.label = label(rng);
      inst.features.resize(spec.input_dim);
      for (std::size_t j = 0; j < spec.input_dim; ++j)
        inst.features[j] = g.means.at(inst.label, j) + truth.shift[j] + noise(rng);
      return inst;
    });
    out.push_back(std::move(ds));
  }
  return out;
}

Tensor stationary_distribution(const Tensor& transitions) {
  const std::size_t v = transitions.rows();
  if (transitions.rank() != 2 || transitions.cols() != v)
    throw DimensionError("transition matrix must be square, got " + shape_string(transitions.shape()));
  // Power iteration on the lazy chain (I + M) / 2: same stationary
  // distributions as M, but aperiodic, so the iteration converges.
  std::vector<double> pi(v, 1.0 / static_cast<double>(v)), next(v);
  for (int iter = 0; iter < 200000; ++iter) {
    for (std::size_t j = 0; j < v; ++j) next[j] = 0.5 * pi[j];
    for (std::size_t i = 0; i < v; ++i) {
      const double w = 0.5 * pi[i];
      for (std::size_t j = 0; j < v; ++j) next[j] += w * transitions.at(i, j);
    }
    double total = 0.0, change = 0.0;
    for (std::size_t j = 0; j < v; ++j) total += next[j];
    for (std::size_t j = 0; j < v; ++j) {
      next[j] /= total;
      change += std::fabs(next[j] - pi[j]);
    }
    pi.swap(next);
    if (change < 1e-16) break;
  }
  return Tensor::vector(std::move(pi));
}

double markov_kl_rate(const Tensor& client, const Tensor& global) {
  if (!client.same_shape(global))
    throw DimensionError("chains differ in shape: " + shape_string(client.shape()) + " vs " +
                         shape_string(global.shape()));
  const Tensor pi = stationary_distribution(client);
  const std::size_t v = client.rows();
  double kl = 0.0;
  for (std::size_t i = 0; i < v; ++i) {
    if (pi[i] == 0.0) continue;
    double row = 0.0;
    for (std::size_t j = 0; j < v; ++j) {
      const double p = client.at(i, j);
      if (p == 0.0) continue;
      const double q = global.at(i, j);
      if (q == 0.0) throw NumericError("client chain has a transition the global chain forbids");
      row += p * std::log(p / q);
    }
    kl += pi[i] * row;
  }
  return std::max(0.0, kl);
}

double true_client_divergence(const SequenceTaskSpec& spec, std::uint32_t client_id) {
  const auto t = sequence_client_truth(spec, client_id);
  return markov_kl_rate(t.mixed_transitions, t.global_transitions);
}

double true_client_divergence(const ClassifyTaskSpec& spec, std::uint32_t client_id) {
  const auto t = classify_client_truth(spec, client_id);
  const double k = static_cast<double>(spec.num_classes);
  double kl = 0.0;
  for (double p : t.label_probs.values()) {
    if (p > 0.0) kl += p * std::log(p * k);
  }
  double shift2 = 0.0;
  for (double s : t.shift.values()) shift2 += s * s;
  return kl + shift2 / (2.0 * spec.noise * spec.noise);
}

// --- dataset files -----------------------------------------------------------

namespace {

constexpr const char* kDatasetFormat = "dynroute.dataset";

const char* split_name(int s) { return s == 0 ? "train" : s == 1 ? "valid" : "test"; }

}  // namespace

void write_dataset(const std::filesystem::path& path, const DatasetFile& file) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  nlohmann::json header = {{"format", kDatasetFormat},
                           {"version", 1},
                           {"task", to_string(file.kind)},
                           {"num_clients", file.clients.size()},
                           {"spec", file.spec}};
  out << header.dump() << '\n';
  for (const auto& ds : file.clients) {
    const std::vector<Instance>* splits[] = {&ds.train, &ds.valid, &ds.test};
    for (int s = 0; s < 3; ++s) {
      for (const auto& inst : *splits[s]) {
        nlohmann::json rec = {{"client", ds.client_id}, {"split", split_name(s)}};
        if (file.kind == TaskKind::kSequence) {
          rec["tokens"] = inst.tokens;
        } else {
          rec["x"] = inst.features;
          rec["y"] = inst.label;
        }
        out << rec.dump() << '\n';
      }
    }
  }
  if (!out) throw FormatError("write failed for " + path.string());
}

DatasetFile read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open dataset " + path.string());
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& msg) {
    throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + msg);
  };

  DatasetFile file;
  std::size_t num_clients = 0;
  if (!std::getline(in, line)) fail("empty dataset file");
  ++lineno;
  try {
    const auto header = nlohmann::json::parse(line);
    if (header.value("format", "") != kDatasetFormat) fail("not a dynroute dataset file");
    if (header.value("version", 0) != 1) fail("unsupported dataset version");
    file.kind = parse_task_kind(header.at("task").get<std::string>());
    num_clients = header.at("num_clients").get<std::size_t>();
    file.spec = header.value("spec", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    fail(std::string("bad header: ") + e.what());
  } catch (const ConfigError& e) {
    fail(e.what());
  }

  file.clients.resize(num_clients);
  for (std::size_t c = 0; c < num_clients; ++c) {
    file.clients[c].client_id = static_cast<std::uint32_t>(c);
    file.clients[c].kind = file.kind;
  }
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto rec = nlohmann::json::parse(line);
      const auto c = rec.at("client").get<std::size_t>();
      if (c >= num_clients) fail("client id " + std::to_string(c) + " out of range");
      const auto split = rec.at("split").get<std::string>();
      Instance inst;
      if (file.kind == TaskKind::kSequence) {
        inst.tokens = rec.at("tokens").get<std::vector<std::uint32_t>>();
        if (inst.tokens.empty()) fail("empty token sequence");
      } else {
        inst.features = rec.at("x").get<std::vector<double>>();
        inst.label = rec.at("y").get<std::uint32_t>();
        for (double x : inst.features) {
          if (!std::isfinite(x)) fail("non-finite feature");
        }
      }
      auto& ds = file.clients[c];
      if (split == "train") {
        ds.train.push_back(std::move(inst));
      } else if (split == "valid") {
        ds.valid.push_back(std::move(inst));
      } else if (split == "test") {
        ds.test.push_back(std::move(inst));
      } else {
        fail("unknown split '" + split + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      fail(e.what());
    }
  }
  return file;
}

}  // namespace dynroute
