// Copyright (c) 2026, The dynroute Authors
// SPDX-License-Identifier: Apache-2.0

#include "dynroute/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "dynroute/errors.hpp"

namespace dynroute {

std::string to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::kGamma:
      return "gamma";
    case SweepAxis::kLocalEpochs:
      return "local_epochs";
    case SweepAxis::kTau:
      return "tau";
    case SweepAxis::kLambda:
      return "lambda";
  }
  return "?";
}

SweepAxis parse_sweep_axis(std::string_view s) {
  if (s == "gamma") return SweepAxis::kGamma;
  if (s == "local_epochs") return SweepAxis::kLocalEpochs;
  if (s == "tau") return SweepAxis::kTau;
  if (s == "lambda") return SweepAxis::kLambda;
  throw ConfigError("unknown sweep axis '" + std::string(s) + "' (expected gamma|local_epochs|tau|lambda)");
}

ModelDims ExperimentConfig::dims() const {
  ModelDims d;
  d.task = task;
  d.cell = model.cell;
  d.hidden_dim = model.hidden_dim;
  d.encoder_hidden = model.encoder_hidden;
  d.decoder_hidden = model.decoder_hidden;
  if (task == TaskKind::kSequence) {
    d.vocab_size = data.sequence.vocab_size;
    d.num_classes = data.sequence.vocab_size;
    d.embed_dim = model.embed_dim;
    d.max_seq_len = model.max_seq_len ? model.max_seq_len : data.sequence.max_length;
  } else {
    d.input_dim = data.classify.input_dim;
    d.num_classes = data.classify.num_classes;
  }
  return d;
}

void ExperimentConfig::validate() const {
  if (name.empty() || name.find('/') != std::string::npos || name == "." || name == "..")
    throw ConfigError("name must be a non-empty directory-safe string");
  if (seeds.empty()) throw ConfigError("seeds must list at least one seed");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
    throw ConfigError("seeds contain duplicates");
  if (workers == 0) throw ConfigError("workers must be at least 1");
  if (data.source == DataSource::kFile && data.path.empty()) throw ConfigError("data.source=file needs data.path");
  if (data.source == DataSource::kSynthetic) {
    if (task == TaskKind::kSequence) {
      data.sequence.validate();
    } else {
      data.classify.validate();
    }
  }
  dims().validate();
  if (task == TaskKind::kSequence && model.max_seq_len && model.max_seq_len < data.sequence.max_length)
    throw ConfigError("model.max_seq_len is shorter than data.sequence.max_length");
  train.validate();
  const std::size_t clients = task == TaskKind::kSequence ? data.sequence.num_clients : data.classify.num_clients;
  if (federation.clients_per_round == 0) throw ConfigError("federation.clients_per_round must be at least 1");
  if (data.source == DataSource::kSynthetic) {
    if (federation.holdout_clients >= clients)
      throw ConfigError("federation.holdout_clients must leave at least one training client");
    if (federation.clients_per_round > clients - federation.holdout_clients)
      throw ConfigError("federation.clients_per_round exceeds the number of training clients");
  }
  if (sweep.axis && sweep.values.empty()) throw ConfigError("sweep.values is empty");
  if (sweep.axis && *sweep.axis == SweepAxis::kLambda && task != TaskKind::kSequence)
    throw ConfigError("the lambda axis applies to sequence tasks only");
}

// --- parsing -----------------------------------------------------------------------

namespace {

std::string line_of(const YAML::Node& n) {
  const auto m = n.Mark();
  if (m.is_null()) return "";
  return "line " + std::to_string(m.line + 1) + ": ";
}

class MapReader {
 public:
  MapReader(const YAML::Node& node, std::string path) : node_(node), path_(std::move(path)) {
    if (node_ && !node_.IsNull() && !node_.IsMap())
      throw ConfigError(line_of(node_) + "'" + (path_.empty() ? std::string("<root>") : path_) + "' must be a mapping");
  }

  ~MapReader() = default;

  bool has(const char* key) const { return node_ && node_.IsMap() && node_[key]; }

  YAML::Node raw(const char* key) {
    seen_.insert(key);
    return has(key) ? node_[key] : YAML::Node();
  }

  MapReader child(const char* key) { return MapReader(raw(key), qualify(key)); }

  template <class T>
  void get(const char* key, T& out) {
    const YAML::Node n = raw(key);
    if (!n || n.IsNull()) return;
    out = convert<T>(n, qualify(key));
  }

  template <class T>
  void get_optional(const char* key, std::optional<T>& out) {
    const YAML::Node n = raw(key);
    if (!n) return;
    if (n.IsNull()) {
      out.reset();
      return;
    }
    out = convert<T>(n, qualify(key));
  }

  template <class E, class Parse>
  void get_enum(const char* key, E& out, Parse parse) {
    const YAML::Node n = raw(key);
    if (!n || n.IsNull()) return;
    const auto s = convert<std::string>(n, qualify(key));
    try {
      out = parse(s);
    } catch (const ConfigError& e) {
      throw ConfigError(line_of(n) + qualify(key) + ": " + e.what());
    }
  }

  void finish() const {
    if (!node_ || !node_.IsMap()) return;
    for (const auto& kv : node_) {
      const auto key = kv.first.as<std::string>();
      if (!seen_.count(key)) throw ConfigError(line_of(kv.first) + "unknown key '" + qualify(key.c_str()) + "'");
    }
  }

  template <class T>
  static T convert(const YAML::Node& n, const std::string& where) {
    try {
      if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
        if (!n.IsScalar()) throw ConfigError("expected a non-negative integer");
        const auto s = n.as<std::string>();
        if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
          throw ConfigError("expected a non-negative integer, got '" + s + "'");
        return static_cast<T>(std::stoull(s));
      } else if constexpr (std::is_same_v<T, double>) {
        if (!n.IsScalar()) throw ConfigError("expected a number");
        const double v = n.as<double>();
        if (!std::isfinite(v)) throw ConfigError("expected a finite number");
        return v;
      } else if constexpr (std::is_same_v<T, std::vector<std::size_t>> ||
                           std::is_same_v<T, std::vector<std::uint64_t>> || std::is_same_v<T, std::vector<double>>) {
        using V = typename T::value_type;
        T out;
        if (n.IsScalar()) {
          out.push_back(convert<V>(n, where));
          return out;
        }
        if (!n.IsSequence()) throw ConfigError("expected a list");
        for (const auto& item : n) out.push_back(convert<V>(item, where));
        return out;
      } else {
        if (!n.IsScalar()) throw ConfigError("expected a scalar");
        return n.as<T>();
      }
    } catch (const YAML::Exception& e) {
      throw ConfigError(line_of(n) + where + ": " + e.msg);
    } catch (const ConfigError& e) {
      throw ConfigError(line_of(n) + where + ": " + e.what());
    } catch (const std::out_of_range&) {
      throw ConfigError(line_of(n) + where + ": value out of range");
    }
  }

 private:
  std::string qualify(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  YAML::Node node_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_sequence_spec(MapReader r, SequenceTaskSpec& s) {
  r.get("vocab_size", s.vocab_size);
  r.get("min_length", s.min_length);
  r.get("max_length", s.max_length);
  r.get("num_clients", s.num_clients);
  r.get("min_instances", s.min_instances);
  r.get("max_instances", s.max_instances);
  r.get("lambda", s.lambda);
  r.get("global_concentration", s.global_concentration);
  r.get("client_concentration", s.client_concentration);
  r.get("client_skew_min", s.client_skew_min);
  r.get("client_skew_max", s.client_skew_max);
  r.finish();
}

void read_classify_spec(MapReader r, ClassifyTaskSpec& s) {
  r.get("input_dim", s.input_dim);
  r.get("num_classes", s.num_classes);
  r.get("num_clients", s.num_clients);
  r.get("min_instances", s.min_instances);
  r.get("max_instances", s.max_instances);
  r.get("alpha", s.alpha);
  r.get("shift_scale", s.shift_scale);
  r.get("class_separation", s.class_separation);
  r.get("noise", s.noise);
  r.finish();
}

}  // namespace

ExperimentConfig parse_config(const YAML::Node& root) {
  MapReader r(root, "");
  ExperimentConfig c;
  r.get("name", c.name);
  r.get_enum("task", c.task, parse_task_kind);
  r.get_enum("variant", c.variant, parse_variant);
  r.get("seeds", c.seeds);
  r.get("output_dir", c.output_dir);
  r.get("workers", c.workers);
  c.train = TrainHyper::defaults_for(c.task);

  {
    MapReader d = r.child("data");
    d.get_enum("source", c.data.source, [](std::string_view s) {
      if (s == "synthetic") return DataSource::kSynthetic;
      if (s == "file") return DataSource::kFile;
      throw ConfigError("unknown data source '" + std::string(s) + "' (expected synthetic|file)");
    });
    d.get("path", c.data.path);
    d.get_optional("seed", c.data.seed);
    read_sequence_spec(d.child("sequence"), c.data.sequence);
    read_classify_spec(d.child("classify"), c.data.classify);
    d.finish();
  }
  {
    MapReader m = r.child("model");
    m.get_enum("cell", c.model.cell, parse_cell_kind);
    m.get("embed_dim", c.model.embed_dim);
    m.get("hidden_dim", c.model.hidden_dim);
    m.get("encoder_hidden", c.model.encoder_hidden);
    m.get("decoder_hidden", c.model.decoder_hidden);
    m.get("max_seq_len", c.model.max_seq_len);
    m.finish();
  }
  {
    MapReader t = r.child("train");
    t.get("local_epochs", c.train.local_epochs);
    t.get("global_epochs", c.train.global_epochs);
    t.get("local_lr", c.train.local_lr);
    t.get("global_lr", c.train.global_lr);
    t.get("tau", c.train.tau);
    t.get("gamma", c.train.gamma);
    t.get("batch_size", c.train.batch_size);
    t.get("clip_norm", c.train.clip_norm);
    t.get_enum("local_stage", c.train.local_stage, parse_local_stage_forward);
    t.get_enum("policy_init", c.train.policy_init, parse_policy_init);
    t.get_optional("pre_inference_epochs", c.train.pre_inference_epochs);
    t.finish();
  }
  {
    MapReader f = r.child("federation");
    f.get("rounds", c.federation.rounds);
    f.get("clients_per_round", c.federation.clients_per_round);
    f.get("holdout_clients", c.federation.holdout_clients);
    f.get("eval_every", c.federation.eval_every);
    f.get("eval_clients", c.federation.eval_clients);
    f.get("checkpoint_every", c.federation.checkpoint_every);
    f.get_enum("failure_policy", c.federation.failure_policy, parse_failure_policy);
    f.finish();
  }
  {
    MapReader e = r.child("eval");
    e.get_enum("split", c.eval.split, parse_eval_split);
    e.get_enum("kl_split", c.eval.kl_split, parse_eval_split);
    e.get("soft_inference", c.eval.soft_inference);
    e.get("clients", c.eval.clients);
    e.finish();
  }
  {
    MapReader s = r.child("sweep");
    std::optional<std::string> axis;
    s.get_optional("axis", axis);
    if (axis) c.sweep.axis = parse_sweep_axis(*axis);
    s.get("values", c.sweep.values);
    s.finish();
  }
  r.finish();
  c.validate();
  return c;
}

Override parse_override(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + text + "' is not key.path=value");
  return {text.substr(0, eq), text.substr(eq + 1)};
}

namespace {

void set_path(YAML::Node node, const std::vector<std::string>& keys, std::size_t i, const YAML::Node& value) {
  if (i + 1 == keys.size()) {
    node[keys[i]] = value;
    return;
  }
  YAML::Node child = node[keys[i]];
  if (!child.IsMap()) child = YAML::Node(YAML::NodeType::Map);
  set_path(child, keys, i + 1, value);
}

void apply_override(YAML::Node& root, const Override& o) {
  std::vector<std::string> keys;
  std::stringstream ss(o.path);
  for (std::string k; std::getline(ss, k, '.');) {
    if (k.empty()) throw ConfigError("override path '" + o.path + "' has an empty component");
    keys.push_back(k);
  }
  YAML::Node value;
  try {
    value = YAML::Load(o.value);
  } catch (const YAML::Exception& e) {
    throw ConfigError("override " + o.path + ": " + e.msg);
  }
  if (!root || root.IsNull()) root = YAML::Node(YAML::NodeType::Map);
  if (!root.IsMap()) throw ConfigError("config root must be a mapping");
  set_path(root, keys, 0, value);
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text, const std::vector<Override>& overrides) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError("line " + std::to_string(e.mark.line + 1) + ": " + e.msg);
  }
  for (const auto& o : overrides) apply_override(root, o);
  return parse_config(root);
}

ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<Override>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return parse_config_text(buf.str(), overrides);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

// --- serialisation ------------------------------------------------------------------

nlohmann::json to_json(const ExperimentConfig& c) {
  using nlohmann::json;
  const auto& t = c.train;
  const auto& f = c.federation;
  json j;
  j["name"] = c.name;
  j["task"] = to_string(c.task);
  j["variant"] = to_string(c.variant);
  j["seeds"] = c.seeds;
  j["output_dir"] = c.output_dir;
  j["workers"] = c.workers;
  j["data"] = {{"source", c.data.source == DataSource::kSynthetic ? "synthetic" : "file"},
               {"path", c.data.path},
               {"seed", c.data.seed ? json(*c.data.seed) : json(nullptr)},
               {"sequence", c.data.sequence},
               {"classify", c.data.classify}};
  j["data"]["sequence"].erase("seed");
  j["data"]["classify"].erase("seed");
  j["model"] = {{"cell", to_string(c.model.cell)},
                {"embed_dim", c.model.embed_dim},
                {"hidden_dim", c.model.hidden_dim},
                {"encoder_hidden", c.model.encoder_hidden},
                {"decoder_hidden", c.model.decoder_hidden},
                {"max_seq_len", c.model.max_seq_len}};
  j["train"] = {{"local_epochs", t.local_epochs},
                {"global_epochs", t.global_epochs},
                {"local_lr", t.local_lr},
                {"global_lr", t.global_lr},
                {"tau", t.tau},
                {"gamma", t.gamma},
                {"batch_size", t.batch_size},
                {"clip_norm", t.clip_norm},
                {"local_stage", to_string(t.local_stage)},
                {"policy_init", to_string(t.policy_init)},
                {"pre_inference_epochs", t.pre_inference_epochs ? json(*t.pre_inference_epochs) : json(nullptr)}};
  j["federation"] = {{"rounds", f.rounds},
                     {"clients_per_round", f.clients_per_round},
                     {"holdout_clients", f.holdout_clients},
                     {"eval_every", f.eval_every},
                     {"eval_clients", f.eval_clients},
                     {"checkpoint_every", f.checkpoint_every},
                     {"failure_policy", to_string(f.failure_policy)}};
  j["eval"] = {{"split", to_string(c.eval.split)},
               {"kl_split", to_string(c.eval.kl_split)},
               {"soft_inference", c.eval.soft_inference},
               {"clients", c.eval.clients}};
  j["sweep"] = {{"axis", c.sweep.axis ? json(to_string(*c.sweep.axis)) : json(nullptr)},
                {"values", c.sweep.values}};
  return j;
}

namespace {

void emit(YAML::Emitter& out, const nlohmann::json& j) {
  switch (j.type()) {
    case nlohmann::json::value_t::object:
      out << YAML::BeginMap;
      for (const auto& [k, v] : j.items()) {
        out << YAML::Key << k << YAML::Value;
        emit(out, v);
      }
      out << YAML::EndMap;
      break;
    case nlohmann::json::value_t::array:
      out << YAML::Flow << YAML::BeginSeq;
      for (const auto& v : j) emit(out, v);
      out << YAML::EndSeq;
      break;
    case nlohmann::json::value_t::string:
      out << j.get<std::string>();
      break;
    case nlohmann::json::value_t::null:
      out << YAML::Null;
      break;
    default:
      out << j.dump();  // shortest round-trip form for numbers, true/false for booleans
      break;
  }
}

}  // namespace

std::string to_yaml(const ExperimentConfig& config) {
  YAML::Emitter out;
  emit(out, to_json(config));
  return std::string(out.c_str()) + "\n";
}

ExperimentConfig with_axis_value(const ExperimentConfig& config, SweepAxis axis, double value) {
  ExperimentConfig c = config;
  switch (axis) {
    case SweepAxis::kGamma:
      c.train.gamma = value;
      break;
    case SweepAxis::kTau:
      c.train.tau = value;
      break;
    case SweepAxis::kLocalEpochs:
      if (value < 0.0 || std::floor(value) != value)
        throw ConfigError("local_epochs sweep values must be non-negative integers");
      c.train.local_epochs = static_cast<std::size_t>(value);
      break;
    case SweepAxis::kLambda:
      if (c.task != TaskKind::kSequence) throw ConfigError("the lambda axis applies to sequence tasks only");
      c.data.sequence.lambda = value;
      break;
  }
  c.sweep = {};
  c.validate();
  return c;
}

}  // namespace dynroute
