// Copyright (c) 2026, The dynroute Authors
// SPDX-License-Identifier: Apache-2.0

#include "dynroute/experiment.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <spdlog/spdlog.h>
#include <yaml-cpp/yaml.h>

#include "dynroute/checkpoint.hpp"
#include "dynroute/errors.hpp"

namespace dynroute {

namespace fs = std::filesystem;

namespace {

std::string num(double x) { return fmt::format("{}", x); }

std::string ids_field(const std::vector<std::uint32_t>& ids) { return fmt::format("{}", fmt::join(ids, " ")); }

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw FormatError("write failed for " + path.string());
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  for (std::string cell; std::getline(ss, cell, ',');) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

struct Csv {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw FormatError("csv lacks column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  }
};

Csv read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  Csv csv;
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + " is empty");
  csv.header = split_csv(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    csv.rows.push_back(split_csv(line));
    csv.rows.back().resize(csv.header.size());
  }
  return csv;
}

// Smallest config that keeps the model consistent with data loaded from a file
// whose header carries no generator spec.
void infer_spec_from_data(ExperimentConfig& c, const std::vector<ClientDataset>& clients) {
  std::size_t max_token = 0, max_len = 0, max_label = 0, dim = 0;
  for (const auto& ds : clients) {
    for (const auto* split : {&ds.train, &ds.valid, &ds.test}) {
      for (const auto& inst : *split) {
        for (auto t : inst.tokens) max_token = std::max<std::size_t>(max_token, t);
        max_len = std::max(max_len, inst.tokens.size());
        max_label = std::max<std::size_t>(max_label, inst.label);
        dim = std::max(dim, inst.features.size());
      }
    }
  }
  if (c.task == TaskKind::kSequence) {
    c.data.sequence.vocab_size = max_token + 1;
    c.data.sequence.max_length = std::max(c.data.sequence.max_length, max_len);
    c.data.sequence.min_length = std::min(c.data.sequence.min_length, c.data.sequence.max_length);
    c.data.sequence.num_clients = clients.size();
  } else {
    c.data.classify.input_dim = dim;
    c.data.classify.num_classes = max_label + 1;
    c.data.classify.num_clients = clients.size();
  }
}

}  // namespace

LoadedFederation load_federation(const ExperimentConfig& config, std::uint64_t run_seed) {
  LoadedFederation out;
  out.config = config;
  std::vector<ClientDataset> clients;
  if (config.data.source == DataSource::kSynthetic) {
    if (config.task == TaskKind::kSequence) {
      SequenceTaskSpec spec = config.data.sequence;
      spec.seed = config.data_seed(run_seed);
      clients = generate_sequence_federation(spec);
      out.true_divergence = [spec](std::uint32_t id) -> std::optional<double> {
        return true_client_divergence(spec, id);
      };
    } else {
      ClassifyTaskSpec spec = config.data.classify;
      spec.seed = config.data_seed(run_seed);
      clients = generate_classify_federation(spec);
      out.true_divergence = [spec](std::uint32_t id) -> std::optional<double> {
        return true_client_divergence(spec, id);
      };
    }
  } else {
    DatasetFile file = read_dataset(config.data.path);
    if (file.kind != config.task)
      throw ConfigError("dataset " + config.data.path + " holds a " + to_string(file.kind) + " task, config says " +
                        to_string(config.task));
    clients = std::move(file.clients);
    const bool has_spec = file.spec.is_object() && !file.spec.empty();
    if (has_spec && config.task == TaskKind::kSequence) {
      const auto spec = file.spec.get<SequenceTaskSpec>();
      out.config.data.sequence = spec;
      out.true_divergence = [spec](std::uint32_t id) -> std::optional<double> {
        return true_client_divergence(spec, id);
      };
    } else if (has_spec) {
      const auto spec = file.spec.get<ClassifyTaskSpec>();
      out.config.data.classify = spec;
      out.true_divergence = [spec](std::uint32_t id) -> std::optional<double> {
        return true_client_divergence(spec, id);
      };
    }
    infer_spec_from_data(out.config, clients);
    out.config.data.seed.reset();
  }
  out.clients.reserve(clients.size());
  for (auto& ds : clients) out.clients.push_back(std::make_shared<const ClientDataset>(std::move(ds)));
  return out;
}

std::vector<std::uint32_t> training_population(const ExperimentConfig& config, std::size_t num_clients) {
  const std::size_t holdout = config.federation.holdout_clients;
  if (holdout >= num_clients) throw ConfigError("holdout_clients leaves no training clients");
  std::vector<std::uint32_t> ids(num_clients - holdout);
  std::iota(ids.begin(), ids.end(), 0u);
  return ids;
}

namespace {

std::vector<std::uint32_t> eval_pool(const ExperimentConfig& config, std::size_t num_clients) {
  const std::size_t holdout = config.federation.holdout_clients;
  const std::size_t first = holdout > 0 ? num_clients - holdout : 0;
  std::vector<std::uint32_t> ids(num_clients - first);
  std::iota(ids.begin(), ids.end(), static_cast<std::uint32_t>(first));
  return ids;
}

}  // namespace

std::vector<std::uint32_t> final_eval_population(const ExperimentConfig& config, std::size_t num_clients,
                                                 std::uint64_t run_seed) {
  auto ids = eval_pool(config, num_clients);
  if (config.eval.clients > 0 && config.eval.clients < ids.size()) {
    Rng rng(derive_seed(run_seed, "final-eval-sample"));
    ids = sample_clients(ids, config.eval.clients, rng);
    std::sort(ids.begin(), ids.end());
  }
  return ids;
}

double headline_accuracy(const EvalSummary& s, Variant variant) {
  switch (variant) {
    case Variant::kFlow:
      return s.acc_flow;
    case Variant::kGlobalOnly:
    case Variant::kFedAvgPlain:
      return s.acc_global;
    case Variant::kLocalOnly:
      return s.acc_local;
  }
  return s.acc_flow;
}

namespace {

const char* kRoundsHeader =
    "round,sampled,merged,dropped,total_n,train_loss,train_accuracy,train_mean_r_global,eval_acc_flow,"
    "eval_acc_global_route,eval_acc_local_route,eval_mean_r_global\n";

std::string round_row(const RoundReport& r) {
  std::string row = fmt::format("{},{},{},{},{},{},{},{}", r.round, ids_field(r.sampled), ids_field(r.merged),
                                ids_field(r.dropped), r.total_n, num(r.train_loss), num(r.train_accuracy),
                                num(r.train_mean_r_global));
  if (r.eval) {
    row += fmt::format(",{},{},{},{}", num(r.eval->acc_flow), num(r.eval->acc_global), num(r.eval->acc_local),
                       num(r.eval->mean_r_global));
  } else {
    row += ",,,,";
  }
  return row + "\n";
}

nlohmann::json round_json(const RoundReport& r) {
  return {{"round", r.round},
          {"sampled", r.sampled},
          {"merged", r.merged},
          {"n", r.n},
          {"total_n", r.total_n},
          {"dropped", r.dropped},
          {"train_loss", r.train_loss},
          {"train_accuracy", r.train_accuracy},
          {"train_mean_r_global", r.train_mean_r_global},
          {"eval", r.eval ? to_json(*r.eval, false) : nlohmann::json(nullptr)},
          {"wall_ms", r.wall_ms}};
}

std::string clients_csv(const EvalSummary& s) {
  std::string out =
      "client_id,instances,predictions,acc_flow,acc_global_route,acc_local_route,acc_soft,kl_estimate,kl_clamped,"
      "true_divergence,local_instances,global_instances,local_fraction,mean_r_global\n";
  for (const auto& e : s.clients) {
    out += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n", e.client_id, e.instances, e.predictions,
                       num(e.acc_flow), num(e.acc_global), num(e.acc_local), e.acc_soft ? num(*e.acc_soft) : "",
                       num(e.kl.value), e.kl.clamped ? 1 : 0, e.true_divergence ? num(*e.true_divergence) : "",
                       e.local_instances, e.global_instances, num(e.local_fraction), num(e.mean_r_global));
  }
  return out;
}

std::string routing_csv(const EvalSummary& s) {
  std::string out = "timestep,client_id,mean_r_local,std_r_local,count\n";
  for (const auto& e : s.clients) {
    for (std::size_t t = 0; t < e.routing.mean_r_local.size(); ++t) {
      out += fmt::format("{},{},{},{},{}\n", t + 1, e.client_id, num(e.routing.mean_r_local[t]),
                         num(e.routing.std_r_local[t]), e.routing.count[t]);
    }
  }
  return out;
}

nlohmann::json seed_summary(const SeedResult& r, Variant variant) {
  const auto& s = r.final_eval;
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"seed", r.seed},
          {"headline_accuracy", headline_accuracy(s, variant)},
          {"acc_flow", s.acc_flow},
          {"acc_global_route", s.acc_global},
          {"acc_local_route", s.acc_local},
          {"acc_soft", opt(s.acc_soft)},
          {"mean_r_global", s.mean_r_global},
          {"flow_i_pct", s.flow_vs_local.i_pct},
          {"global_route_i_pct", s.global_vs_local.i_pct},
          {"flow_c_pct", s.flow_vs_local.c_pct},
          {"rho_kl_routing", opt(s.rho_kl_routing)},
          {"rho_true_routing", opt(s.rho_true_routing)}};
}

}  // namespace

SeedResult run_seed(const ExperimentConfig& config, std::uint64_t seed, const fs::path& dir) {
  const LoadedFederation fed = load_federation(config, seed);
  const ExperimentConfig& cfg = fed.config;
  const ModelDims dims = cfg.dims();
  dims.validate();
  const std::size_t n_clients = fed.clients.size();
  if (n_clients == 0) throw ConfigError("federation has no clients");

  RoundContext ctx;
  const auto clients = fed.clients;
  // A fresh handle per request: nothing a client does can outlive its round.
  ctx.clients = [clients](std::uint32_t id) -> std::shared_ptr<const Client> {
    if (id >= clients.size()) return nullptr;
    return std::make_shared<const Client>(clients[id]);
  };
  ctx.hyper = cfg.train;
  ctx.variant = cfg.variant;
  ctx.federation.rounds = cfg.federation.rounds;
  ctx.federation.clients_per_round = cfg.federation.clients_per_round;
  ctx.federation.population = training_population(cfg, n_clients);
  ctx.federation.eval_population = eval_pool(cfg, n_clients);
  ctx.federation.eval_every = cfg.federation.eval_every;
  ctx.federation.eval_clients = cfg.federation.eval_clients;
  ctx.federation.workers = cfg.workers;
  ctx.federation.checkpoint_every = cfg.federation.checkpoint_every;
  ctx.federation.failure_policy = cfg.federation.failure_policy;
  ctx.federation.seed = seed;
  ctx.eval.split = EvalSplit::kValid;
  ctx.eval.kl_split = cfg.eval.kl_split;

  std::ofstream rounds_csv, rounds_jsonl;
  std::vector<std::string> checkpoints;
  if (!dir.empty()) {
    fs::create_directories(dir / "checkpoints");
    rounds_csv.open(dir / "rounds.csv");
    rounds_jsonl.open(dir / "rounds.jsonl");
    if (!rounds_csv || !rounds_jsonl) throw FormatError("cannot create round logs in " + dir.string());
    rounds_csv << kRoundsHeader;
  }
  const RoundObserver observer = [&](const RoundReport& r, const GlobalModel& g) {
    spdlog::debug("seed {} round {}: loss {:.4f} acc {:.4f}", seed, r.round, r.train_loss, r.train_accuracy);
    if (dir.empty()) return;
    rounds_csv << round_row(r) << std::flush;
    rounds_jsonl << round_json(r).dump() << '\n' << std::flush;
    if (cfg.federation.checkpoint_every > 0 && (r.round + 1) % cfg.federation.checkpoint_every == 0) {
      const std::string name = fmt::format("checkpoints/round_{:04d}.json", r.round + 1);
      save_checkpoint(g, dir / name);
      checkpoints.push_back(name);
    }
  };

  SeedResult result;
  result.seed = seed;
  const GlobalModel initial = GlobalModel::init(dims, derive_seed(seed, "init"));
  TrainingResult trained = run_training(initial, ctx, observer);
  result.model = std::move(trained.global);
  result.reports = std::move(trained.reports);

  const auto eval_ids = final_eval_population(cfg, n_clients, seed);
  std::vector<const ClientDataset*> eval_data;
  for (auto id : eval_ids) eval_data.push_back(fed.clients[id].get());
  EvalOptions opts;
  opts.split = cfg.eval.split;
  opts.kl_split = cfg.eval.kl_split;
  opts.soft_inference = cfg.eval.soft_inference;
  opts.workers = cfg.workers;
  opts.seed = derive_seed(seed, "final-eval");
  result.final_eval = evaluate_clients(result.model, eval_data, cfg.train, opts, fed.true_divergence);

  if (!dir.empty()) {
    save_checkpoint(result.model, dir / "checkpoints" / "final.json");
    nlohmann::json eval = to_json(result.final_eval);
    eval["variant"] = to_string(cfg.variant);
    eval["seed"] = seed;
    eval["split"] = to_string(cfg.eval.split);
    eval["eval_clients"] = eval_ids;
    eval["headline_accuracy"] = headline_accuracy(result.final_eval, cfg.variant);
    write_json(dir / "final_eval.json", eval);
    write_text(dir / "clients.csv", clients_csv(result.final_eval));
    write_text(dir / "routing.csv", routing_csv(result.final_eval));

    auto rounds = nlohmann::json::array();
    for (const auto& r : result.reports) rounds.push_back({{"round", r.round}, {"sampled", r.sampled}});
    const auto counts = param_counts(DynamicPersonalizedModel::assemble(
        result.model, LocalParams::copy_of(result.model), RoutingPolicy::zeros(dims.gate_input_dim(), cfg.train.tau),
        ExecMode::kHard));
    const nlohmann::json manifest = {
        {"format", "dynroute.manifest"},
        {"version", kVersion},
        {"seed", seed},
        {"data_seed", cfg.data.source == DataSource::kSynthetic ? nlohmann::json(cfg.data_seed(seed))
                                                                : nlohmann::json(nullptr)},
        {"config", to_json(cfg)},
        {"dims", dims_to_json(dims)},
        {"param_counts", {{"global", counts.global}, {"local", counts.local}, {"policy", counts.policy}}},
        {"rounds", rounds},
        {"files",
         {{"rounds_csv", "rounds.csv"},
          {"rounds_jsonl", "rounds.jsonl"},
          {"final_eval", "final_eval.json"},
          {"clients_csv", "clients.csv"},
          {"routing_csv", "routing.csv"},
          {"checkpoints", checkpoints},
          {"final_checkpoint", "checkpoints/final.json"}}}};
    write_json(dir / "manifest.json", manifest);
  }
  return result;
}

fs::path output_root(const ExperimentConfig& config) {
  if (const char* env = std::getenv(kOutputRootEnv); env && *env) return fs::path(env);
  return fs::path(config.output_dir);
}

ExperimentConfig load_config_or_manifest(const fs::path& path, const std::vector<Override>& overrides) {
  if (path.extension() == ".json") {
    const auto j = read_json(path);
    if (!j.contains("config")) throw ConfigError(path.string() + " is not a run manifest");
    // JSON is a subset of YAML, so the embedded config goes through the same validation.
    return parse_config_text(j.at("config").dump(), overrides);
  }
  return load_config(path, overrides);
}

namespace {

std::vector<SeedResult> run_into(const ExperimentConfig& config, const fs::path& dir) {
  fs::create_directories(dir);
  write_text(dir / "config.yaml", to_yaml(config));
  std::vector<SeedResult> results;
  auto seeds = nlohmann::json::array();
  double mean = 0.0;
  for (auto seed : config.seeds) {
    spdlog::info("{}: seed {}", dir.string(), seed);
    results.push_back(run_seed(config, seed, dir / fmt::format("seed_{}", seed)));
    seeds.push_back(seed_summary(results.back(), config.variant));
    mean += headline_accuracy(results.back().final_eval, config.variant) / static_cast<double>(config.seeds.size());
  }
  write_json(dir / "run.json", {{"name", config.name},
                                {"variant", to_string(config.variant)},
                                {"version", kVersion},
                                {"seeds", seeds},
                                {"mean_headline_accuracy", mean}});
  return results;
}

}  // namespace

fs::path cmd_run(const ExperimentConfig& config) {
  config.validate();
  const fs::path dir = output_root(config) / config.name;
  run_into(config, dir);
  return dir;
}

nlohmann::json cmd_eval(const ExperimentConfig& config, const fs::path& checkpoint) {
  config.validate();
  const GlobalModel model = load_checkpoint(checkpoint);
  const std::uint64_t seed = config.seeds.front();
  const LoadedFederation fed = load_federation(config, seed);
  const ModelDims dims = fed.config.dims();
  if (!(model.dims == dims)) {
    throw ProtocolError("checkpoint dims " + dims_to_json(model.dims).dump() + " do not match the config " +
                        dims_to_json(dims).dump());
  }
  const auto ids = final_eval_population(fed.config, fed.clients.size(), seed);
  std::vector<const ClientDataset*> data;
  for (auto id : ids) data.push_back(fed.clients[id].get());
  EvalOptions opts;
  opts.split = config.eval.split;
  opts.kl_split = config.eval.kl_split;
  opts.soft_inference = config.eval.soft_inference;
  opts.workers = config.workers;
  opts.seed = derive_seed(seed, "final-eval");
  const EvalSummary s = evaluate_clients(model, data, fed.config.train, opts, fed.true_divergence);
  nlohmann::json j = to_json(s);
  j["seed"] = seed;
  j["split"] = to_string(config.eval.split);
  j["eval_clients"] = ids;
  j["checkpoint_hash"] = fmt::format("{:016x}", model.hash());
  return j;
}

fs::path cmd_sweep(const ExperimentConfig& config) {
  config.validate();
  if (!config.sweep.axis) throw ConfigError("sweep.axis is not set");
  if (config.sweep.values.empty()) throw ConfigError("sweep.values is empty");
  const SweepAxis axis = *config.sweep.axis;
  const fs::path dir = output_root(config) / config.name;
  fs::create_directories(dir);
  write_text(dir / "config.yaml", to_yaml(config));

  std::string merged = "axis,value,seed,round,train_loss,train_accuracy,train_mean_r_global,eval_acc_flow\n";
  std::string summary =
      "axis,value,seed,acc_flow,acc_global_route,acc_local_route,mean_r_global,flow_i_pct,global_route_i_pct,"
      "flow_c_pct\n";
  auto runs = nlohmann::json::array();
  for (double v : config.sweep.values) {
    const std::string label = num(v);
    const std::string sub = to_string(axis) + "_" + label;
    ExperimentConfig c = with_axis_value(config, axis, v);
    c.name = config.name + "-" + sub;
    const auto results = run_into(c, dir / sub);
    runs.push_back({{"value", v}, {"label", label}, {"dir", sub}});
    for (const auto& r : results) {
      for (const auto& rep : r.reports) {
        merged += fmt::format("{},{},{},{},{},{},{},{}\n", to_string(axis), label, r.seed, rep.round,
                              num(rep.train_loss), num(rep.train_accuracy), num(rep.train_mean_r_global),
                              rep.eval ? num(rep.eval->acc_flow) : "");
      }
      const auto& s = r.final_eval;
      summary += fmt::format("{},{},{},{},{},{},{},{},{},{}\n", to_string(axis), label, r.seed, num(s.acc_flow),
                             num(s.acc_global), num(s.acc_local), num(s.mean_r_global), num(s.flow_vs_local.i_pct),
                             num(s.global_vs_local.i_pct), num(s.flow_vs_local.c_pct));
    }
  }
  write_text(dir / "sweep.csv", merged);
  write_text(dir / "sweep_summary.csv", summary);
  write_json(dir / "sweep.json", {{"axis", to_string(axis)}, {"values", config.sweep.values}, {"runs", runs}});
  return dir;
}

namespace {

struct RunSource {
  std::string group;
  fs::path dir;
};

std::vector<fs::path> seed_dirs(const fs::path& run) {
  std::vector<std::pair<std::uint64_t, fs::path>> found;
  if (!fs::is_directory(run)) return {};
  for (const auto& entry : fs::directory_iterator(run)) {
    const auto name = entry.path().filename().string();
    if (entry.is_directory() && name.rfind("seed_", 0) == 0) {
      try {
        found.emplace_back(std::stoull(name.substr(5)), entry.path());
      } catch (const std::exception&) {
      }
    }
  }
  std::sort(found.begin(), found.end());
  std::vector<fs::path> out;
  for (auto& [s, p] : found) out.push_back(p);
  return out;
}

}  // namespace

ExportResult cmd_export_plots(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ConfigError(dir.string() + " is not a directory");
  std::vector<RunSource> sources;
  if (fs::exists(dir / "sweep.json")) {
    const auto sweep = read_json(dir / "sweep.json");
    for (const auto& r : sweep.at("runs")) sources.push_back({r.at("label").get<std::string>(), dir / r.at("dir").get<std::string>()});
  } else {
    sources.push_back({dir.filename().string(), dir});
  }

  ExportResult result;
  std::string metrics = "group,round,seed,variant,metric,value\n";
  std::string accuracy = "group,round,seed,variant,train_accuracy,eval_acc_flow\n";
  std::string routing = "group,seed,timestep,client_id,mean_r_local,std_r_local,count\n";
  const std::vector<std::string> metric_cols = {"train_loss",          "train_accuracy",        "train_mean_r_global",
                                                "eval_acc_flow",       "eval_acc_global_route", "eval_acc_local_route",
                                                "eval_mean_r_global"};
  bool any = false;
  for (const auto& src : sources) {
    const auto seeds = seed_dirs(src.dir);
    if (seeds.empty()) result.missing.push_back(src.dir / "seed_*");
    for (const auto& sd : seeds) {
      if (!fs::exists(sd / "manifest.json")) {
        result.missing.push_back(sd / "manifest.json");
        continue;
      }
      const auto manifest = read_json(sd / "manifest.json");
      const auto seed = manifest.at("seed").get<std::uint64_t>();
      const auto variant = manifest.at("config").at("variant").get<std::string>();
      if (fs::exists(sd / "rounds.csv")) {
        any = true;
        const Csv csv = read_csv(sd / "rounds.csv");
        const std::size_t round_col = csv.column("round");
        for (const auto& row : csv.rows) {
          for (const auto& m : metric_cols) {
            const auto& v = row[csv.column(m)];
            if (v.empty()) continue;
            metrics += fmt::format("{},{},{},{},{},{}\n", src.group, row[round_col], seed, variant, m, v);
          }
          accuracy += fmt::format("{},{},{},{},{},{}\n", src.group, row[round_col], seed, variant,
                                  row[csv.column("train_accuracy")], row[csv.column("eval_acc_flow")]);
        }
      } else {
        result.missing.push_back(sd / "rounds.csv");
      }
      if (fs::exists(sd / "routing.csv")) {
        any = true;
        const Csv csv = read_csv(sd / "routing.csv");
        for (const auto& row : csv.rows) {
          routing += fmt::format("{},{},{},{},{},{},{}\n", src.group, seed, row[csv.column("timestep")],
                                 row[csv.column("client_id")], row[csv.column("mean_r_local")],
                                 row[csv.column("std_r_local")], row[csv.column("count")]);
        }
      } else {
        result.missing.push_back(sd / "routing.csv");
      }
    }
  }
  for (const auto& m : result.missing) spdlog::warn("export-plots: missing {}", m.string());
  if (!any) throw FormatError("export-plots: no run files found under " + dir.string());

  const fs::path out = dir / "plots";
  write_text(out / "metrics_long.csv", metrics);
  write_text(out / "accuracy.csv", accuracy);
  write_text(out / "routing_long.csv", routing);
  result.written = {out / "metrics_long.csv", out / "accuracy.csv", out / "routing_long.csv"};
  return result;
}

fs::path cmd_gen_data(const ExperimentConfig& config, const fs::path& out) {
  config.validate();
  if (config.data.source != DataSource::kSynthetic) throw ConfigError("gen-data needs data.source = synthetic");
  const std::uint64_t seed = config.data_seed(config.seeds.front());
  const LoadedFederation fed = load_federation(config, config.seeds.front());
  DatasetFile file;
  file.kind = config.task;
  if (config.task == TaskKind::kSequence) {
    SequenceTaskSpec spec = config.data.sequence;
    spec.seed = seed;
    file.spec = spec;
  } else {
    ClassifyTaskSpec spec = config.data.classify;
    spec.seed = seed;
    file.spec = spec;
  }
  for (const auto& c : fed.clients) file.clients.push_back(*c);
  write_dataset(out, file);
  return out;
}

}  // namespace dynroute
