// Copyright (c) 2026, The dynroute Authors
// SPDX-License-Identifier: Apache-2.0

#include "dynroute/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dynroute/errors.hpp"
#include "dynroute/parallel.hpp"

namespace dynroute {

namespace {

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

double prob_of(const Tensor& logits, std::size_t label) { return softmax_temperature(logits, 1.0)[label]; }

double mean_of(std::span<const double> v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

ScoredRun score_instances(const DynamicPersonalizedModel& model, std::span<const Instance> instances) {
  ScoredRun run;
  run.r_local.reserve(instances.size());
  run.routes.reserve(instances.size());
  for (const auto& inst : instances) {
    std::vector<double> rl;
    std::vector<Route> routes;
    if (inst.is_sequence()) {
      if (inst.tokens.size() >= 2) {
        const std::span<const std::uint32_t> tokens(inst.tokens);
        const SequenceOutput out = forward_sequence(model, tokens.first(tokens.size() - 1), model.mode);
        for (std::size_t t = 0; t < out.logits.size(); ++t) {
          const std::uint32_t target = tokens[t + 1];
          run.correct.push_back(argmax(out.logits[t].values()) == target);
          run.p_true.push_back(prob_of(out.logits[t], target));
          rl.push_back(1.0 - out.r_global[t]);
          routes.push_back(out.routes[t]);
        }
      }
    } else {
      const InstanceOutput out = forward_instance(model, Tensor::vector(inst.features), model.mode);
      run.correct.push_back(argmax(out.logits.values()) == inst.label);
      run.p_true.push_back(prob_of(out.logits, inst.label));
      rl.push_back(1.0 - out.r_global);
      routes.push_back(out.route);
    }
    run.r_local.push_back(std::move(rl));
    run.routes.push_back(std::move(routes));
  }
  return run;
}

double accuracy_of(std::span<const std::uint8_t> correct) {
  if (correct.empty()) throw MetricError("accuracy over no predictions");
  const auto hits = std::count(correct.begin(), correct.end(), std::uint8_t{1});
  return static_cast<double>(hits) / static_cast<double>(correct.size());
}

double accuracy(const DynamicPersonalizedModel& model, std::span<const Instance> instances) {
  if (instances.empty()) throw MetricError("accuracy over an empty instance list");
  return accuracy_of(score_instances(model, instances).correct);
}

KlEstimate kl_from_probs(std::span<const double> p_local, std::span<const double> p_global) {
  if (p_local.size() != p_global.size()) throw DimensionError("kl_estimate inputs differ in length");
  KlEstimate k;
  for (std::size_t i = 0; i < p_local.size(); ++i) {
    const double pl = std::clamp(p_local[i], kLogFloor, 1.0);
    const double pg = std::clamp(p_global[i], kLogFloor, 1.0);
    k.raw += pl * std::log(pl / pg);
  }
  k.clamped = k.raw < 0.0;
  k.value = std::max(k.raw, 0.0);
  return k;
}

namespace {

DynamicPersonalizedModel pinned(const DynamicPersonalizedModel& model, Route route) {
  DynamicPersonalizedModel m = model;
  m.mode = ExecMode::kHard;
  m.forced_routes = route == Route::kGlobal ? std::array<double, 2>{1.0, 0.0} : std::array<double, 2>{0.0, 1.0};
  return m;
}

}  // namespace

KlEstimate kl_estimate(const DynamicPersonalizedModel& model, std::span<const Instance> instances) {
  const ScoredRun local = score_instances(pinned(model, Route::kLocal), instances);
  const ScoredRun global = score_instances(pinned(model, Route::kGlobal), instances);
  return kl_from_probs(local.p_true, global.p_true);
}

RoutingStats routing_stats_from(const ScoredRun& run) {
  RoutingStats s;
  std::size_t horizon = 0;
  for (const auto& r : run.r_local) horizon = std::max(horizon, r.size());
  s.mean_r_local.assign(horizon, 0.0);
  s.std_r_local.assign(horizon, 0.0);
  s.count.assign(horizon, 0);
  for (const auto& r : run.r_local) {
    for (std::size_t t = 0; t < r.size(); ++t) {
      s.mean_r_local[t] += r[t];
      ++s.count[t];
    }
  }
  for (std::size_t t = 0; t < horizon; ++t) s.mean_r_local[t] /= static_cast<double>(s.count[t]);
  for (const auto& r : run.r_local) {
    for (std::size_t t = 0; t < r.size(); ++t) {
      const double d = r[t] - s.mean_r_local[t];
      s.std_r_local[t] += d * d;
    }
  }
  for (std::size_t t = 0; t < horizon; ++t) s.std_r_local[t] = std::sqrt(s.std_r_local[t] / static_cast<double>(s.count[t]));

  for (const auto& routes : run.routes) {
    const auto local = static_cast<std::size_t>(std::count(routes.begin(), routes.end(), Route::kLocal));
    if (!routes.empty() && local * 2 > routes.size()) {
      ++s.local_instances;
    } else {
      ++s.global_instances;
    }
  }
  return s;
}

RoutingStats routing_stats(const DynamicPersonalizedModel& model, std::span<const Instance> instances) {
  if (model.mode != ExecMode::kHard) throw UsageError("routing_stats requires a hard-mode model");
  return routing_stats_from(score_instances(model, instances));
}

ClientComparison compare_predictions(std::uint32_t client_id, std::span<const std::uint8_t> personalized,
                                     std::span<const std::uint8_t> local) {
  if (personalized.size() != local.size()) throw DimensionError("prediction lists differ in length");
  ClientComparison c;
  c.client_id = client_id;
  c.acc_personalized = accuracy_of(personalized);
  c.acc_local = accuracy_of(local);
  for (std::size_t i = 0; i < local.size(); ++i) {
    if (local[i]) {
      ++c.local_correct;
      if (!personalized[i]) ++c.local_correct_missed;
    }
  }
  return c;
}

ComparisonStats comparison_stats(std::span<const ClientComparison> clients) {
  ComparisonStats s;
  s.clients = clients.size();
  if (clients.empty()) return s;
  std::size_t preferring = 0;
  for (const auto& c : clients) {
    preferring += c.acc_personalized > c.acc_local;
    s.local_correct += c.local_correct;
    s.local_correct_missed += c.local_correct_missed;
  }
  s.c_pct = 100.0 * static_cast<double>(preferring) / static_cast<double>(clients.size());
  s.i_pct = s.local_correct ? 100.0 * static_cast<double>(s.local_correct_missed) / static_cast<double>(s.local_correct)
                            : 0.0;
  return s;
}

ComparisonStats comparison_stats(std::span<const ClientDataset* const> eval_clients, const GlobalModel& global,
                                 const TrainHyper& hyper, std::uint64_t seed) {
  std::vector<ClientComparison> rows;
  rows.reserve(eval_clients.size());
  for (const ClientDataset* c : eval_clients) {
    const auto wp = client_pre_inference(*c, global, hyper, derive_seed(seed, "eval", {c->client_id}));
    const ScoredRun pers = score_instances(wp, c->test);
    const ScoredRun local = score_instances(pinned(wp, Route::kLocal), c->test);
    rows.push_back(compare_predictions(c->client_id, pers.correct, local.correct));
  }
  return comparison_stats(rows);
}

namespace {

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

std::optional<double> spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DimensionError("spearman inputs differ in length");
  if (x.size() < 2) return std::nullopt;
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double mx = mean_of(rx), my = mean_of(ry);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

std::optional<double> divergence_routing_correlation(std::span<const double> divergence,
                                                     std::span<const double> local_fraction) {
  if (divergence.size() < 10) {
    throw MetricError("divergence/routing correlation needs at least 10 clients, got " +
                      std::to_string(divergence.size()));
  }
  return spearman(divergence, local_fraction);
}

std::string to_string(EvalSplit s) {
  switch (s) {
    case EvalSplit::kTrain:
      return "train";
    case EvalSplit::kValid:
      return "valid";
    case EvalSplit::kTest:
      return "test";
  }
  return "?";
}

EvalSplit parse_eval_split(std::string_view s) {
  if (s == "train") return EvalSplit::kTrain;
  if (s == "valid") return EvalSplit::kValid;
  if (s == "test") return EvalSplit::kTest;
  throw ConfigError("unknown split '" + std::string(s) + "' (expected train|valid|test)");
}

const std::vector<Instance>& split_of(const ClientDataset& client, EvalSplit split) {
  switch (split) {
    case EvalSplit::kTrain:
      return client.train;
    case EvalSplit::kValid:
      return client.valid;
    case EvalSplit::kTest:
      break;
  }
  return client.test;
}

namespace {

ClientEval evaluate_one(const GlobalModel& global, const ClientDataset& client, const TrainHyper& hyper,
                        const EvalOptions& options) {
  const auto& data = split_of(client, options.split);
  const auto wp = client_pre_inference(client, global, hyper, derive_seed(options.seed, "eval", {client.client_id}));

  ClientEval e;
  e.client_id = client.client_id;
  e.instances = data.size();

  wp.counters = {};
  const ScoredRun flow = score_instances(wp, data);
  e.hard_encoder_calls = wp.counters.total();
  const ScoredRun global_run = score_instances(pinned(wp, Route::kGlobal), data);
  const ScoredRun local_run = score_instances(pinned(wp, Route::kLocal), data);

  e.predictions = flow.correct.size();
  e.acc_flow = accuracy_of(flow.correct);
  e.acc_global = accuracy_of(global_run.correct);
  e.acc_local = accuracy_of(local_run.correct);

  if (options.soft_inference) {
    DynamicPersonalizedModel soft = wp;
    soft.mode = ExecMode::kSoft;
    soft.counters = {};
    const ScoredRun soft_run = score_instances(soft, data);
    e.soft_encoder_calls = soft.counters.total();
    e.acc_soft = accuracy_of(soft_run.correct);
  }

  e.routing = routing_stats_from(flow);
  e.local_instances = e.routing.local_instances;
  e.global_instances = e.routing.global_instances;
  e.local_fraction = e.instances ? static_cast<double>(e.local_instances) / static_cast<double>(e.instances) : 0.0;
  double r_sum = 0.0;
  std::size_t r_count = 0;
  for (const auto& r : flow.r_local) {
    for (double x : r) {
      r_sum += 1.0 - x;
      ++r_count;
    }
  }
  e.mean_r_global = r_count ? r_sum / static_cast<double>(r_count) : 0.0;

  const auto flow_cmp = compare_predictions(client.client_id, flow.correct, local_run.correct);
  const auto global_cmp = compare_predictions(client.client_id, global_run.correct, local_run.correct);
  e.local_correct = flow_cmp.local_correct;
  e.flow_missed = flow_cmp.local_correct_missed;
  e.global_missed = global_cmp.local_correct_missed;

  if (options.kl_split == options.split) {
    e.kl = kl_from_probs(local_run.p_true, global_run.p_true);
  } else {
    e.kl = kl_estimate(wp, split_of(client, options.kl_split));
  }
  return e;
}

}  // namespace

EvalSummary evaluate_clients(const GlobalModel& global, std::span<const ClientDataset* const> clients,
                             const TrainHyper& hyper, const EvalOptions& options,
                             const DivergenceLookup& true_divergence) {
  if (clients.empty()) throw MetricError("evaluation over no clients");
  EvalSummary s;
  s.clients.resize(clients.size());
  const auto errors = parallel_for(clients.size(), options.workers, [&](std::size_t i) {
    s.clients[i] = evaluate_one(global, *clients[i], hyper, options);
  });
  for (const auto& err : errors) {
    if (err) std::rethrow_exception(err);
  }

  const double n = static_cast<double>(clients.size());
  std::vector<ClientComparison> flow_rows, global_rows;
  std::vector<double> kl, frac, truth, truth_frac;
  double soft_sum = 0.0;
  for (auto& e : s.clients) {
    if (true_divergence) e.true_divergence = true_divergence(e.client_id);
    s.acc_flow += e.acc_flow / n;
    s.acc_global += e.acc_global / n;
    s.acc_local += e.acc_local / n;
    if (e.acc_soft) soft_sum += *e.acc_soft;
    s.mean_r_global += e.mean_r_global / n;
    s.hard_encoder_calls += e.hard_encoder_calls;
    s.soft_encoder_calls += e.soft_encoder_calls;
    flow_rows.push_back({e.client_id, e.acc_flow, e.acc_local, e.local_correct, e.flow_missed});
    global_rows.push_back({e.client_id, e.acc_global, e.acc_local, e.local_correct, e.global_missed});
    kl.push_back(e.kl.value);
    frac.push_back(e.local_fraction);
    if (e.true_divergence) {
      truth.push_back(*e.true_divergence);
      truth_frac.push_back(e.local_fraction);
    }
  }
  if (options.soft_inference) s.acc_soft = soft_sum / n;
  s.flow_vs_local = comparison_stats(flow_rows);
  s.global_vs_local = comparison_stats(global_rows);
  if (kl.size() >= 10) s.rho_kl_routing = divergence_routing_correlation(kl, frac);
  if (truth.size() >= 10) s.rho_true_routing = divergence_routing_correlation(truth, truth_frac);
  return s;
}

namespace {

nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

nlohmann::json comparison_json(const ComparisonStats& c) {
  return {{"c_pct", c.c_pct},
          {"i_pct", c.i_pct},
          {"clients", c.clients},
          {"local_correct", c.local_correct},
          {"local_correct_missed", c.local_correct_missed}};
}

}  // namespace

nlohmann::json to_json(const EvalSummary& s, bool include_clients) {
  nlohmann::json j = {{"clients_evaluated", s.clients.size()},
                      {"accuracy",
                       {{"flow", s.acc_flow},
                        {"global_route", s.acc_global},
                        {"local_route", s.acc_local},
                        {"soft", opt(s.acc_soft)}}},
                      {"mean_r_global", s.mean_r_global},
                      {"comparison", {{"flow", comparison_json(s.flow_vs_local)},
                                      {"global_route", comparison_json(s.global_vs_local)}}},
                      {"correlation", {{"kl_estimate_vs_local_fraction", opt(s.rho_kl_routing)},
                                       {"true_divergence_vs_local_fraction", opt(s.rho_true_routing)}}},
                      {"encoder_calls", {{"hard", s.hard_encoder_calls}, {"soft", s.soft_encoder_calls}}}};
  if (s.acc_soft) j["accuracy"]["soft_minus_hard"] = *s.acc_soft - s.acc_flow;
  if (include_clients) {
    auto arr = nlohmann::json::array();
    for (const auto& e : s.clients) {
      arr.push_back({{"client_id", e.client_id},
                     {"instances", e.instances},
                     {"predictions", e.predictions},
                     {"acc_flow", e.acc_flow},
                     {"acc_global_route", e.acc_global},
                     {"acc_local_route", e.acc_local},
                     {"acc_soft", opt(e.acc_soft)},
                     {"kl_estimate", e.kl.value},
                     {"kl_raw", e.kl.raw},
                     {"kl_clamped", e.kl.clamped},
                     {"true_divergence", opt(e.true_divergence)},
                     {"local_instances", e.local_instances},
                     {"global_instances", e.global_instances},
                     {"local_fraction", e.local_fraction},
                     {"mean_r_global", e.mean_r_global},
                     {"routing", {{"mean_r_local", e.routing.mean_r_local},
                                  {"std_r_local", e.routing.std_r_local},
                                  {"count", e.routing.count}}}});
    }
    j["clients"] = std::move(arr);
  }
  return j;
}

}  // namespace dynroute
