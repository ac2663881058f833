// Copyright (c) 2026, The dynroute Authors
// SPDX-License-Identifier: Apache-2.0
//
// dynroute: run, eval, sweep, export-plots, gen-data.
// Exit codes: 0 ok, 1 user error (config, data, checkpoint), 2 internal error.

#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "dynroute/errors.hpp"
#include "dynroute/experiment.hpp"

namespace {

using namespace dynroute;

std::vector<Override> parse_overrides(const std::vector<std::string>& items) {
  std::vector<Override> out;
  out.reserve(items.size());
  for (const auto& s : items) out.push_back(parse_override(s));
  return out;
}

std::string join_values(const std::vector<double>& values) {
  std::string out = "[";
  for (std::size_t i = 0; i < values.size(); ++i) out += (i ? ", " : "") + fmt::format("{}", values[i]);
  return out + "]";
}

int dispatch(int argc, char** argv) {
  CLI::App app{"Federated learning simulator with per-instance routing between global and local encoders",
               "dynroute"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  app.fallthrough();
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off")->capture_default_str();

  std::vector<std::string> sets;
  std::string config_path;

  auto* run = app.add_subcommand("run", "Train every seed of a config and write the run directory");
  run->add_option("config", config_path, "YAML config or a seed manifest.json")->required();
  run->add_option("--set", sets, "Override a config key: a.b=value (repeatable)");

  std::string checkpoint, eval_out;
  bool soft = false;
  auto* eval = app.add_subcommand("eval", "Pre-inference and evaluation of a checkpoint");
  eval->add_option("config", config_path, "YAML config or a seed manifest.json")->required();
  eval->add_option("--checkpoint", checkpoint, "Checkpoint JSON")->required();
  eval->add_flag("--soft", soft, "Also report soft-inference accuracy");
  eval->add_option("--out", eval_out, "Write the metrics JSON here instead of stdout");
  eval->add_option("--set", sets, "Override a config key: a.b=value (repeatable)");

  std::string axis;
  std::vector<double> values;
  auto* sweep = app.add_subcommand("sweep", "One run per axis value, plus merged CSVs");
  sweep->add_option("config", config_path, "YAML config")->required();
  sweep->add_option("--axis", axis, "gamma|local_epochs|tau|lambda (overrides sweep.axis)");
  sweep->add_option("--values", values, "Axis values (overrides sweep.values)")->delimiter(',');
  sweep->add_option("--set", sets, "Override a config key: a.b=value (repeatable)");

  std::string dir;
  auto* plots = app.add_subcommand("export-plots", "Write tidy CSVs for a run or sweep directory");
  plots->add_option("dir", dir, "Run or sweep directory")->required();

  std::string data_out;
  auto* gen = app.add_subcommand("gen-data", "Write the synthetic federation of the first seed");
  gen->add_option("config", config_path, "YAML config")->required();
  gen->add_option("--out", data_out, "Dataset file (JSONL)")->required();
  gen->add_option("--set", sets, "Override a config key: a.b=value (repeatable)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  spdlog::set_level(spdlog::level::from_str(log_level));

  if (run->parsed()) {
    const auto config = load_config_or_manifest(config_path, parse_overrides(sets));
    std::cout << cmd_run(config).string() << '\n';
  } else if (eval->parsed()) {
    auto overrides = parse_overrides(sets);
    if (soft) overrides.push_back({"eval.soft_inference", "true"});
    const auto config = load_config_or_manifest(config_path, overrides);
    const auto j = cmd_eval(config, checkpoint);
    if (eval_out.empty()) {
      std::cout << j.dump(2) << '\n';
    } else {
      std::ofstream out(eval_out);
      if (!(out << j.dump(2) << '\n')) throw FormatError("cannot write " + eval_out);
      std::cout << eval_out << '\n';
    }
  } else if (sweep->parsed()) {
    auto overrides = parse_overrides(sets);
    if (!axis.empty()) overrides.push_back({"sweep.axis", axis});
    if (!values.empty()) overrides.push_back({"sweep.values", join_values(values)});
    const auto config = load_config_or_manifest(config_path, overrides);
    std::cout << cmd_sweep(config).string() << '\n';
  } else if (plots->parsed()) {
    const auto result = cmd_export_plots(dir);
    for (const auto& p : result.written) std::cout << p.string() << '\n';
  } else if (gen->parsed()) {
    const auto config = load_config_or_manifest(config_path, parse_overrides(sets));
    std::cout << cmd_gen_data(config, data_out).string() << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const dynroute::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const dynroute::FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const dynroute::ProtocolError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 2;
  }
}
