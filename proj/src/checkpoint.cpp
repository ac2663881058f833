// Copyright (c) 2026, The dynroute Authors
// SPDX-License-Identifier: Apache-2.0

#include "dynroute/checkpoint.hpp"

#include <fstream>

#include "dynroute/errors.hpp"

namespace dynroute {

namespace {
constexpr const char* kFormat = "dynroute.checkpoint";
}

nlohmann::json dims_to_json(const ModelDims& d) {
  return {{"task", to_string(d.task)},
          {"cell", to_string(d.cell)},
          {"vocab_size", d.vocab_size},
          {"embed_dim", d.embed_dim},
          {"input_dim", d.input_dim},
          {"hidden_dim", d.hidden_dim},
          {"num_classes", d.num_classes},
          {"max_seq_len", d.max_seq_len},
          {"encoder_hidden", d.encoder_hidden},
          {"decoder_hidden", d.decoder_hidden}};
}

ModelDims dims_from_json(const nlohmann::json& j) {
  try {
    ModelDims d;
    d.task = parse_task_kind(j.at("task").get<std::string>());
    d.cell = parse_cell_kind(j.at("cell").get<std::string>());
    d.vocab_size = j.at("vocab_size").get<std::size_t>();
    d.embed_dim = j.at("embed_dim").get<std::size_t>();
    d.input_dim = j.at("input_dim").get<std::size_t>();
    d.hidden_dim = j.at("hidden_dim").get<std::size_t>();
    d.num_classes = j.at("num_classes").get<std::size_t>();
    d.max_seq_len = j.at("max_seq_len").get<std::size_t>();
    d.encoder_hidden = j.at("encoder_hidden").get<std::vector<std::size_t>>();
    d.decoder_hidden = j.at("decoder_hidden").get<std::size_t>();
    d.validate();
    return d;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad model dims: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("bad model dims: ") + e.what());
  }
}

nlohmann::json tensors_to_json(const std::vector<const Parameter*>& params) {
  auto arr = nlohmann::json::array();
  for (const auto* p : params) {
    const auto v = p->value.values();
    arr.push_back({{"name", p->name},
                   {"shape", p->value.shape()},
                   {"values", std::vector<double>(v.begin(), v.end())}});
  }
  return arr;
}

void tensors_from_json(const nlohmann::json& j, const std::vector<Parameter*>& params) {
  if (!j.is_array()) throw FormatError("tensor list must be an array");
  if (j.size() != params.size())
    throw FormatError("expected " + std::to_string(params.size()) + " tensors, found " + std::to_string(j.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& rec = j[i];
    try {
      const auto name = rec.at("name").get<std::string>();
      if (name != params[i]->name)
        throw FormatError("tensor " + std::to_string(i) + " is '" + name + "', expected '" + params[i]->name + "'");
      auto shape = rec.at("shape").get<Shape>();
      if (shape != params[i]->value.shape())
        throw FormatError("tensor '" + name + "' has shape " + shape_string(shape) + ", expected " +
                          shape_string(params[i]->value.shape()));
      params[i]->value = Tensor(std::move(shape), rec.at("values").get<std::vector<double>>());
      params[i]->zero_grad();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("bad tensor record " + std::to_string(i) + ": " + e.what());
    } catch (const std::invalid_argument& e) {
      throw FormatError("bad tensor record " + std::to_string(i) + ": " + e.what());
    }
  }
}

nlohmann::json model_to_json(const GlobalModel& model) {
  return {{"format", kFormat},
          {"version", kCheckpointVersion},
          {"dims", dims_to_json(model.dims)},
          {"tensors", tensors_to_json(model.parameters())}};
}

GlobalModel model_from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.value("format", "") != kFormat) throw FormatError("not a dynroute checkpoint");
  if (j.value("version", 0) != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + j.value("version", nlohmann::json()).dump());
  if (!j.contains("dims") || !j.contains("tensors")) throw FormatError("checkpoint lacks dims or tensors");
  // Build the layout from the dims, then overwrite every value.
  GlobalModel m = GlobalModel::init(dims_from_json(j.at("dims")), 0);
  tensors_from_json(j.at("tensors"), m.parameters());
  return m;
}

void save_checkpoint(const GlobalModel& model, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out << model_to_json(model).dump() << '\n';
  if (!out) throw FormatError("write failed for " + path.string());
}

GlobalModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return model_from_json(j);
}

}  // namespace dynroute
