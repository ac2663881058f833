// Copyright (c) 2026, The dynroute Authors
// SPDX-License-Identifier: Apache-2.0
//
// JSON checkpoints of named parameter tensors.
//
//   {"format": "dynroute.checkpoint", "version": 1, "dims": {...},
//    "tensors": [{"name": ..., "shape": [...], "values": [...]}, ...]}
//
// Doubles are written in shortest round-trip form, so save/load is bit-exact.

#pragma once

#include <filesystem>
#include <vector>

#include "json.hpp"

#include "dynroute/model.hpp"

namespace dynroute {

inline constexpr int kCheckpointVersion = 1;

nlohmann::json dims_to_json(const ModelDims& dims);
ModelDims dims_from_json(const nlohmann::json& j);

nlohmann::json tensors_to_json(const std::vector<const Parameter*>& params);
/// Copies values into params; names, order and shapes must match exactly.
void tensors_from_json(const nlohmann::json& j, const std::vector<Parameter*>& params);

nlohmann::json model_to_json(const GlobalModel& model);
GlobalModel model_from_json(const nlohmann::json& j);

void save_checkpoint(const GlobalModel& model, const std::filesystem::path& path);
GlobalModel load_checkpoint(const std::filesystem::path& path);

}  // namespace dynroute
