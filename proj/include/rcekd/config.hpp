/* Copyright 2026 The RCE-KD Lab Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/


// JSON run configuration. Keys mirror TrainConfig::to_json(); unknown keys
// are rejected so typos do not silently fall back to defaults.

#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "rcekd/core.hpp"
#include "rcekd/trainer.hpp"

namespace rcekd {

inline nlohmann::json load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file " + path.string());
  try {
    auto j = nlohmann::json::parse(in);
    if (!j.is_object()) throw UsageError("config file " + path.string() + ": expected an object");
    return j;
  } catch (const nlohmann::json::parse_error& e) {
    throw UsageError("config file " + path.string() + ": " + e.what());
  }
}

/// Applies the keys of `j` on top of `cfg`.
inline void apply_config(TrainConfig& cfg, const nlohmann::json& j) {
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "mode") cfg.mode = parse_mode(v.get<std::string>());
      else if (key == "dim") cfg.dim = v.get<std::size_t>();
      else if (key == "k") cfg.kd.K = v.get<std::size_t>();
      else if (key == "l") cfg.kd.L = v.get<std::size_t>();
      else if (key == "tau") cfg.kd.tau = v.get<double>();
      else if (key == "beta") cfg.kd.beta = v.get<double>();
      else if (key == "lambda") cfg.kd.lambda = v.get<double>();
      else if (key == "gamma_per_user") cfg.kd.gamma_per_user = v.get<bool>();
      else if (key == "lr") cfg.learning_rate = v.get<double>();
      else if (key == "weight_decay") cfg.weight_decay = v.get<double>();
      else if (key == "batch_size") cfg.batch_size = v.get<std::size_t>();
      else if (key == "max_epochs") cfg.max_epochs = v.get<std::size_t>();
      else if (key == "patience") cfg.patience = v.get<std::size_t>();
      else if (key == "seed") cfg.seed = v.get<std::uint64_t>();
      else if (key == "workers") cfg.workers = v.get<std::size_t>();
      else if (key == "init_std") cfg.init_std = v.get<double>();
      else if (key == "snapshot_fractions") cfg.snapshot_fractions = v.get<std::vector<double>>();
      else if (key == "curve_bucket") cfg.curve_bucket = v.get<std::size_t>();
      else if (key == "curve_max_rank") cfg.curve_max_rank = v.get<std::size_t>();
      else if (key == "diag_top") cfg.diag_top = v.get<std::size_t>();
      else throw UsageError("unknown config key '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw UsageError("config key '" + key + "': " + e.what());
    }
  }
}

}  // namespace rcekd
