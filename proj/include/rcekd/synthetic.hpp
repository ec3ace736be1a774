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


// Synthetic implicit-feedback logs from a latent factor model with item
// popularity. Used for tests and smoke runs when no real dataset is around.

#pragma once

#include <cmath>
#include <queue>
#include <random>
#include <string>
#include <vector>

#include "rcekd/core.hpp"
#include "rcekd/data.hpp"

namespace rcekd {

struct SyntheticConfig {
  std::size_t users = 300;
  std::size_t items = 400;
  std::size_t factors = 8;
  std::size_t min_per_user = 15;
  std::size_t max_per_user = 40;
  double signal = 2.0;      // scale of the user-item affinity
  double popularity = 1.0;  // spread of the per-item bias
  std::uint64_t seed = 1;
};

/// Each user draws a distinct item set by Gumbel-top-n over
/// signal * <p_u, q_i> / sqrt(factors) + popularity * b_i, then receives
/// increasing timestamps in a random order.
inline InteractionLog synthetic_log(const SyntheticConfig& cfg) {
  if (cfg.users == 0 || cfg.items == 0 || cfg.factors == 0)
    throw UsageError("synthetic: users, items and factors must be >= 1");
  if (cfg.min_per_user > cfg.max_per_user || cfg.max_per_user > cfg.items)
    throw UsageError("synthetic: need min_per_user <= max_per_user <= items");
  Rng rng(derive_seed(cfg.seed, tag("synthetic")));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> p(cfg.users * cfg.factors), q(cfg.items * cfg.factors), b(cfg.items);
  for (auto& x : p) x = normal(rng);
  for (auto& x : q) x = normal(rng);
  for (auto& x : b) x = cfg.popularity * normal(rng);
  const double norm = cfg.signal / std::sqrt(static_cast<double>(cfg.factors));

  InteractionLog log;
  std::int64_t clock = 1'000'000;
  for (std::size_t u = 0; u < cfg.users; ++u) {
    const std::size_t n =
        cfg.min_per_user + uniform_below(rng, cfg.max_per_user - cfg.min_per_user + 1);
    using Entry = std::pair<double, Index>;
    std::priority_queue<Entry, std::vector<Entry>, std::greater<>> heap;
    for (std::size_t i = 0; i < cfg.items; ++i) {
      double dot = 0;
      for (std::size_t f = 0; f < cfg.factors; ++f)
        dot += p[u * cfg.factors + f] * q[i * cfg.factors + f];
      double v = uniform01(rng);
      while (v == 0.0) v = uniform01(rng);
      const double key = norm * dot + b[i] - std::log(-std::log(v));
      if (heap.size() < n) {
        heap.emplace(key, static_cast<Index>(i));
      } else if (key > heap.top().first) {
        heap.pop();
        heap.emplace(key, static_cast<Index>(i));
      }
    }
    ItemList chosen;
    while (!heap.empty()) {
      chosen.push_back(heap.top().second);
      heap.pop();
    }
    shuffle(chosen, rng);
    for (Index i : chosen) {
      clock += 1 + static_cast<std::int64_t>(uniform_below(rng, 100));
      log.records.push_back({"u" + std::to_string(u), "i" + std::to_string(i), clock});
    }
  }
  return log;
}

}  // namespace rcekd
