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

#pragma once

#include <string_view>
#include <vector>

#include "rcekd/data.hpp"
#include "rcekd/model.hpp"
#include "rcekd/ranking.hpp"

namespace rcekd {

struct EvalResult {
  TopNMetrics metrics;
  std::size_t users = 0;  // users that contributed
};

inline std::string_view to_string(Partition p) {
  switch (p) {
    case Partition::train: return "train";
    case Partition::valid: return "valid";
    default: return "test";
  }
}

/// Scores of `user` with items that must not be recommended set to -inf:
/// training positives always, validation positives too when evaluating test.
template <typename Real>
std::vector<double> eval_scores(const BasicEmbeddingModel<Real>& model, const SplitDataset& ds,
                                Index user, Partition target) {
  auto scores = model.score_all(user);
  for (Index i : ds.train[user]) scores[i] = kNegInf;
  if (target == Partition::test)
    for (Index i : ds.valid[user]) scores[i] = kNegInf;
  return scores;
}

/// Full-ranking Recall@{10,20} and NDCG@{10,20}, averaged over users that
/// are not flagged no-eval and have at least one target item.
template <typename Real>
EvalResult evaluate(const BasicEmbeddingModel<Real>& model, const SplitDataset& ds,
                    Partition target, std::size_t workers = 1) {
  if (model.num_users() != ds.num_users || model.num_items() != ds.num_items)
    throw DataError("model shape (" + std::to_string(model.num_users()) + " users, " +
                    std::to_string(model.num_items()) + " items) does not match dataset (" +
                    std::to_string(ds.num_users) + ", " + std::to_string(ds.num_items) + ")");
  const auto& targets = ds.partition(target);
  std::vector<TopNMetrics> per_user(ds.num_users);
  std::vector<std::uint8_t> used(ds.num_users, 0);
  parallel_for(ds.num_users, workers, [&](std::size_t u) {
    if (!ds.evaluable(static_cast<Index>(u), target)) return;
    const auto scores = eval_scores(model, ds, static_cast<Index>(u), target);
    const auto ranked = top_k(scores, 20);
    per_user[u] = topn_metrics(ranked, targets[u]);
    used[u] = 1;
  });
  EvalResult r;
  for (std::size_t u = 0; u < ds.num_users; ++u) {
    if (!used[u]) continue;
    r.metrics.recall10 += per_user[u].recall10;
    r.metrics.ndcg10 += per_user[u].ndcg10;
    r.metrics.recall20 += per_user[u].recall20;
    r.metrics.ndcg20 += per_user[u].ndcg20;
    ++r.users;
  }
  if (r.users) {
    const double inv = 1.0 / static_cast<double>(r.users);
    r.metrics.recall10 *= inv;
    r.metrics.ndcg10 *= inv;
    r.metrics.recall20 *= inv;
    r.metrics.ndcg20 *= inv;
  }
  return r;
}

}  // namespace rcekd
