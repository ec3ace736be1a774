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

// Rejuvenated cross-entropy distillation.
//
// The teacher's top-K set Q_T is split by membership in the student's top-K
// Q_S: Q1 = Q_T ∩ Q_S is handled by a CE loss on all of Q_S (L1), which is a
// closed set under the student's ranking. Q2 = Q_T \ Q1 is padded with L
// sampled items that the student ranks at or above members of Q2, and a CE
// loss is taken on that set A (L2). The two are fused with a weight
// gamma = exp(-beta * |Q1|/|Q_T|) refreshed once per epoch.

#pragma once

#include <algorithm>
#include <cmath>
#include <queue>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "rcekd/core.hpp"
#include "rcekd/model.hpp"
#include "rcekd/ranking.hpp"

namespace rcekd {

struct KDConfig {
  std::size_t K = 100;      // |Q_T| = |Q_S|
  std::size_t L = 100;      // sampled items added to Q2
  double tau = 10.0;        // sampling temperature
  double beta = 5.0;        // fusion sharpness
  double lambda = 10.0;     // weight of the KD term in the total loss
  bool gamma_per_user = false;

  void validate() const {
    if (K < 1) throw UsageError("K must be >= 1");
    if (!(tau > 0)) throw UsageError("tau must be > 0");
    if (!(beta > 0)) throw UsageError("beta must be > 0");
    if (!(lambda >= 0)) throw UsageError("lambda must be >= 0");
  }
};

struct SplitSets {
  ItemList q_teacher;  // Q_T, teacher rank order
  ItemList q_student;  // Q_S, student rank order
  ItemList q1;         // Q_T ∩ Q_S, in Q_T order
  ItemList q2;         // Q_T \ Q1, in Q_T order
  ItemList a;          // Q2 ∪ sampled, sorted ascending
  std::size_t epoch = 0;

  double q1_fraction() const {
    return q_teacher.empty() ? 0.0
                             : static_cast<double>(q1.size()) /
                                   static_cast<double>(q_teacher.size());
  }
};

struct TopSplit {
  ItemList q1;
  ItemList q2;
};

/// Q1 = Q_T ∩ Q_S and Q2 = Q_T \ Q1, both kept in Q_T order.
inline TopSplit split_top_items(std::span<const Index> q_teacher,
                                std::span<const Index> q_student) {
  ItemList s(q_student.begin(), q_student.end());
  std::sort(s.begin(), s.end());
  TopSplit out;
  for (Index i : q_teacher) (contains_sorted(s, i) ? out.q1 : out.q2).push_back(i);
  return out;
}

/// z_j = |{i in Q2 : rank(j) <= rank(i)}|: each member of Q2 raises by one
/// every item the student ranks at or above it.
inline std::vector<int> sampling_scores(std::span<const Index> q2,
                                        std::span<const std::size_t> ranks) {
  const std::size_t n = ranks.size();
  // at_rank[r] = number of Q2 members at rank r; z at rank r is the suffix sum.
  std::vector<int> at_rank(n + 2, 0);
  for (Index i : q2) ++at_rank[ranks[i]];
  std::vector<int> suffix(n + 2, 0);
  for (std::size_t r = n; r >= 1; --r) suffix[r] = suffix[r + 1] + at_rank[r];
  std::vector<int> z(n);
  for (std::size_t j = 0; j < n; ++j) z[j] = suffix[ranks[j]];
  return z;
}

/// Same as sampling_scores, computed from raw scores without a full sort:
/// for each j, counts Q2 members that j is ranked at or above.
inline std::vector<int> sampling_scores_from_scores(std::span<const Index> q2,
                                                    std::span<const double> scores) {
  ItemList sorted(q2.begin(), q2.end());
  const ByScoreDesc before{scores};
  std::sort(sorted.begin(), sorted.end(), before);
  std::vector<int> z(scores.size());
  for (std::size_t j = 0; j < scores.size(); ++j) {
    // Members i with j ranked at or above i: i == j or before(j, i). Those
    // form a suffix of `sorted`.
    const auto it = std::partition_point(sorted.begin(), sorted.end(), [&](Index i) {
      return i != static_cast<Index>(j) && before(i, static_cast<Index>(j));
    });
    z[j] = static_cast<int>(sorted.end() - it);
  }
  return z;
}

/// Draws min(L, |candidates|) distinct items from the universe minus
/// `exclude` with weights exp(z_j / tau), without replacement (successive
/// weighted draws), using Gumbel-top-L. Result sorted ascending.
inline ItemList sample_candidates(std::span<const int> z, double tau, std::size_t L,
                                  std::span<const Index> exclude, Rng& rng) {
  if (!(tau > 0)) throw std::invalid_argument("sample_candidates: tau must be > 0");
  std::vector<std::uint8_t> banned(z.size(), 0);
  for (Index i : exclude) banned[i] = 1;
  std::size_t available = 0;
  for (auto b : banned) available += !b;
  if (L >= available) {
    if (L > available)
      spdlog::warn("sample_candidates: L={} exceeds {} candidates; returning all", L,
                   available);
    ItemList all;
    all.reserve(available);
    for (std::size_t j = 0; j < z.size(); ++j)
      if (!banned[j]) all.push_back(static_cast<Index>(j));
    return all;
  }
  if (L == 0) return {};

  // Min-heap of the L largest keys z/tau + Gumbel.
  using Entry = std::pair<double, Index>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> heap;
  for (std::size_t j = 0; j < z.size(); ++j) {
    if (banned[j]) continue;
    double u = uniform01(rng);
    while (u == 0.0) u = uniform01(rng);
    const double key = static_cast<double>(z[j]) / tau - std::log(-std::log(u));
    if (heap.size() < L) {
      heap.emplace(key, static_cast<Index>(j));
    } else if (key > heap.top().first) {
      heap.pop();
      heap.emplace(key, static_cast<Index>(j));
    }
  }
  ItemList out;
  out.reserve(L);
  while (!heap.empty()) {
    out.push_back(heap.top().second);
    heap.pop();
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// A = Q2 ∪ sampled, sorted ascending.
inline ItemList candidate_set(std::span<const Index> q2, std::span<const Index> sampled) {
  ItemList a(q2.begin(), q2.end());
  a.insert(a.end(), sampled.begin(), sampled.end());
  std::sort(a.begin(), a.end());
  a.erase(std::unique(a.begin(), a.end()), a.end());
  return a;
}

/// Builds Q_S, the Q1/Q2 split and A for one user. `student_scores` must
/// already carry the evaluation mask (-inf on excluded items); `exclude` are
/// items never sampled besides Q_T (training positives).
inline SplitSets build_split_sets(std::span<const Index> q_teacher,
                                  std::span<const double> student_scores,
                                  std::span<const Index> exclude, const KDConfig& cfg,
                                  Rng& rng, std::size_t epoch = 0) {
  SplitSets s;
  s.epoch = epoch;
  s.q_teacher.assign(q_teacher.begin(), q_teacher.end());
  s.q_student = top_k(student_scores, cfg.K);
  auto [q1, q2] = split_top_items(s.q_teacher, s.q_student);
  s.q1 = std::move(q1);
  s.q2 = std::move(q2);
  if (!s.q2.empty()) {
    const auto z = sampling_scores_from_scores(s.q2, student_scores);
    ItemList banned(q_teacher.begin(), q_teacher.end());
    banned.insert(banned.end(), exclude.begin(), exclude.end());
    const auto sampled = sample_candidates(z, cfg.tau, cfg.L, banned, rng);
    s.a = candidate_set(s.q2, sampled);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Losses. `teacher` is any callable item -> teacher score for the user.

template <typename Real, typename TeacherScore>
LossGrad ce_on_set(const BasicEmbeddingModel<Real>& student, Index user,
                   std::span<const Index> items, TeacherScore&& teacher) {
  std::vector<double> t(items.size());
  for (std::size_t k = 0; k < items.size(); ++k) t[k] = teacher(items[k]);
  return ce_gradients(student, user, items, teacher_targets(t));
}

/// L1: CE on the student's own top-K.
template <typename Real, typename TeacherScore>
LossGrad loss_l1(const BasicEmbeddingModel<Real>& student, Index user,
                 std::span<const Index> q_student, TeacherScore&& teacher) {
  return ce_on_set(student, user, q_student, teacher);
}

/// L2: CE on A; zero (no gradient) when Q2 is empty.
template <typename Real, typename TeacherScore>
LossGrad loss_l2(const BasicEmbeddingModel<Real>& student, Index user,
                 std::span<const Index> q2, std::span<const Index> a, TeacherScore&& teacher) {
  if (q2.empty()) return LossGrad(student.dim());
  return ce_on_set(student, user, a, teacher);
}

/// CE on the teacher's top-K only (the unmodified baseline).
template <typename Real, typename TeacherScore>
LossGrad vanilla_ce_kd(const BasicEmbeddingModel<Real>& student, Index user,
                       std::span<const Index> q_teacher, TeacherScore&& teacher) {
  return ce_on_set(student, user, q_teacher, teacher);
}

inline double fusion_gamma(double beta, double fraction) {
  if (!(beta > 0)) throw std::invalid_argument("fusion_gamma: beta must be > 0");
  if (!(fraction >= 0.0 && fraction <= 1.0))
    throw std::invalid_argument("fusion_gamma: fraction outside [0, 1]");
  return std::exp(-beta * fraction);
}

/// (1 - gamma) * L1 + gamma * L2.
inline LossGrad rce_kd_loss(const LossGrad& l1, const LossGrad& l2, double gamma) {
  if (!(gamma > 0.0 && gamma <= 1.0))
    throw std::invalid_argument("rce_kd_loss: gamma outside (0, 1]");
  return combine(l1, 1.0 - gamma, l2, gamma);
}

/// base + lambda * kd. With lambda = 0 the KD gradient is not touched at all.
inline LossGrad total_loss(const LossGrad& base, const LossGrad& kd, double lambda) {
  if (!(lambda >= 0)) throw std::invalid_argument("total_loss: lambda must be >= 0");
  return combine(base, 1.0, kd, lambda);
}

}  // namespace rcekd
