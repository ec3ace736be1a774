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

// Rankings, top-K sets and ranking metrics.
//
// Ordering convention everywhere: higher score first, equal scores broken by
// ascending item index. Ranks are 1-based.

#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <numbers>
#include <numeric>
#include <ostream>
#include <span>
#include <stdexcept>
#include <vector>

#include "rcekd/core.hpp"

namespace rcekd {

struct ByScoreDesc {
  std::span<const double> scores;
  bool operator()(Index a, Index b) const {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  }
};

/// The K highest-scoring items in rank order. Returns every item when K
/// exceeds the number of items.
inline ItemList top_k(std::span<const double> scores, std::size_t k) {
  if (k == 0) throw std::invalid_argument("top_k: K must be >= 1");
  ItemList idx(scores.size());
  std::iota(idx.begin(), idx.end(), Index{0});
  k = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    ByScoreDesc{scores});
  idx.resize(k);
  return idx;
}

/// Copy of `scores` with `masked` items set to -inf (ranked last).
inline std::vector<double> masked_scores(std::vector<double> scores,
                                         std::span<const ItemList* const> masked) {
  for (const ItemList* list : masked)
    for (Index i : *list) scores[i] = kNegInf;
  return scores;
}

/// A user's full ranking: permutation (rank order) and its inverse.
struct RankState {
  Index user = 0;
  std::vector<double> scores;
  ItemList order;               // order[k] = item at rank k+1
  std::vector<std::size_t> rank;  // rank[i] in 1..n

  static RankState build(std::vector<double> scores, Index user = 0) {
    RankState s;
    s.user = user;
    s.scores = std::move(scores);
    s.order.resize(s.scores.size());
    std::iota(s.order.begin(), s.order.end(), Index{0});
    std::sort(s.order.begin(), s.order.end(), ByScoreDesc{s.scores});
    s.rank.resize(s.scores.size());
    for (std::size_t k = 0; k < s.order.size(); ++k) s.rank[s.order[k]] = k + 1;
    return s;
  }

  std::size_t size() const { return order.size(); }

  ItemList top(std::size_t k) const {
    k = std::min(k, order.size());
    return ItemList(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  }
};

/// Relevance per item; entries outside the support are zero.
struct RelevanceVector {
  std::vector<double> y;

  /// y restricted to `items` (Definition of the truncated relevance).
  RelevanceVector truncated(std::span<const Index> items) const {
    RelevanceVector out{std::vector<double>(y.size(), 0.0)};
    for (Index i : items) out.y[i] = y[i];
    return out;
  }
};

// 2^y - 1, accurate for small y.
inline double gain(double y) { return std::expm1(y * std::numbers::ln2); }
inline double discount(std::size_t rank) {
  return 1.0 / std::log2(1.0 + static_cast<double>(rank));
}

/// sum_i (2^{y_i} - 1) / log2(1 + rank(i)).
inline double dcg(std::span<const std::size_t> ranks, const RelevanceVector& rel) {
  if (ranks.size() != rel.y.size())
    throw std::invalid_argument("dcg: ranks and relevance over different universes");
  double s = 0.0;
  for (std::size_t i = 0; i < rel.y.size(); ++i) {
    if (rel.y[i] < 0.0) throw std::invalid_argument("dcg: negative relevance");
    if (rel.y[i] != 0.0) s += gain(rel.y[i]) * discount(ranks[i]);
  }
  return s;
}

/// DCG of the ideal arrangement of `items`: sorted by y descending (ties by
/// ascending index) and packed at ranks 1..|items|.
inline double ideal_dcg(const RelevanceVector& rel, std::span<const Index> items) {
  ItemList sorted(items.begin(), items.end());
  std::sort(sorted.begin(), sorted.end(), ByScoreDesc{rel.y});
  double s = 0.0;
  for (std::size_t k = 0; k < sorted.size(); ++k) s += gain(rel.y[sorted[k]]) * discount(k + 1);
  return s;
}

/// Full NDCG over the whole item universe.
inline double ndcg(const RankState& state, const RelevanceVector& rel) {
  ItemList all(rel.y.size());
  std::iota(all.begin(), all.end(), Index{0});
  const double ideal = ideal_dcg(rel, all);
  const double num = dcg(state.rank, rel);
  if (ideal == 0.0) return 1.0;
  return num / ideal;
}

/// Partial NDCG on J: numerator uses the global ranks with y truncated to J,
/// denominator packs J at the top.
inline double partial_ndcg(const RankState& state, const RelevanceVector& rel,
                           std::span<const Index> items) {
  if (items.empty()) throw std::invalid_argument("partial_ndcg: empty item set");
  double num = 0.0;
  for (Index i : items) {
    if (rel.y[i] < 0.0) throw std::invalid_argument("partial_ndcg: negative relevance");
    num += gain(rel.y[i]) * discount(state.rank[i]);
  }
  const double den = ideal_dcg(rel, items);
  if (den == 0.0) {
    assert(num == 0.0);
    return 1.0;
  }
  return num / den;
}

// ---------------------------------------------------------------------------
// Top-N accuracy with binary relevance.

struct TopNMetrics {
  double recall10 = 0, ndcg10 = 0, recall20 = 0, ndcg20 = 0;
};

inline double recall_at_n(std::span<const Index> ranked, std::span<const Index> targets_sorted,
                          std::size_t n) {
  if (targets_sorted.empty()) throw std::invalid_argument("recall_at_n: no target items");
  std::size_t hits = 0;
  for (std::size_t k = 0; k < std::min(n, ranked.size()); ++k)
    hits += contains_sorted(targets_sorted, ranked[k]);
  return static_cast<double>(hits) / static_cast<double>(targets_sorted.size());
}

inline double ndcg_at_n(std::span<const Index> ranked, std::span<const Index> targets_sorted,
                        std::size_t n) {
  if (targets_sorted.empty()) throw std::invalid_argument("ndcg_at_n: no target items");
  double dcg_v = 0.0;
  for (std::size_t k = 0; k < std::min(n, ranked.size()); ++k)
    if (contains_sorted(targets_sorted, ranked[k])) dcg_v += discount(k + 1);
  double idcg = 0.0;
  for (std::size_t k = 0; k < std::min(n, targets_sorted.size()); ++k) idcg += discount(k + 1);
  return dcg_v / idcg;
}

inline TopNMetrics topn_metrics(std::span<const Index> ranked,
                                std::span<const Index> targets_sorted) {
  return {recall_at_n(ranked, targets_sorted, 10), ndcg_at_n(ranked, targets_sorted, 10),
          recall_at_n(ranked, targets_sorted, 20), ndcg_at_n(ranked, targets_sorted, 20)};
}

// ---------------------------------------------------------------------------

/// Jaccard index |A ∩ B| / |A ∪ B|.
inline double overlap_rate(std::span<const Index> a, std::span<const Index> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("overlap_rate: empty set");
  ItemList sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  sa.erase(std::unique(sa.begin(), sa.end()), sa.end());
  sb.erase(std::unique(sb.begin(), sb.end()), sb.end());
  ItemList inter;
  std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(inter));
  const std::size_t uni = sa.size() + sb.size() - inter.size();
  return static_cast<double>(inter.size()) / static_cast<double>(uni);
}

// ---------------------------------------------------------------------------
// Teacher-rank vs. student-rank curves.

struct CurvePoint {
  std::size_t teacher_rank_bucket;  // first teacher rank in the bucket
  double mean_student_rank;
};

/// Accumulates student ranks bucketed by teacher rank, across any number of
/// users. Only the first `max_rank` teacher ranks are kept (0 = all).
class RankCurve {
 public:
  RankCurve(std::size_t bucket_size, std::size_t max_rank = 0)
      : bucket_(bucket_size), max_rank_(max_rank) {
    if (bucket_size == 0) throw std::invalid_argument("RankCurve: bucket size must be >= 1");
  }

  void add(const RankState& teacher, const RankState& student) {
    if (teacher.size() != student.size())
      throw std::invalid_argument("RankCurve: rankings over different item universes");
    const std::size_t limit = max_rank_ ? std::min(max_rank_, teacher.size()) : teacher.size();
    add_items(std::span<const Index>(teacher.order.data(), limit), student);
  }

  /// Adds items listed in teacher rank order (first = teacher rank 1).
  void add_items(std::span<const Index> teacher_order, const RankState& student) {
    const std::size_t limit =
        max_rank_ ? std::min(max_rank_, teacher_order.size()) : teacher_order.size();
    const std::size_t buckets = (limit + bucket_ - 1) / bucket_;
    if (sum_.size() < buckets) {
      sum_.resize(buckets, 0.0);
      count_.resize(buckets, 0);
    }
    for (std::size_t k = 0; k < limit; ++k) {
      sum_[k / bucket_] += static_cast<double>(student.rank[teacher_order[k]]);
      ++count_[k / bucket_];
    }
  }

  std::vector<CurvePoint> points() const {
    std::vector<CurvePoint> out;
    for (std::size_t b = 0; b < sum_.size(); ++b)
      if (count_[b]) out.push_back({b * bucket_ + 1, sum_[b] / static_cast<double>(count_[b])});
    return out;
  }

 private:
  std::size_t bucket_;
  std::size_t max_rank_;
  std::vector<double> sum_;
  std::vector<std::size_t> count_;
};

inline std::vector<CurvePoint> rank_relationship_curve(const RankState& teacher,
                                                       const RankState& student,
                                                       std::size_t bucket_size) {
  RankCurve curve(bucket_size);
  curve.add(teacher, student);
  return curve.points();
}

inline void write_curve_csv(std::ostream& out, std::span<const CurvePoint> curve) {
  out << "teacher_rank_bucket,mean_student_rank\n";
  for (const auto& p : curve) out << p.teacher_rank_bucket << ',' << p.mean_student_rank << '\n';
}

/// Average ranks (1-based), ties share the mean rank.
inline std::vector<double> fractional_ranks(std::span<const double> x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t k = 0; k < idx.size();) {
    std::size_t m = k;
    while (m + 1 < idx.size() && x[idx[m + 1]] == x[idx[k]]) ++m;
    const double avg = 0.5 * static_cast<double>(k + m) + 1.0;
    for (std::size_t q = k; q <= m; ++q) r[idx[q]] = avg;
    k = m + 1;
  }
  return r;
}

/// Spearman rank correlation (Pearson on fractional ranks). 0 when either
/// side is constant.
inline double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("spearman: length mismatch");
  const std::size_t n = a.size();
  if (n < 2) return 0.0;
  const auto ra = fractional_ranks(a);
  const auto rb = fractional_ranks(b);
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / static_cast<double>(n);
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / static_cast<double>(n);
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t k = 0; k < n; ++k) {
    sab += (ra[k] - ma) * (rb[k] - mb);
    saa += (ra[k] - ma) * (ra[k] - ma);
    sbb += (rb[k] - mb) * (rb[k] - mb);
  }
  if (saa == 0 || sbb == 0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace rcekd
