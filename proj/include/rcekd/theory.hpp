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

// Numerical checks of the CE / NDCG lower bounds.
//
// With relevance y = log2(softmax(r^T) + 1) and an item set J that is closed
// under the student's ranking (J = student top-|J|):
//
//   ln NDCG_J(pi, y_J) >= sum_{i in J} p_i ln q_i + ln C_J
//
// where p, q are the teacher and student softmax over J and C_J is the
// teacher's global softmax mass on J. verify_partial_bound evaluates both
// sides and every link of the inequality chain in between, so a violation
// can be attributed to the link that broke.

#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "rcekd/core.hpp"
#include "rcekd/ranking.hpp"

namespace rcekd {

/// y_i = log2(softmax(r^T)_i + 1), so that 2^{y_i} - 1 is the teacher's
/// softmax probability.
inline RelevanceVector relevance_from_teacher(std::span<const double> teacher_scores) {
  const auto p = softmax(teacher_scores);
  RelevanceVector rel{std::vector<double>(p.size())};
  for (std::size_t i = 0; i < p.size(); ++i) rel.y[i] = std::log1p(p[i]) / std::numbers::ln2;
  return rel;
}

struct ClosureResult {
  bool holds = false;
  // On failure: the best-ranked item outside J that is ranked above some
  // member of J.
  std::optional<Index> witness;
};

/// J is closed iff every item ranked at or above a member of J is in J,
/// i.e. J is exactly the student's top-|J|.
inline ClosureResult check_closure(std::span<const Index> items, const RankState& student) {
  if (items.empty()) throw std::invalid_argument("check_closure: empty item set");
  std::size_t worst = 0;
  std::vector<std::uint8_t> in(student.size(), 0);
  for (Index i : items) {
    in[i] = 1;
    worst = std::max(worst, student.rank[i]);
  }
  for (std::size_t r = 1; r <= worst; ++r) {
    const Index j = student.order[r - 1];
    if (!in[j]) return {false, j};
  }
  return {true, std::nullopt};
}

struct BoundStep {
  std::string name;
  double lhs = 0;
  double rhs = 0;
  double slack = 0;  // lhs - rhs; the link holds when slack >= -tolerance
  bool requires_closure = false;
  bool precondition_holds = true;
};

struct BoundReport {
  std::size_t instance_id = 0;
  ItemList items;
  bool closure_holds = false;
  double c_constant = 0;
  double neg_ce = 0;
  double log_c = 0;
  double log_partial_ndcg = 0;
  double slack = 0;
  bool bound_holds = false;
  std::vector<BoundStep> steps;

  /// Steps whose slack is below -tolerance.
  std::vector<const BoundStep*> broken_steps(double tolerance) const {
    std::vector<const BoundStep*> out;
    for (const auto& s : steps)
      if (s.slack < -tolerance) out.push_back(&s);
    return out;
  }
};

inline constexpr double kBoundTolerance = 1e-9;

/// Evaluates the partial-NDCG bound for one user and the item set J.
inline BoundReport verify_partial_bound(std::span<const double> student_scores,
                                        std::span<const double> teacher_scores,
                                        std::span<const Index> items,
                                        double tolerance = kBoundTolerance,
                                        std::size_t instance_id = 0) {
  if (student_scores.size() != teacher_scores.size())
    throw std::invalid_argument("verify_partial_bound: score vectors differ in length");
  if (items.empty()) throw std::invalid_argument("verify_partial_bound: empty item set");

  BoundReport rep;
  rep.instance_id = instance_id;
  rep.items.assign(items.begin(), items.end());

  const auto student = RankState::build({student_scores.begin(), student_scores.end()});
  const auto rel = relevance_from_teacher(teacher_scores);
  const auto sigma_t = softmax(teacher_scores);
  rep.closure_holds = check_closure(items, student).holds;

  // Teacher and student softmax restricted to J.
  std::vector<double> t_j(items.size()), s_j(items.size());
  for (std::size_t k = 0; k < items.size(); ++k) {
    t_j[k] = teacher_scores[items[k]];
    s_j[k] = student_scores[items[k]];
  }
  const auto p = softmax(t_j);
  const auto log_q = log_softmax(s_j);
  rep.neg_ce = 0.0;
  for (std::size_t k = 0; k < items.size(); ++k)
    if (p[k] > 0) rep.neg_ce += p[k] * log_q[k];

  rep.c_constant = 0.0;
  for (Index i : items) rep.c_constant += sigma_t[i];
  // ln C_J computed in log space so tiny masses do not underflow to -inf.
  {
    std::vector<double> in_j(t_j);
    rep.log_c = log_sum_exp(in_j) - log_sum_exp(teacher_scores);
  }

  const double pndcg = partial_ndcg(student, rel, items);
  rep.log_partial_ndcg = std::log(pndcg);
  rep.slack = rep.log_partial_ndcg - (rep.neg_ce + rep.log_c);
  rep.bound_holds = rep.slack >= -tolerance;

  // Inequality chain.
  double dcg_j = 0.0, inv_rank = 0.0;
  for (Index i : items) {
    dcg_j += gain(rel.y[i]) * discount(student.rank[i]);
    inv_rank += sigma_t[i] / static_cast<double>(student.rank[i]);
  }
  const double ideal = ideal_dcg(rel, items);

  // softmax of i over the items ranked at or above it: prefix log-sum-exp in
  // rank order.
  std::vector<double> prefix_lse(student.size());
  {
    const double top = student_scores[student.order[0]];
    double acc = 0.0;
    for (std::size_t r = 0; r < student.size(); ++r) {
      acc += std::exp(student_scores[student.order[r]] - top);
      prefix_lse[r] = top + std::log(acc);
    }
  }
  const double lse_j = log_sum_exp(s_j);
  double higher = 0.0, within_j = 0.0;
  for (Index i : items) {
    higher += sigma_t[i] * std::exp(student_scores[i] - prefix_lse[student.rank[i] - 1]);
    within_j += sigma_t[i] * std::exp(student_scores[i] - lse_j);
  }

  auto step = [&](std::string name, double lhs, double rhs, bool needs_closure) {
    rep.steps.push_back({std::move(name), lhs, rhs, lhs - rhs, needs_closure,
                         !needs_closure || rep.closure_holds});
  };
  step("ideal_dcg_le_one", 1.0, ideal, false);
  step("ndcg_ge_dcg", pndcg, dcg_j, false);
  step("log_discount_ge_inverse_rank", dcg_j, inv_rank, false);
  step("inverse_rank_ge_softmax_over_higher", inv_rank, higher, false);
  step("higher_ranked_subset_of_j", higher, within_j, true);
  // ln(within_j) = ln C_J + ln sum_J p_i q_i, kept in log space.
  double pq = 0.0;
  for (std::size_t k = 0; k < items.size(); ++k) pq += p[k] * std::exp(log_q[k]);
  step("jensen", rep.log_c + std::log(pq), rep.neg_ce + rep.log_c, false);
  return rep;
}

/// The same bound with J = every item: ln NDCG >= -CE, C = 1.
inline BoundReport verify_full_bound(std::span<const double> student_scores,
                                     std::span<const double> teacher_scores,
                                     double tolerance = kBoundTolerance,
                                     std::size_t instance_id = 0) {
  ItemList all(student_scores.size());
  std::iota(all.begin(), all.end(), Index{0});
  return verify_partial_bound(student_scores, teacher_scores, all, tolerance, instance_id);
}

// ---------------------------------------------------------------------------
// Random instance families for sweeps.

enum class InstanceFamily {
  top_k,        // J = student top-k, k uniform in [1, n]
  full,         // J = all items
  random_set,   // J uniform random non-empty subset
  adversarial,  // r^S = r^T, J = student bottom-k
};

struct BoundInstance {
  std::vector<double> student;
  std::vector<double> teacher;
  ItemList items;
};

struct InstanceShape {
  std::size_t min_items = 1;
  std::size_t max_items = 50;
  std::size_t bottom_k = 10;  // adversarial family only
};

inline BoundInstance random_instance(Rng& rng, InstanceFamily family,
                                     const InstanceShape& shape = {}) {
  BoundInstance inst;
  std::size_t n = shape.min_items +
                  uniform_below(rng, shape.max_items - shape.min_items + 1);
  if (family == InstanceFamily::adversarial) n = shape.max_items;
  // Mix score scales so both flat and peaked softmaxes are covered.
  static constexpr double kScales[] = {0.01, 0.1, 1.0, 3.0, 10.0};
  std::normal_distribution<double> normal(0.0, 1.0);
  const double st = kScales[uniform_below(rng, 5)];
  const double ss = kScales[uniform_below(rng, 5)];
  const double mix = uniform01(rng);  // student correlation with teacher
  inst.teacher.resize(n);
  inst.student.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    inst.teacher[i] = st * normal(rng);
    inst.student[i] = mix * inst.teacher[i] / st * ss + (1.0 - mix) * ss * normal(rng);
  }
  if (family == InstanceFamily::adversarial) inst.student = inst.teacher;

  const auto order = RankState::build(inst.student).order;
  switch (family) {
    case InstanceFamily::top_k: {
      const std::size_t k = 1 + uniform_below(rng, n);
      inst.items.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
      break;
    }
    case InstanceFamily::full:
      inst.items.resize(n);
      std::iota(inst.items.begin(), inst.items.end(), Index{0});
      break;
    case InstanceFamily::random_set: {
      for (std::size_t i = 0; i < n; ++i)
        if (uniform01(rng) < 0.5) inst.items.push_back(static_cast<Index>(i));
      if (inst.items.empty()) inst.items.push_back(static_cast<Index>(uniform_below(rng, n)));
      break;
    }
    case InstanceFamily::adversarial: {
      const std::size_t k = std::min(shape.bottom_k, n);
      inst.items.assign(order.end() - static_cast<std::ptrdiff_t>(k), order.end());
      break;
    }
  }
  return inst;
}

inline void write_bound_csv_header(std::ostream& out) {
  out << "instance_id,closure,c_constant,neg_ce,log_c,log_partial_ndcg,slack,bound_holds\n";
}

inline void write_bound_csv_row(std::ostream& out, const BoundReport& r) {
  out << r.instance_id << ',' << (r.closure_holds ? 1 : 0) << ',' << r.c_constant << ','
      << r.neg_ce << ',' << r.log_c << ',' << r.log_partial_ndcg << ',' << r.slack << ','
      << (r.bound_holds ? 1 : 0) << '\n';
}

inline void write_steps_csv_header(std::ostream& out) {
  out << "instance_id,step,lhs,rhs,slack,requires_closure,precondition_holds\n";
}

inline void write_steps_csv_rows(std::ostream& out, const BoundReport& r) {
  for (const auto& s : r.steps)
    out << r.instance_id << ',' << s.name << ',' << s.lhs << ',' << s.rhs << ',' << s.slack
        << ',' << (s.requires_closure ? 1 : 0) << ',' << (s.precondition_holds ? 1 : 0) << '\n';
}

/// Overlap between A and the student's top-|A| (the closure-satisfying set
/// of the same size). Empty when A is empty.
inline std::optional<double> approximation_audit(std::span<const Index> a,
                                                 std::span<const double> student_scores) {
  if (a.empty()) return std::nullopt;
  const auto ideal = top_k(student_scores, a.size());
  return overlap_rate(a, ideal);
}

}  // namespace rcekd
