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

// Matrix-factorization scoring model, BPR and softmax cross-entropy losses
// with analytic sparse gradients, and a lazy (row-sparse) Adam updater.

#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "rcekd/core.hpp"

namespace rcekd {

enum class ModelRole { teacher, student };

inline std::string_view to_string(ModelRole r) {
  return r == ModelRole::teacher ? "teacher" : "student";
}

/// User and item embedding tables, row-major. Scores are inner products
/// accumulated in double regardless of the storage type.
template <typename Real>
class BasicEmbeddingModel {
 public:
  using value_type = Real;

  BasicEmbeddingModel() = default;
  BasicEmbeddingModel(std::size_t num_users, std::size_t num_items, std::size_t dim,
                      ModelRole role = ModelRole::student)
      : num_users_(num_users),
        num_items_(num_items),
        dim_(dim),
        role_(role),
        user_(num_users * dim, Real(0)),
        item_(num_items * dim, Real(0)) {}

  /// i.i.d. N(0, std^2) initialization.
  static BasicEmbeddingModel random(std::size_t num_users, std::size_t num_items,
                                    std::size_t dim, std::uint64_t seed,
                                    ModelRole role = ModelRole::student, double std = 0.01) {
    BasicEmbeddingModel m(num_users, num_items, dim, role);
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, std);
    for (auto& v : m.user_) v = static_cast<Real>(normal(rng));
    for (auto& v : m.item_) v = static_cast<Real>(normal(rng));
    return m;
  }

  std::size_t num_users() const { return num_users_; }
  std::size_t num_items() const { return num_items_; }
  std::size_t dim() const { return dim_; }
  ModelRole role() const { return role_; }
  void set_role(ModelRole r) { role_ = r; }

  std::span<Real> user_row(std::size_t u) { return {user_.data() + u * dim_, dim_}; }
  std::span<const Real> user_row(std::size_t u) const { return {user_.data() + u * dim_, dim_}; }
  std::span<Real> item_row(std::size_t i) { return {item_.data() + i * dim_, dim_}; }
  std::span<const Real> item_row(std::size_t i) const { return {item_.data() + i * dim_, dim_}; }

  std::vector<Real>& user_table() { return user_; }
  const std::vector<Real>& user_table() const { return user_; }
  std::vector<Real>& item_table() { return item_; }
  const std::vector<Real>& item_table() const { return item_; }

  void check_user(std::size_t u) const {
    if (u >= num_users_)
      throw std::out_of_range("user index " + std::to_string(u) + " out of range [0, " +
                              std::to_string(num_users_) + ")");
  }
  void check_item(std::size_t i) const {
    if (i >= num_items_)
      throw std::out_of_range("item index " + std::to_string(i) + " out of range [0, " +
                              std::to_string(num_items_) + ")");
  }

  double score(std::size_t u, std::size_t i) const {
    const Real* a = user_.data() + u * dim_;
    const Real* b = item_.data() + i * dim_;
    double s = 0.0;
    for (std::size_t d = 0; d < dim_; ++d) s += static_cast<double>(a[d]) * static_cast<double>(b[d]);
    return s;
  }

  /// Scores of `user` for every item.
  std::vector<double> score_all(std::size_t user) const {
    check_user(user);
    std::vector<double> out(num_items_);
    for (std::size_t i = 0; i < num_items_; ++i) out[i] = score(user, i);
    return out;
  }

  std::vector<double> score_items(std::size_t user, std::span<const Index> items) const {
    check_user(user);
    std::vector<double> out(items.size());
    for (std::size_t k = 0; k < items.size(); ++k) {
      check_item(items[k]);
      out[k] = score(user, items[k]);
    }
    return out;
  }

  bool all_finite() const {
    for (Real v : user_) if (!std::isfinite(static_cast<double>(v))) return false;
    for (Real v : item_) if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  friend bool operator==(const BasicEmbeddingModel&, const BasicEmbeddingModel&) = default;

 private:
  std::size_t num_users_ = 0;
  std::size_t num_items_ = 0;
  std::size_t dim_ = 0;
  ModelRole role_ = ModelRole::student;
  std::vector<Real> user_;
  std::vector<Real> item_;
};

using EmbeddingModel = BasicEmbeddingModel<float>;

// ---------------------------------------------------------------------------
// Sparse gradients.

/// Gradient rows keyed by table row. Rows are appended in first-touch order
/// so iteration order is deterministic.
class SparseRows {
 public:
  SparseRows() = default;
  explicit SparseRows(std::size_t dim) : dim_(dim) {}

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return rows_.size(); }
  bool empty() const { return rows_.empty(); }

  std::span<double> row(std::size_t idx) {
    auto [it, inserted] = slot_.try_emplace(idx, rows_.size());
    if (inserted) {
      rows_.push_back(idx);
      values_.resize(values_.size() + dim_, 0.0);
    }
    return {values_.data() + it->second * dim_, dim_};
  }

  /// Gradient of row `idx`, or empty span when untouched.
  std::span<const double> find(std::size_t idx) const {
    const auto it = slot_.find(idx);
    if (it == slot_.end()) return {};
    return {values_.data() + it->second * dim_, dim_};
  }

  template <typename Real>
  void axpy(std::size_t idx, double a, std::span<const Real> x) {
    auto r = row(idx);
    for (std::size_t d = 0; d < dim_; ++d) r[d] += a * static_cast<double>(x[d]);
  }

  void add(const SparseRows& other, double scale) {
    for (std::size_t k = 0; k < other.rows_.size(); ++k) {
      auto r = row(other.rows_[k]);
      const double* src = other.values_.data() + k * dim_;
      for (std::size_t d = 0; d < dim_; ++d) r[d] += scale * src[d];
    }
  }

  void scale(double s) {
    for (double& v : values_) v *= s;
  }

  const std::vector<std::size_t>& rows() const { return rows_; }
  std::span<const double> values_at(std::size_t k) const {
    return {values_.data() + k * dim_, dim_};
  }

 private:
  std::size_t dim_ = 0;
  std::vector<std::size_t> rows_;
  std::vector<double> values_;
  std::unordered_map<std::size_t, std::size_t> slot_;
};

struct ModelGradient {
  SparseRows user;
  SparseRows item;

  ModelGradient() = default;
  explicit ModelGradient(std::size_t dim) : user(dim), item(dim) {}

  void add(const ModelGradient& other, double scale = 1.0) {
    user.add(other.user, scale);
    item.add(other.item, scale);
  }
  void scale(double s) {
    user.scale(s);
    item.scale(s);
  }
  bool empty() const { return user.empty() && item.empty(); }
};

struct LossGrad {
  double loss = 0.0;
  ModelGradient grad;

  LossGrad() = default;
  explicit LossGrad(std::size_t dim) : grad(dim) {}
};

/// loss_a + scale * loss_b, gradients combined with the same weights.
inline LossGrad combine(const LossGrad& a, double wa, const LossGrad& b, double wb) {
  LossGrad out(a.grad.user.dim());
  out.loss = wa * a.loss + wb * b.loss;
  if (wa != 0.0) out.grad.add(a.grad, wa);
  if (wb != 0.0) out.grad.add(b.grad, wb);
  return out;
}

// ---------------------------------------------------------------------------
// BPR.

struct Triple {
  Index user;
  Index pos;
  Index neg;
};

// -ln s(x) computed without overflow.
inline double neg_log_sigmoid(double x) {
  return x > 0 ? std::log1p(std::exp(-x)) : -x + std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Mean over the batch of -ln s(r_ui - r_uj). `train` holds each user's sorted
/// training items; positives must be in it and negatives must not.
template <typename Real>
LossGrad bpr_gradients(const BasicEmbeddingModel<Real>& model, std::span<const Triple> batch,
                       std::span<const ItemList> train) {
  LossGrad out(model.dim());
  if (batch.empty()) return out;
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (const auto& t : batch) {
    model.check_user(t.user);
    model.check_item(t.pos);
    model.check_item(t.neg);
    if (t.user < train.size()) {
      if (!contains_sorted(train[t.user], t.pos))
        throw std::invalid_argument("positive item " + std::to_string(t.pos) +
                                    " not in training set of user " + std::to_string(t.user));
      if (contains_sorted(train[t.user], t.neg))
        throw std::invalid_argument("negative item " + std::to_string(t.neg) +
                                    " is a training positive of user " +
                                    std::to_string(t.user));
    }
    const double margin = model.score(t.user, t.pos) - model.score(t.user, t.neg);
    out.loss += inv * neg_log_sigmoid(margin);
    // d/dmargin of -ln s(margin) = -s(-margin)
    const double g = -sigmoid(-margin) * inv;
    const auto eu = model.user_row(t.user);
    const auto ei = model.item_row(t.pos);
    const auto ej = model.item_row(t.neg);
    auto gu = out.grad.user.row(t.user);
    for (std::size_t d = 0; d < model.dim(); ++d)
      gu[d] += g * (static_cast<double>(ei[d]) - static_cast<double>(ej[d]));
    out.grad.item.axpy(t.pos, g, eu);
    out.grad.item.axpy(t.neg, -g, eu);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Softmax cross-entropy over an item subset.

/// Teacher targets on J: the softmax of teacher scores restricted to J.
inline std::vector<double> teacher_targets(std::span<const double> teacher_scores_on_j) {
  return softmax(teacher_scores_on_j);
}

/// -sum_{i in J} t_i ln softmax(r^S on J)_i for one user. The gradient with
/// respect to r^S_i is softmax(r^S)_i - t_i, propagated to both embeddings.
template <typename Real>
LossGrad ce_gradients(const BasicEmbeddingModel<Real>& model, Index user,
                      std::span<const Index> items, std::span<const double> targets) {
  if (items.empty()) throw std::invalid_argument("ce_gradients: empty item set");
  if (targets.size() != items.size())
    throw std::invalid_argument("ce_gradients: targets and items differ in length");
  double total = 0.0;
  for (double t : targets) {
    if (!(t >= 0.0)) throw std::invalid_argument("ce_gradients: negative target");
    total += t;
  }
  if (std::abs(total - 1.0) > 1e-6)
    throw std::invalid_argument("ce_gradients: targets sum to " + std::to_string(total) +
                                ", expected 1");

  const auto scores = model.score_items(user, items);
  const auto logp = log_softmax(scores);
  LossGrad out(model.dim());
  std::vector<double> g(items.size());
  for (std::size_t k = 0; k < items.size(); ++k) {
    if (targets[k] > 0.0) out.loss -= targets[k] * logp[k];
    g[k] = std::exp(logp[k]) - targets[k];
  }
  const auto eu = model.user_row(user);
  auto gu = out.grad.user.row(user);
  for (std::size_t k = 0; k < items.size(); ++k) {
    const auto ei = model.item_row(items[k]);
    for (std::size_t d = 0; d < model.dim(); ++d) gu[d] += g[k] * static_cast<double>(ei[d]);
    out.grad.item.axpy(items[k], g[k], eu);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Adam.

/// Row-sparse Adam: only rows present in the gradient are updated, weight
/// decay is added to the gradient of those rows, and a single global step
/// counter drives bias correction.
struct OptimizerState {
  double learning_rate = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<double> user_m, user_v, item_m, item_v;

  OptimizerState() = default;
  template <typename Real>
  OptimizerState(const BasicEmbeddingModel<Real>& model, double lr, double wd)
      : learning_rate(lr),
        weight_decay(wd),
        user_m(model.user_table().size(), 0.0),
        user_v(model.user_table().size(), 0.0),
        item_m(model.item_table().size(), 0.0),
        item_v(model.item_table().size(), 0.0) {}
};

namespace detail {

template <typename Real>
void adam_rows(const SparseRows& grad, std::vector<Real>& table, std::vector<double>& m,
               std::vector<double>& v, const OptimizerState& s, std::string_view name) {
  const std::size_t dim = grad.dim();
  const double t = static_cast<double>(s.step);
  const double c1 = 1.0 - std::pow(s.beta1, t);
  const double c2 = 1.0 - std::pow(s.beta2, t);
  for (std::size_t k = 0; k < grad.rows().size(); ++k) {
    const std::size_t row = grad.rows()[k];
    const auto g = grad.values_at(k);
    for (std::size_t d = 0; d < dim; ++d) {
      if (!std::isfinite(g[d]))
        throw std::domain_error("non-finite gradient in " + std::string(name) + " row " +
                                std::to_string(row));
    }
    for (std::size_t d = 0; d < dim; ++d) {
      const std::size_t p = row * dim + d;
      const double gd = g[d] + s.weight_decay * static_cast<double>(table[p]);
      m[p] = s.beta1 * m[p] + (1.0 - s.beta1) * gd;
      v[p] = s.beta2 * v[p] + (1.0 - s.beta2) * gd * gd;
      const double mhat = m[p] / c1;
      const double vhat = v[p] / c2;
      table[p] = static_cast<Real>(static_cast<double>(table[p]) -
                                   s.learning_rate * mhat / (std::sqrt(vhat) + s.epsilon));
    }
  }
}

}  // namespace detail

template <typename Real>
void adam_step(OptimizerState& state, BasicEmbeddingModel<Real>& model,
               const ModelGradient& grad) {
  if (grad.user.dim() != model.dim() && !grad.user.empty())
    throw std::invalid_argument("adam_step: gradient dim mismatch");
  if (grad.item.dim() != model.dim() && !grad.item.empty())
    throw std::invalid_argument("adam_step: gradient dim mismatch");
  for (std::size_t r : grad.user.rows()) model.check_user(r);
  for (std::size_t r : grad.item.rows()) model.check_item(r);
  ++state.step;
  detail::adam_rows(grad.user, model.user_table(), state.user_m, state.user_v, state, "user");
  detail::adam_rows(grad.item, model.item_table(), state.item_m, state.item_v, state, "item");
}

// ---------------------------------------------------------------------------
// Model artifact: the 14 ASCII bytes "RCEKD-MODEL v1", then dim, num_users,
// num_items as little-endian u64, then the user and item tables as row-major
// little-endian IEEE-754 binary32.

inline constexpr std::string_view kModelHeader = "RCEKD-MODEL v1";

namespace detail {

inline void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int k = 0; k < 8; ++k) b[k] = static_cast<unsigned char>(v >> (8 * k));
  out.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(b[k]) << (8 * k);
  return v;
}

inline void put_f32(std::ostream& out, float f) {
  const auto bits = std::bit_cast<std::uint32_t>(f);
  unsigned char b[4];
  for (int k = 0; k < 4; ++k) b[k] = static_cast<unsigned char>(bits >> (8 * k));
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace detail

template <typename Real>
void save_model(const BasicEmbeddingModel<Real>& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write model '" + path.string() + "'");
  out.write(kModelHeader.data(), static_cast<std::streamsize>(kModelHeader.size()));
  detail::put_u64(out, model.dim());
  detail::put_u64(out, model.num_users());
  detail::put_u64(out, model.num_items());
  for (Real v : model.user_table()) detail::put_f32(out, static_cast<float>(v));
  for (Real v : model.item_table()) detail::put_f32(out, static_cast<float>(v));
  if (!out) throw DataError("write failed for model '" + path.string() + "'");
}

inline EmbeddingModel load_model(const std::filesystem::path& path,
                                 ModelRole role = ModelRole::student) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open model '" + path.string() + "'");
  std::string header(kModelHeader.size(), '\0');
  in.read(header.data(), static_cast<std::streamsize>(header.size()));
  if (!in || header != kModelHeader)
    throw DataError(path.string() + ": not an RCEKD-MODEL v1 artifact (version mismatch?)");
  const std::uint64_t dim = detail::get_u64(in);
  const std::uint64_t users = detail::get_u64(in);
  const std::uint64_t items = detail::get_u64(in);
  if (!in || dim == 0 || dim > (1u << 20) || users > (1ull << 32) || items > (1ull << 32))
    throw DataError(path.string() + ": corrupt model header");
  EmbeddingModel model(users, items, dim, role);
  auto read_table = [&](std::vector<float>& table) {
    std::vector<unsigned char> buf(table.size() * 4);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!in) throw DataError(path.string() + ": truncated model artifact");
    for (std::size_t k = 0; k < table.size(); ++k) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(buf[4 * k + b]) << (8 * b);
      table[k] = std::bit_cast<float>(bits);
    }
  };
  read_table(model.user_table());
  read_table(model.item_table());
  if (in.peek() != std::char_traits<char>::eof())
    throw DataError(path.string() + ": trailing bytes after model tables");
  return model;
}

}  // namespace rcekd
