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

// Epoch orchestration for teacher pretraining and student distillation.

#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "rcekd/data.hpp"
#include "rcekd/distill.hpp"
#include "rcekd/evaluate.hpp"
#include "rcekd/model.hpp"
#include "rcekd/ranking.hpp"
#include "rcekd/theory.hpp"

namespace rcekd {

enum class TrainMode { teacher, student_no_kd, student_vanilla_ce, student_rce_kd };

inline std::string_view to_string(TrainMode m) {
  switch (m) {
    case TrainMode::teacher: return "teacher";
    case TrainMode::student_no_kd: return "student-no-kd";
    case TrainMode::student_vanilla_ce: return "student-vanilla-ce";
    default: return "student-rce-kd";
  }
}

inline TrainMode parse_mode(std::string_view s) {
  for (auto m : {TrainMode::teacher, TrainMode::student_no_kd, TrainMode::student_vanilla_ce,
                 TrainMode::student_rce_kd})
    if (to_string(m) == s) return m;
  throw UsageError("unknown mode '" + std::string(s) +
                   "' (teacher, student-no-kd, student-vanilla-ce, student-rce-kd)");
}

inline bool uses_teacher(TrainMode m) {
  return m == TrainMode::student_vanilla_ce || m == TrainMode::student_rce_kd;
}

struct TrainConfig {
  TrainMode mode = TrainMode::student_no_kd;
  std::size_t dim = 20;
  KDConfig kd;
  double learning_rate = 1e-3;
  double weight_decay = 1e-5;
  std::size_t batch_size = 2048;
  std::size_t max_epochs = 1000;
  std::size_t patience = 30;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  double init_std = 0.01;
  // Diagnostics are taken after epoch max(1, round(f * max_epochs)) for each
  // fraction f < 1, and after the last epoch for f = 1.
  std::vector<double> snapshot_fractions{0.02, 0.2, 1.0};
  std::size_t curve_bucket = 10;
  std::size_t curve_max_rank = 300;
  std::size_t diag_top = 100;

  void validate() const {
    kd.validate();
    if (dim == 0) throw UsageError("dim must be >= 1");
    if (batch_size == 0) throw UsageError("batch size must be >= 1");
    if (max_epochs == 0) throw UsageError("max_epochs must be >= 1");
    if (!(learning_rate > 0)) throw UsageError("learning rate must be > 0");
    if (!(weight_decay >= 0)) throw UsageError("weight decay must be >= 0");
    for (double f : snapshot_fractions)
      if (!(f > 0 && f <= 1)) throw UsageError("snapshot fractions must lie in (0, 1]");
  }

  nlohmann::json to_json() const {
    return {{"mode", std::string(to_string(mode))},
            {"dim", dim},
            {"k", kd.K},
            {"l", kd.L},
            {"tau", kd.tau},
            {"beta", kd.beta},
            {"lambda", kd.lambda},
            {"gamma_per_user", kd.gamma_per_user},
            {"lr", learning_rate},
            {"weight_decay", weight_decay},
            {"batch_size", batch_size},
            {"max_epochs", max_epochs},
            {"patience", patience},
            {"seed", seed},
            {"workers", workers},
            {"init_std", init_std},
            {"snapshot_fractions", snapshot_fractions},
            {"curve_bucket", curve_bucket},
            {"curve_max_rank", curve_max_rank},
            {"diag_top", diag_top}};
  }
};

struct Snapshot {
  std::size_t epoch = 0;
  double fraction = 0;
  double gamma = 0;
  double mean_q1_fraction = 0;
  double mean_overlap_rate = 0;
  double mean_student_rank_of_teacher_top = 0;
  double spearman = 0;
  std::vector<CurvePoint> curve;
};

struct TrainResult {
  EmbeddingModel model;  // best-validation checkpoint
  std::size_t best_epoch = 0;
  double best_valid_ndcg20 = 0;
  std::size_t epochs_run = 0;
  EvalResult valid;
  EvalResult test;
  std::vector<Snapshot> snapshots;
  std::vector<nlohmann::json> log;
};

using LogSink = std::function<void(const nlohmann::json&)>;

inline nlohmann::json metrics_record(std::size_t epoch, Partition split, const EvalResult& r) {
  return {{"type", "metrics"},
          {"epoch", epoch},
          {"split", std::string(to_string(split))},
          {"recall@10", r.metrics.recall10},
          {"ndcg@10", r.metrics.ndcg10},
          {"recall@20", r.metrics.recall20},
          {"ndcg@20", r.metrics.ndcg20},
          {"users", r.users}};
}

class Trainer {
 public:
  Trainer(const SplitDataset& ds, TrainConfig cfg, const EmbeddingModel* teacher = nullptr,
          LogSink sink = {})
      : ds_(ds), cfg_(std::move(cfg)), teacher_(teacher), sink_(std::move(sink)) {
    cfg_.validate();
    if (uses_teacher(cfg_.mode) && teacher_ == nullptr)
      throw UsageError("mode " + std::string(to_string(cfg_.mode)) + " requires a teacher model");
    if (teacher_ && (teacher_->num_users() != ds.num_users ||
                     teacher_->num_items() != ds.num_items))
      throw DataError("teacher shape does not match dataset");
  }

  TrainResult run() {
    TrainResult result;
    emit(result, {{"type", "config"}, {"config", cfg_.to_json()},
                  {"dataset", ds_.provenance}});
    const auto role = cfg_.mode == TrainMode::teacher ? ModelRole::teacher : ModelRole::student;
    model_ = EmbeddingModel::random(ds_.num_users, ds_.num_items, cfg_.dim,
                                    derive_seed(cfg_.seed, tag("init")), role, cfg_.init_std);
    opt_ = OptimizerState(model_, cfg_.learning_rate, cfg_.weight_decay);
    if (teacher_) build_teacher_lists();
    collect_pairs();

    std::vector<std::size_t> schedule;
    for (double f : cfg_.snapshot_fractions)
      schedule.push_back(f >= 1.0 ? 0
                                  : std::max<std::size_t>(
                                        1, static_cast<std::size_t>(std::lround(
                                               f * static_cast<double>(cfg_.max_epochs)))));
    std::vector<bool> taken(schedule.size(), false);

    std::size_t since_best = 0;
    result.model = model_;
    result.best_valid_ndcg20 = -1.0;
    std::size_t epoch = 0;
    for (epoch = 1; epoch <= cfg_.max_epochs; ++epoch) {
      run_epoch(epoch, result);
      const auto valid = evaluate(model_, ds_, Partition::valid, cfg_.workers);
      emit(result, metrics_record(epoch, Partition::valid, valid));
      if (valid.metrics.ndcg20 > result.best_valid_ndcg20) {
        result.best_valid_ndcg20 = valid.metrics.ndcg20;
        result.best_epoch = epoch;
        result.valid = valid;
        result.model = model_;
        since_best = 0;
      } else {
        ++since_best;
      }
      for (std::size_t s = 0; s < schedule.size(); ++s) {
        if (teacher_ && !taken[s] && schedule[s] == epoch && cfg_.snapshot_fractions[s] < 1.0) {
          take_snapshot(epoch, cfg_.snapshot_fractions[s], result);
          taken[s] = true;
        }
      }
      if (since_best >= cfg_.patience) break;
    }
    result.epochs_run = std::min(epoch, cfg_.max_epochs);
    // Remaining snapshots (the end-of-training one, and any scheduled past an
    // early stop) are taken on the final state.
    // Snapshot diagnostics compare against the teacher; runs without one
    // have none.
    for (std::size_t s = 0; s < schedule.size(); ++s)
      if (teacher_ && !taken[s]) take_snapshot(result.epochs_run, cfg_.snapshot_fractions[s], result);

    result.test = evaluate(result.model, ds_, Partition::test, cfg_.workers);
    auto rec = metrics_record(result.best_epoch, Partition::test, result.test);
    rec["best"] = true;
    emit(result, rec);
    return result;
  }

  const EmbeddingModel& current_model() const { return model_; }

 private:
  struct UserKD {
    ItemList q_student;
    std::vector<double> q_student_targets;
    ItemList q2;
    ItemList a;
    std::vector<double> a_targets;
    double gamma = 1.0;
  };

  void emit(TrainResult& result, const nlohmann::json& rec) {
    result.log.push_back(rec);
    if (sink_) sink_(rec);
  }

  double teacher_score(Index u, Index i) const { return teacher_->score(u, i); }

  std::vector<double> teacher_targets_for(Index u, std::span<const Index> items) const {
    std::vector<double> t(items.size());
    for (std::size_t k = 0; k < items.size(); ++k) t[k] = teacher_score(u, items[k]);
    return teacher_targets(t);
  }

  // Teacher ranking per user with training positives excluded. Long enough
  // for Q_T and the diagnostics.
  void build_teacher_lists() {
    const std::size_t len = std::max({cfg_.kd.K, cfg_.curve_max_rank, cfg_.diag_top});
    teacher_top_.assign(ds_.num_users, {});
    parallel_for(ds_.num_users, cfg_.workers, [&](std::size_t u) {
      auto scores = teacher_->score_all(u);
      for (Index i : ds_.train[u]) scores[i] = kNegInf;
      const std::size_t avail = ds_.num_items - ds_.train[u].size();
      if (avail == 0) return;
      teacher_top_[u] = top_k(scores, std::min(len, avail));
    });
    if (cfg_.mode == TrainMode::student_vanilla_ce) {
      vanilla_targets_.assign(ds_.num_users, {});
      parallel_for(ds_.num_users, cfg_.workers, [&](std::size_t u) {
        const auto q = q_teacher(static_cast<Index>(u));
        if (!q.empty()) vanilla_targets_[u] = teacher_targets_for(static_cast<Index>(u), q);
      });
    }
  }

  std::span<const Index> q_teacher(Index u) const {
    const auto& t = teacher_top_[u];
    return {t.data(), std::min(cfg_.kd.K, t.size())};
  }

  void collect_pairs() {
    pairs_.clear();
    for (std::size_t u = 0; u < ds_.num_users; ++u)
      for (Index i : ds_.train[u]) pairs_.push_back({static_cast<Index>(u), i, 0});
  }

  std::vector<double> student_masked_scores(Index u) const {
    auto s = model_.score_all(u);
    for (Index i : ds_.train[u]) s[i] = kNegInf;
    return s;
  }

  struct EpochSets {
    double gamma = 1.0;
    double mean_q1_fraction = 0;
    double mean_overlap_rate = 0;
  };

  // Rebuilds Q_S, the split and A for every user from the current student.
  EpochSets rebuild_sets(std::size_t epoch, std::uint64_t stream, std::vector<UserKD>* out) {
    std::vector<double> fraction(ds_.num_users, 0.0);
    std::vector<double> overlap(ds_.num_users, 0.0);
    std::vector<std::uint8_t> has_a(ds_.num_users, 0), active(ds_.num_users, 0);
    std::vector<UserKD> sets(ds_.num_users);
    parallel_for(ds_.num_users, cfg_.workers, [&](std::size_t uu) {
      const auto u = static_cast<Index>(uu);
      const auto qt = q_teacher(u);
      if (qt.empty()) return;
      active[u] = 1;
      const auto scores = student_masked_scores(u);
      Rng rng(derive_seed(cfg_.seed, stream, epoch, u));
      const auto s = build_split_sets(qt, scores, ds_.train[u], cfg_.kd, rng, epoch);
      fraction[u] = s.q1_fraction();
      if (auto ov = approximation_audit(s.a, scores)) {
        overlap[u] = *ov;
        has_a[u] = 1;
      }
      auto& kd = sets[u];
      kd.q_student = s.q_student;
      kd.q_student_targets = teacher_targets_for(u, kd.q_student);
      kd.q2 = s.q2;
      kd.a = s.a;
      if (!kd.a.empty()) kd.a_targets = teacher_targets_for(u, kd.a);
      kd.gamma = fusion_gamma(cfg_.kd.beta, fraction[u]);
    });
    EpochSets es;
    std::size_t n_active = 0, n_a = 0;
    for (std::size_t u = 0; u < ds_.num_users; ++u) {
      if (active[u]) {
        es.mean_q1_fraction += fraction[u];
        ++n_active;
      }
      if (has_a[u]) {
        es.mean_overlap_rate += overlap[u];
        ++n_a;
      }
    }
    if (n_active) es.mean_q1_fraction /= static_cast<double>(n_active);
    es.mean_overlap_rate = n_a ? es.mean_overlap_rate / static_cast<double>(n_a) : 1.0;
    es.gamma = fusion_gamma(cfg_.kd.beta, es.mean_q1_fraction);
    if (!cfg_.kd.gamma_per_user)
      for (auto& kd : sets) kd.gamma = es.gamma;
    if (out) *out = std::move(sets);
    return es;
  }

  struct UserLoss {
    LossGrad grad;
    double l1 = 0, l2 = 0;
    bool has_l2 = false;
  };

  UserLoss user_kd_loss(Index u) const {
    UserLoss r;
    if (cfg_.mode == TrainMode::student_vanilla_ce) {
      const auto q = q_teacher(u);
      r.grad = ce_gradients(model_, u, q, vanilla_targets_[u]);
      r.l1 = r.grad.loss;
      return r;
    }
    const auto& kd = kd_sets_[u];
    const auto l1 = ce_gradients(model_, u, kd.q_student, kd.q_student_targets);
    LossGrad l2(model_.dim());
    if (!kd.q2.empty()) {
      l2 = ce_gradients(model_, u, kd.a, kd.a_targets);
      r.has_l2 = true;
    }
    r.l1 = l1.loss;
    r.l2 = l2.loss;
    r.grad = rce_kd_loss(l1, l2, kd.gamma);
    return r;
  }

  void run_epoch(std::size_t epoch, TrainResult& result) {
    const bool kd_on = uses_teacher(cfg_.mode) && cfg_.kd.lambda > 0.0;
    EpochSets es;
    if (cfg_.mode == TrainMode::student_rce_kd && kd_on)
      es = rebuild_sets(epoch, tag("sample"), &kd_sets_);

    Rng rng(derive_seed(cfg_.seed, tag("shuffle"), epoch));
    shuffle(pairs_, rng);
    for (auto& t : pairs_) {
      const auto& train = ds_.train[t.user];
      if (train.size() >= ds_.num_items) {
        t.neg = t.pos;  // no negative exists; skipped below
        continue;
      }
      do {
        t.neg = static_cast<Index>(uniform_below(rng, ds_.num_items));
      } while (contains_sorted(train, t.neg));
    }

    double l1_sum = 0, l2_sum = 0, base_sum = 0;
    std::size_t l1_n = 0, l2_n = 0, batches = 0;
    std::vector<Triple> batch;
    for (std::size_t start = 0; start < pairs_.size(); start += cfg_.batch_size) {
      const std::size_t end = std::min(pairs_.size(), start + cfg_.batch_size);
      batch.clear();
      for (std::size_t k = start; k < end; ++k)
        if (pairs_[k].neg != pairs_[k].pos) batch.push_back(pairs_[k]);
      if (batch.empty()) continue;
      auto base = bpr_gradients(model_, batch, ds_.train);

      LossGrad total = std::move(base);
      if (kd_on) {
        ItemList users;
        seen_.resize(ds_.num_users, 0);
        for (const auto& t : batch) {
          if (!seen_[t.user] && !q_teacher(t.user).empty()) {
            seen_[t.user] = 1;
            users.push_back(t.user);
          }
        }
        for (Index u : users) seen_[u] = 0;
        std::vector<UserLoss> per_user(users.size());
        parallel_for(users.size(), cfg_.workers,
                     [&](std::size_t k) { per_user[k] = user_kd_loss(users[k]); });
        LossGrad kd(model_.dim());
        if (!users.empty()) {
          const double inv = 1.0 / static_cast<double>(users.size());
          for (auto& p : per_user) {
            kd.loss += inv * p.grad.loss;
            kd.grad.add(p.grad.grad, inv);
            l1_sum += p.l1;
            ++l1_n;
            if (p.has_l2) {
              l2_sum += p.l2;
              ++l2_n;
            }
          }
        }
        total = total_loss(total, kd, cfg_.kd.lambda);
      }
      if (!std::isfinite(total.loss))
        throw std::runtime_error("non-finite loss at epoch " + std::to_string(epoch) +
                                 ", batch " + std::to_string(batches));
      base_sum += total.loss;
      ++batches;
      adam_step(opt_, model_, total.grad);
    }

    nlohmann::json rec = {{"type", "train"},
                          {"epoch", epoch},
                          {"split", "train"},
                          {"loss", batches ? base_sum / static_cast<double>(batches) : 0.0}};
    emit(result, rec);
    if (kd_on) {
      nlohmann::json kd = {{"type", "kd"},
                           {"epoch", epoch},
                           {"split", "kd"},
                           {"l1", l1_n ? l1_sum / static_cast<double>(l1_n) : 0.0},
                           {"l2", l2_n ? l2_sum / static_cast<double>(l2_n) : 0.0}};
      if (cfg_.mode == TrainMode::student_rce_kd) {
        kd["gamma"] = es.gamma;
        kd["mean_q1_fraction"] = es.mean_q1_fraction;
        kd["mean_overlap_rate"] = es.mean_overlap_rate;
      }
      emit(result, kd);
    }
  }

  void take_snapshot(std::size_t epoch, double fraction, TrainResult& result) {
    Snapshot snap;
    snap.epoch = epoch;
    snap.fraction = fraction;
    if (teacher_) {
      const auto es = rebuild_sets(epoch, tag("snapshot"), nullptr);
      snap.gamma = es.gamma;
      snap.mean_q1_fraction = es.mean_q1_fraction;
      snap.mean_overlap_rate = es.mean_overlap_rate;

      RankCurve curve(cfg_.curve_bucket, cfg_.curve_max_rank);
      std::vector<double> mean_rank(ds_.num_users, 0.0);
      std::vector<RankState> states(ds_.num_users);
      std::vector<std::uint8_t> active(ds_.num_users, 0);
      parallel_for(ds_.num_users, cfg_.workers, [&](std::size_t u) {
        if (teacher_top_[u].empty()) return;
        active[u] = 1;
        states[u] = RankState::build(student_masked_scores(static_cast<Index>(u)));
        const std::size_t n = std::min(cfg_.diag_top, teacher_top_[u].size());
        double s = 0;
        for (std::size_t k = 0; k < n; ++k) s += static_cast<double>(states[u].rank[teacher_top_[u][k]]);
        mean_rank[u] = s / static_cast<double>(n);
      });
      std::size_t n_active = 0;
      for (std::size_t u = 0; u < ds_.num_users; ++u) {
        if (!active[u]) continue;
        curve.add_items(teacher_top_[u], states[u]);
        snap.mean_student_rank_of_teacher_top += mean_rank[u];
        ++n_active;
        states[u] = RankState{};
      }
      if (n_active) snap.mean_student_rank_of_teacher_top /= static_cast<double>(n_active);
      snap.curve = curve.points();
      std::vector<double> xs, ys;
      for (const auto& p : snap.curve) {
        xs.push_back(static_cast<double>(p.teacher_rank_bucket));
        ys.push_back(p.mean_student_rank);
      }
      snap.spearman = spearman(xs, ys);
    }
    nlohmann::json curve_json = nlohmann::json::array();
    for (const auto& p : snap.curve) curve_json.push_back({p.teacher_rank_bucket, p.mean_student_rank});
    emit(result, {{"type", "snapshot"},
                  {"epoch", snap.epoch},
                  {"split", "snapshot"},
                  {"fraction", snap.fraction},
                  {"gamma", snap.gamma},
                  {"mean_q1_fraction", snap.mean_q1_fraction},
                  {"mean_overlap_rate", snap.mean_overlap_rate},
                  {"mean_student_rank_of_teacher_top", snap.mean_student_rank_of_teacher_top},
                  {"spearman", snap.spearman},
                  {"curve", curve_json}});
    result.snapshots.push_back(std::move(snap));
  }

  const SplitDataset& ds_;
  TrainConfig cfg_;
  const EmbeddingModel* teacher_;
  LogSink sink_;
  EmbeddingModel model_;
  OptimizerState opt_;
  std::vector<ItemList> teacher_top_;
  std::vector<std::vector<double>> vanilla_targets_;
  std::vector<UserKD> kd_sets_;
  std::vector<Triple> pairs_;
  std::vector<std::uint8_t> seen_;
};

/// Convenience wrapper.
inline TrainResult train(const SplitDataset& ds, const TrainConfig& cfg,
                         const EmbeddingModel* teacher = nullptr, LogSink sink = {}) {
  Trainer t(ds, cfg, teacher, std::move(sink));
  return t.run();
}

}  // namespace rcekd
