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


#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>

#include <gtest/gtest.h>

#include "rcekd/model.hpp"
#include "testing.hpp"

namespace rcekd {
namespace {

using testing::DModel;
namespace fs = std::filesystem;

TEST(Score, InnerProduct) {
  DModel m(1, 1, 2);
  m.user_row(0)[0] = 1.0;
  m.user_row(0)[1] = 0.0;
  m.item_row(0)[0] = 0.5;
  m.item_row(0)[1] = 2.0;
  EXPECT_DOUBLE_EQ(m.score(0, 0), 0.5);
}

TEST(Score, ZeroUserGivesZeroScores) {
  Rng rng(1);
  auto m = testing::random_model(rng, 2, 5, 3);
  for (auto& v : m.user_row(1)) v = 0.0;
  for (double s : m.score_all(1)) EXPECT_EQ(s, 0.0);
}

TEST(Score, MatchesNaiveLoopAndIsPure) {
  Rng rng(2);
  const auto m = testing::random_model(rng, 3, 4, 5);
  for (std::size_t u = 0; u < 3; ++u) {
    const auto all = m.score_all(u);
    EXPECT_EQ(all, m.score_all(u));
    for (std::size_t i = 0; i < 4; ++i) {
      double s = 0;
      for (std::size_t d = 0; d < 5; ++d) s += m.user_table()[u * 5 + d] * m.item_table()[i * 5 + d];
      EXPECT_NEAR(all[i], s, 1e-14);
    }
  }
}

TEST(Score, OutOfRange) {
  DModel m(2, 3, 4);
  EXPECT_THROW(m.score_all(2), std::out_of_range);
  EXPECT_THROW(m.score_items(0, ItemList{3}), std::out_of_range);
}

TEST(Bpr, ZeroMarginIsLn2) {
  DModel m(1, 2, 2);
  const std::vector<ItemList> train{{0}};
  const std::vector<Triple> batch{{0, 0, 1}};
  EXPECT_NEAR(bpr_gradients(m, batch, train).loss, std::log(2.0), 1e-15);
}

TEST(Bpr, SaturatesToZero) {
  DModel m(1, 2, 1);
  m.user_row(0)[0] = 1.0;
  m.item_row(0)[0] = 800.0;
  m.item_row(1)[0] = -800.0;
  const std::vector<ItemList> train{{0}};
  const std::vector<Triple> batch{{0, 0, 1}};
  const auto r = bpr_gradients(m, batch, train);
  EXPECT_LT(r.loss, 1e-300);
  EXPECT_TRUE(std::isfinite(r.loss));
  // The opposite direction stays finite too.
  const std::vector<ItemList> train2{{1}};
  const std::vector<Triple> rev{{0, 1, 0}};
  EXPECT_NEAR(bpr_gradients(m, rev, train2).loss, 1600.0, 1e-9);
}

TEST(Bpr, RejectsInvalidPairs) {
  DModel m(1, 3, 2);
  const std::vector<ItemList> train{{0, 1}};
  EXPECT_THROW(bpr_gradients(m, std::vector<Triple>{{0, 2, 0}}, train), std::invalid_argument);
  EXPECT_THROW(bpr_gradients(m, std::vector<Triple>{{0, 0, 1}}, train), std::invalid_argument);
}

TEST(Bpr, FiniteDifferenceOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto m = testing::random_model(rng, 3, 6, 4);
    std::vector<ItemList> train{{0, 2}, {1, 3, 5}, {4}};
    std::vector<Triple> batch;
    for (std::size_t u = 0; u < 3; ++u)
      for (Index i : train[u])
        for (Index j = 0; j < 6; ++j)
          if (!contains_sorted(train[u], j) && uniform01(rng) < 0.5)
            batch.push_back({static_cast<Index>(u), i, j});
    if (batch.empty()) batch.push_back({2, 4, 0});
    const auto analytic = bpr_gradients(m, batch, train);
    const auto numeric = testing::numeric_gradient(
        m, [&](const DModel& x) { return bpr_gradients(x, batch, train).loss; });
    EXPECT_LT(testing::relative_error(testing::dense(analytic.grad, m), numeric), 1e-4);
  }
}

TEST(Ce, MatchedDistributionsHaveZeroGradient) {
  Rng rng(4);
  const auto m = testing::random_model(rng, 1, 5, 3);
  const ItemList j{0, 2, 3, 4};
  const auto s = m.score_items(0, j);
  const auto t = teacher_targets(s);
  const auto r = ce_gradients(m, 0, j, t);
  double entropy = 0;
  for (double p : t) entropy -= p * std::log(p);
  EXPECT_NEAR(r.loss, entropy, 1e-12);
  for (double g : testing::dense(r.grad, m)) EXPECT_NEAR(g, 0.0, 1e-12);
}

TEST(Ce, UniformIsLn4) {
  DModel m(1, 4, 2);
  const ItemList j{0, 1, 2, 3};
  const std::vector<double> t(4, 0.25);
  EXPECT_NEAR(ce_gradients(m, 0, j, t).loss, std::log(4.0), 1e-15);
}

TEST(Ce, Errors) {
  DModel m(1, 4, 2);
  const ItemList j{0, 1};
  EXPECT_THROW(ce_gradients(m, 0, ItemList{}, std::vector<double>{}), std::invalid_argument);
  EXPECT_THROW(ce_gradients(m, 0, j, std::vector<double>{0.5}), std::invalid_argument);
  EXPECT_THROW(ce_gradients(m, 0, j, std::vector<double>{0.5, 0.6}), std::invalid_argument);
  EXPECT_NO_THROW(ce_gradients(m, 0, j, std::vector<double>{0.5, 0.5 + 5e-7}));
}

TEST(Ce, FiniteDifferenceOracle) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const auto m = testing::random_model(rng, 2, 8, 3);
    ItemList j;
    for (Index i = 0; i < 8; ++i)
      if (uniform01(rng) < 0.6) j.push_back(i);
    if (j.empty()) j.push_back(static_cast<Index>(uniform_below(rng, 8)));
    const auto t = teacher_targets(testing::random_vector(rng, j.size(), 2.0));
    const Index u = static_cast<Index>(uniform_below(rng, 2));
    const auto analytic = ce_gradients(m, u, j, t);
    const auto numeric = testing::numeric_gradient(
        m, [&](const DModel& x) { return ce_gradients(x, u, j, t).loss; });
    EXPECT_LT(testing::relative_error(testing::dense(analytic.grad, m), numeric), 1e-4);
  }
}

TEST(Combine, WeightsLossAndGradient) {
  Rng rng(6);
  const auto m = testing::random_model(rng, 1, 3, 2);
  const ItemList j{0, 1, 2};
  const auto a = ce_gradients(m, 0, j, std::vector<double>{0.2, 0.3, 0.5});
  const auto b = ce_gradients(m, 0, ItemList{1, 2}, std::vector<double>{0.9, 0.1});
  const auto c = combine(a, 0.25, b, 2.0);
  EXPECT_NEAR(c.loss, 0.25 * a.loss + 2.0 * b.loss, 1e-15);
  const auto da = testing::dense(a.grad, m), db = testing::dense(b.grad, m),
             dc = testing::dense(c.grad, m);
  for (std::size_t k = 0; k < dc.size(); ++k) EXPECT_NEAR(dc[k], 0.25 * da[k] + 2.0 * db[k], 1e-15);
}

TEST(Adam, ZeroGradientNoDecayIsIdentity) {
  Rng rng(7);
  auto m = testing::random_model(rng, 2, 2, 3);
  const auto before = m;
  OptimizerState s(m, 1e-3, 0.0);
  ModelGradient g(3);
  g.user.row(0);
  g.item.row(1);
  adam_step(s, m, g);
  EXPECT_EQ(m, before);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  DModel m(1, 1, 1);
  m.user_row(0)[0] = 0.5;
  OptimizerState s(m, 1e-3, 0.0);
  ModelGradient g(1);
  g.user.row(0)[0] = 1.0;
  adam_step(s, m, g);
  // mhat = 1, vhat = 1: step = lr / (1 + eps).
  EXPECT_NEAR(m.user_row(0)[0], 0.5 - 1e-3 / (1.0 + 1e-8), 1e-15);
  EXPECT_EQ(m.item_row(0)[0], 0.0);  // untouched row
}

// Scalar Adam written out from the textbook recurrences.
TEST(Adam, MatchesScalarReferenceTrace) {
  const double lr = 0.01, wd = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const std::vector<double> grads{0.3, 0.3, -1.2, 0.05, 2.0};
  double x = 0.7, mm = 0, vv = 0;
  DModel model(1, 1, 1);
  model.item_row(0)[0] = x;
  OptimizerState s(model, lr, wd);
  for (std::size_t t = 1; t <= grads.size(); ++t) {
    const double g = grads[t - 1] + wd * x;
    mm = b1 * mm + (1 - b1) * g;
    vv = b2 * vv + (1 - b2) * g * g;
    x -= lr * (mm / (1 - std::pow(b1, t))) / (std::sqrt(vv / (1 - std::pow(b2, t))) + eps);
    ModelGradient mg(1);
    mg.item.row(0)[0] = grads[t - 1];
    adam_step(s, model, mg);
    EXPECT_NEAR(model.item_row(0)[0], x, 1e-15) << "step " << t;
  }
  EXPECT_EQ(s.step, grads.size());
}

TEST(Adam, LazyRowsKeepGlobalStep) {
  DModel m(1, 2, 1);
  OptimizerState s(m, 1e-2, 0.0);
  ModelGradient g0(1);
  g0.item.row(0)[0] = 1.0;
  adam_step(s, m, g0);
  adam_step(s, m, g0);
  ModelGradient g1(1);
  g1.item.row(1)[0] = 1.0;
  adam_step(s, m, g1);
  // Row 1 has its first moment update at global step 3.
  const double mh = 0.1 / (1 - std::pow(0.9, 3));
  const double vh = 0.001 / (1 - std::pow(0.999, 3));
  EXPECT_NEAR(m.item_row(1)[0], -1e-2 * mh / (std::sqrt(vh) + 1e-8), 1e-15);
}

TEST(Adam, NonFiniteGradientNamesRow) {
  DModel m(3, 1, 2);
  OptimizerState s(m, 1e-3, 0.0);
  ModelGradient g(2);
  g.user.row(2)[1] = std::numeric_limits<double>::quiet_NaN();
  try {
    adam_step(s, m, g);
    FAIL();
  } catch (const std::domain_error& e) {
    EXPECT_NE(std::string(e.what()).find("user row 2"), std::string::npos) << e.what();
  }
}

TEST(Artifact, RoundTripAndLayout) {
  auto m = EmbeddingModel::random(3, 5, 4, 99);
  const auto path = fs::temp_directory_path() / "rcekd_model_test.bin";
  save_model(m, path);
  EXPECT_EQ(fs::file_size(path), 14u + 24u + 4u * (3 * 4 + 5 * 4));
  const auto back = load_model(path);
  EXPECT_EQ(back.user_table(), m.user_table());
  EXPECT_EQ(back.item_table(), m.item_table());
  std::ifstream in(path, std::ios::binary);
  std::string head(14, '\0');
  in.read(head.data(), 14);
  EXPECT_EQ(head, "RCEKD-MODEL v1");
  unsigned char dim[8];
  in.read(reinterpret_cast<char*>(dim), 8);
  EXPECT_EQ(dim[0], 4);
  for (int k = 1; k < 8; ++k) EXPECT_EQ(dim[k], 0);
  fs::remove(path);
}

TEST(Artifact, RejectsVersionMismatchAndTruncation) {
  const auto path = fs::temp_directory_path() / "rcekd_model_bad.bin";
  { std::ofstream(path, std::ios::binary) << "RCEKD-MODEL v2........................"; }
  EXPECT_THROW(load_model(path), DataError);
  auto m = EmbeddingModel::random(2, 2, 2, 1);
  save_model(m, path);
  fs::resize_file(path, fs::file_size(path) - 3);
  EXPECT_THROW(load_model(path), DataError);
  save_model(m, path);
  { std::ofstream(path, std::ios::binary | std::ios::app) << 'x'; }
  EXPECT_THROW(load_model(path), DataError);
  fs::remove(path);
}

TEST(Init, SmallNormal) {
  const auto m = EmbeddingModel::random(200, 200, 20, 5);
  double s = 0, s2 = 0;
  for (float v : m.user_table()) {
    s += v;
    s2 += double(v) * v;
  }
  const double n = static_cast<double>(m.user_table().size());
  EXPECT_NEAR(s / n, 0.0, 1e-3);
  EXPECT_NEAR(std::sqrt(s2 / n), 0.01, 5e-4);
  EXPECT_TRUE(m.all_finite());
}

}  // namespace
}  // namespace rcekd
