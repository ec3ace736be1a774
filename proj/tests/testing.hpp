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


// Shared helpers for the test suites: finite-difference gradient oracle and
// small random fixtures.

#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "rcekd/core.hpp"
#include "rcekd/model.hpp"

namespace rcekd::testing {

using DModel = BasicEmbeddingModel<double>;

inline DModel random_model(Rng& rng, std::size_t users, std::size_t items, std::size_t dim,
                           double std = 1.0) {
  DModel m(users, items, dim, ModelRole::student);
  std::normal_distribution<double> n(0.0, std);
  for (auto& v : m.user_table()) v = n(rng);
  for (auto& v : m.item_table()) v = n(rng);
  return m;
}

inline std::vector<double> random_vector(Rng& rng, std::size_t n, double std = 1.0) {
  std::normal_distribution<double> d(0.0, std);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

/// Analytic gradient laid out densely: user table then item table.
inline std::vector<double> dense(const ModelGradient& g, const DModel& m) {
  std::vector<double> out(m.user_table().size() + m.item_table().size(), 0.0);
  const std::size_t d = m.dim();
  for (std::size_t u = 0; u < m.num_users(); ++u)
    if (auto r = g.user.find(u); !r.empty())
      for (std::size_t k = 0; k < d; ++k) out[u * d + k] = r[k];
  const std::size_t off = m.user_table().size();
  for (std::size_t i = 0; i < m.num_items(); ++i)
    if (auto r = g.item.find(i); !r.empty())
      for (std::size_t k = 0; k < d; ++k) out[off + i * d + k] = r[k];
  return out;
}

/// Central differences of `loss` over every parameter.
inline std::vector<double> numeric_gradient(DModel m, const std::function<double(const DModel&)>& loss,
                                            double h = 1e-6) {
  std::vector<double> out;
  for (auto* table : {&m.user_table(), &m.item_table()}) {
    for (auto& p : *table) {
      const double saved = p;
      p = saved + h;
      const double up = loss(m);
      p = saved - h;
      const double down = loss(m);
      p = saved;
      out.push_back((up - down) / (2 * h));
    }
  }
  return out;
}

/// ||a - b|| / max(||b||, floor).
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b,
                             double floor = 1e-8) {
  double diff = 0, norm = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    diff += (a[k] - b[k]) * (a[k] - b[k]);
    norm += b[k] * b[k];
  }
  return std::sqrt(diff) / std::max(std::sqrt(norm), floor);
}

}  // namespace rcekd::testing
