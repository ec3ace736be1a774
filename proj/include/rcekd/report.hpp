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


// Merges JSON-lines training logs into comparison tables.

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rcekd/core.hpp"
#include "rcekd/ranking.hpp"

namespace rcekd {

struct RunSummary {
  std::string source;
  std::string mode;
  std::optional<TopNMetrics> test;
  std::size_t best_epoch = 0;
  // (fraction, mean overlap rate) in log order.
  std::vector<std::pair<double, double>> overlap;
  struct Curve {
    double fraction = 0;
    std::size_t epoch = 0;
    double spearman = 0;
    std::vector<CurvePoint> points;
  };
  std::vector<Curve> curves;
};

inline std::vector<nlohmann::json> read_jsonl(std::istream& in, const std::string& source) {
  std::vector<nlohmann::json> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = nlohmann::json::parse(line);
      if (!j.is_object()) throw DataError("not an object");
      out.push_back(std::move(j));
    } catch (const std::exception& e) {
      throw DataError(source + ":" + std::to_string(lineno) + ": malformed log line (" +
                      e.what() + ")");
    }
  }
  return out;
}

inline RunSummary summarize_log(const std::vector<nlohmann::json>& records,
                                const std::string& source) {
  RunSummary s;
  s.source = source;
  try {
    for (const auto& r : records) {
      const auto type = r.value("type", std::string{});
      if (type == "config") {
        s.mode = r.at("config").value("mode", std::string{});
      } else if (type == "metrics" && r.value("split", std::string{}) == "test" &&
                 r.value("best", false)) {
        TopNMetrics m;
        m.recall10 = r.at("recall@10").get<double>();
        m.ndcg10 = r.at("ndcg@10").get<double>();
        m.recall20 = r.at("recall@20").get<double>();
        m.ndcg20 = r.at("ndcg@20").get<double>();
        s.test = m;
        s.best_epoch = r.value("epoch", std::size_t{0});
      } else if (type == "snapshot") {
        const double f = r.at("fraction").get<double>();
        s.overlap.emplace_back(f, r.at("mean_overlap_rate").get<double>());
        RunSummary::Curve c;
        c.fraction = f;
        c.epoch = r.at("epoch").get<std::size_t>();
        c.spearman = r.value("spearman", 0.0);
        for (const auto& p : r.at("curve"))
          c.points.push_back({p.at(0).get<std::size_t>(), p.at(1).get<double>()});
        s.curves.push_back(std::move(c));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(source + ": unexpected record layout (" + e.what() + ")");
  }
  return s;
}

inline RunSummary load_run(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open log " + path.string());
  return summarize_log(read_jsonl(in, path.string()), path.string());
}

/// "OR@2" for 0.02, "OR@100" for 1.0.
inline std::string overlap_column(double fraction) {
  std::ostringstream os;
  os << "OR@" << std::round(fraction * 1000.0) / 10.0;
  return os.str();
}

namespace detail {
inline std::vector<double> overlap_fractions(const std::vector<RunSummary>& runs) {
  std::vector<double> f;
  for (const auto& r : runs)
    for (const auto& [frac, ov] : r.overlap)
      if (std::find(f.begin(), f.end(), frac) == f.end()) f.push_back(frac);
  std::sort(f.begin(), f.end());
  return f;
}

inline std::string fmt4(std::optional<double> v) {
  if (!v) return "-";
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << *v;
  return os.str();
}

inline std::optional<double> overlap_at(const RunSummary& r, double f) {
  for (const auto& [frac, ov] : r.overlap)
    if (frac == f) return ov;
  return std::nullopt;
}
}  // namespace detail

inline void write_report_markdown(std::ostream& out, const std::vector<RunSummary>& runs) {
  const auto fracs = detail::overlap_fractions(runs);
  out << "| run | mode | Recall@10 | NDCG@10 | Recall@20 | NDCG@20 |";
  for (double f : fracs) out << ' ' << overlap_column(f) << " |";
  out << "\n|---|---|---|---|---|---|";
  for (std::size_t k = 0; k < fracs.size(); ++k) out << "---|";
  out << '\n';
  for (const auto& r : runs) {
    auto m = [&](double TopNMetrics::*field) -> std::optional<double> {
      if (!r.test) return std::nullopt;
      return (*r.test).*field;
    };
    out << "| " << std::filesystem::path(r.source).filename().string() << " | "
        << (r.mode.empty() ? "-" : r.mode) << " | " << detail::fmt4(m(&TopNMetrics::recall10))
        << " | " << detail::fmt4(m(&TopNMetrics::ndcg10)) << " | "
        << detail::fmt4(m(&TopNMetrics::recall20)) << " | "
        << detail::fmt4(m(&TopNMetrics::ndcg20)) << " |";
    for (double f : fracs) out << ' ' << detail::fmt4(detail::overlap_at(r, f)) << " |";
    out << '\n';
  }
}

inline void write_report_csv(std::ostream& out, const std::vector<RunSummary>& runs) {
  const auto fracs = detail::overlap_fractions(runs);
  out << "run,mode,recall@10,ndcg@10,recall@20,ndcg@20";
  for (double f : fracs) out << ',' << overlap_column(f);
  out << '\n';
  out << std::setprecision(10);
  for (const auto& r : runs) {
    out << r.source << ',' << r.mode;
    if (r.test)
      out << ',' << r.test->recall10 << ',' << r.test->ndcg10 << ',' << r.test->recall20 << ','
          << r.test->ndcg20;
    else
      out << ",,,,";
    for (double f : fracs) {
      out << ',';
      if (auto v = detail::overlap_at(r, f)) out << *v;
    }
    out << '\n';
  }
}

/// Curve of the snapshot whose fraction is closest to `fraction`.
inline const RunSummary::Curve* nearest_curve(const RunSummary& r, double fraction) {
  const RunSummary::Curve* best = nullptr;
  for (const auto& c : r.curves)
    if (!best || std::abs(c.fraction - fraction) < std::abs(best->fraction - fraction)) best = &c;
  return best;
}

}  // namespace rcekd
