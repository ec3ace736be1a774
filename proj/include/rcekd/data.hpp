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

// Interaction logs: parsing, filtering, chronological splitting and the
// on-disk dataset container (layout in docs/FORMATS.md).

#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "rcekd/core.hpp"

namespace rcekd {

struct Interaction {
  std::string user;
  std::string item;
  std::int64_t timestamp = 0;

  friend bool operator==(const Interaction&, const Interaction&) = default;
};

struct InteractionLog {
  std::vector<Interaction> records;
};

namespace detail {

inline std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find('\t', start);
    if (pos == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return fields;
}

inline std::string_view strip_cr(std::string_view s) {
  if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
  return s;
}

}  // namespace detail

/// Parses `user<TAB>item<TAB>timestamp` records. Blank lines and lines
/// starting with '#' are skipped. `source` names the input in error messages.
inline InteractionLog parse_interactions(std::istream& in,
                                         std::string_view source = "<input>") {
  InteractionLog log;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string_view line = detail::strip_cr(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto fields = detail::split_tabs(line);
    const auto where = std::string(source) + ":" + std::to_string(line_no);
    if (fields.size() != 3) {
      throw DataError(where + ": parse error: expected 3 tab-separated fields, got " +
                      std::to_string(fields.size()));
    }
    if (fields[0].empty() || fields[1].empty()) {
      throw DataError(where + ": parse error: empty user or item key");
    }
    std::int64_t ts = 0;
    const auto* first = fields[2].data();
    const auto* last = first + fields[2].size();
    const auto [ptr, ec] = std::from_chars(first, last, ts);
    if (ec != std::errc() || ptr != last) {
      throw DataError(where + ":3: parse error: timestamp '" + std::string(fields[2]) +
                      "' is not a base-10 integer");
    }
    log.records.push_back({std::string(fields[0]), std::string(fields[1]), ts});
  }
  if (log.records.empty()) throw DataError(std::string(source) + ": empty input");
  return log;
}

inline InteractionLog load_interactions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open interaction file '" + path.string() + "'");
  return parse_interactions(in, path.string());
}

struct PreprocessOptions {
  std::size_t min_count = 10;
  // Repeat the count filter until no user or item falls below min_count.
  bool fixpoint = false;
};

/// Deduplicates (user, item) pairs keeping the earliest timestamp, then drops
/// every record whose user or item has fewer than `min_count` interactions.
/// Output is ordered by (user, timestamp, item).
inline InteractionLog preprocess(const InteractionLog& log,
                                 const PreprocessOptions& opts = {}) {
  if (opts.min_count < 1) throw UsageError("min_count must be >= 1");

  std::map<std::pair<std::string, std::string>, std::int64_t> earliest;
  for (const auto& r : log.records) {
    auto [it, inserted] = earliest.try_emplace({r.user, r.item}, r.timestamp);
    if (!inserted) it->second = std::min(it->second, r.timestamp);
  }
  std::vector<Interaction> kept;
  kept.reserve(earliest.size());
  for (const auto& [key, ts] : earliest) kept.push_back({key.first, key.second, ts});

  while (true) {
    std::unordered_map<std::string, std::size_t> user_count, item_count;
    for (const auto& r : kept) {
      ++user_count[r.user];
      ++item_count[r.item];
    }
    std::vector<Interaction> next;
    next.reserve(kept.size());
    for (auto& r : kept) {
      if (user_count[r.user] >= opts.min_count && item_count[r.item] >= opts.min_count)
        next.push_back(std::move(r));
    }
    const bool changed = next.size() != kept.size();
    kept = std::move(next);
    if (!opts.fixpoint || !changed) break;
  }
  if (kept.empty()) throw DataError("dataset empty after filtering");

  std::sort(kept.begin(), kept.end(), [](const Interaction& a, const Interaction& b) {
    return std::tie(a.user, a.timestamp, a.item) < std::tie(b.user, b.timestamp, b.item);
  });
  return InteractionLog{std::move(kept)};
}

struct SplitRatios {
  double train = 0.8;
  double valid = 0.1;
  double test = 0.1;
};

enum class Partition { train, valid, test };

struct SplitDataset {
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  // Per user, sorted ascending by item index.
  std::vector<ItemList> train, valid, test;
  // Dense index -> opaque key; the inverse maps are built by index_map().
  std::vector<std::string> user_keys, item_keys;
  // Users that kept all interactions in train and are never evaluated.
  std::vector<std::uint8_t> no_eval;
  // Valid/test records dropped because their item never occurs in train.
  std::size_t dropped_cold = 0;
  nlohmann::json provenance = nlohmann::json::object();

  const std::vector<ItemList>& partition(Partition p) const {
    switch (p) {
      case Partition::train: return train;
      case Partition::valid: return valid;
      default: return test;
    }
  }

  std::size_t count(Partition p) const {
    std::size_t n = 0;
    for (const auto& v : partition(p)) n += v.size();
    return n;
  }

  bool evaluable(Index user, Partition p) const {
    return !no_eval[user] && !partition(p)[user].empty();
  }

  friend bool operator==(const SplitDataset&, const SplitDataset&) = default;
};

inline std::unordered_map<std::string, Index> index_map(
    const std::vector<std::string>& keys) {
  std::unordered_map<std::string, Index> map;
  map.reserve(keys.size());
  for (std::size_t i = 0; i < keys.size(); ++i) map.emplace(keys[i], static_cast<Index>(i));
  return map;
}

struct PartitionSizes {
  std::size_t train = 0, valid = 0, test = 0;
};

/// Sizes of the train/valid/test partitions for a user with n interactions:
/// floor(train*n) earliest to train, ceil(test*n) latest to test, the rest to
/// valid.
inline PartitionSizes partition_sizes(std::size_t n, const SplitRatios& r) {
  constexpr double eps = 1e-9;
  PartitionSizes s;
  s.train = static_cast<std::size_t>(std::floor(r.train * static_cast<double>(n) + eps));
  s.test = static_cast<std::size_t>(std::ceil(r.test * static_cast<double>(n) - eps));
  s.train = std::min(s.train, n);
  s.test = std::min(s.test, n - s.train);
  s.valid = n - s.train - s.test;
  return s;
}

/// Splits each user's history by time. Users whose valid or test partition
/// would be empty keep everything in train and are flagged no-eval. Item
/// indices are assigned only to items that occur in some train partition;
/// later-partition records of other items are dropped (`dropped_cold`).
inline SplitDataset chronological_split(const InteractionLog& log,
                                        const SplitRatios& ratios = {}) {
  const double sum = ratios.train + ratios.valid + ratios.test;
  if (std::abs(sum - 1.0) > 1e-9 || ratios.train < 0 || ratios.valid < 0 || ratios.test < 0) {
    throw UsageError("split ratios must be non-negative and sum to 1, got " +
                     std::to_string(sum));
  }

  // Users in first-appearance order, with their record positions.
  std::unordered_map<std::string, Index> user_of;
  std::vector<std::string> user_keys;
  std::vector<std::vector<std::size_t>> rows;
  for (std::size_t r = 0; r < log.records.size(); ++r) {
    const auto& rec = log.records[r];
    auto [it, inserted] = user_of.try_emplace(rec.user, static_cast<Index>(user_keys.size()));
    if (inserted) {
      user_keys.push_back(rec.user);
      rows.emplace_back();
    }
    rows[it->second].push_back(r);
  }

  std::vector<Partition> part(log.records.size(), Partition::train);
  std::vector<std::uint8_t> no_eval(user_keys.size(), 0);
  for (std::size_t u = 0; u < rows.size(); ++u) {
    auto& idx = rows[u];
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      const auto& ra = log.records[a];
      const auto& rb = log.records[b];
      return std::tie(ra.timestamp, ra.item) < std::tie(rb.timestamp, rb.item);
    });
    const auto sizes = partition_sizes(idx.size(), ratios);
    if (sizes.valid == 0 || sizes.test == 0) {
      no_eval[u] = 1;
      continue;
    }
    for (std::size_t k = sizes.train; k < idx.size(); ++k)
      part[idx[k]] = k < sizes.train + sizes.valid ? Partition::valid : Partition::test;
  }

  SplitDataset ds;
  std::unordered_map<std::string, Index> item_of;
  for (std::size_t r = 0; r < log.records.size(); ++r) {
    if (part[r] != Partition::train) continue;
    const auto& item = log.records[r].item;
    if (item_of.try_emplace(item, static_cast<Index>(ds.item_keys.size())).second)
      ds.item_keys.push_back(item);
  }
  ds.num_users = user_keys.size();
  ds.num_items = ds.item_keys.size();
  ds.train.resize(ds.num_users);
  ds.valid.resize(ds.num_users);
  ds.test.resize(ds.num_users);
  for (std::size_t r = 0; r < log.records.size(); ++r) {
    const auto& rec = log.records[r];
    const Index u = user_of.at(rec.user);
    const auto it = item_of.find(rec.item);
    if (it == item_of.end()) {
      ++ds.dropped_cold;
      continue;
    }
    auto& target = part[r] == Partition::train   ? ds.train[u]
                   : part[r] == Partition::valid ? ds.valid[u]
                                                 : ds.test[u];
    target.push_back(it->second);
  }
  for (auto* parts : {&ds.train, &ds.valid, &ds.test}) {
    for (auto& v : *parts) {
      std::sort(v.begin(), v.end());
      v.erase(std::unique(v.begin(), v.end()), v.end());
    }
  }
  ds.user_keys = std::move(user_keys);
  ds.no_eval = std::move(no_eval);
  return ds;
}

// ---------------------------------------------------------------------------
// Persistence.

inline constexpr std::string_view kDatasetHeader = "RCEKD-DATASET v1";

namespace detail {

inline void write_items(std::ostream& out, const ItemList& items) {
  for (std::size_t k = 0; k < items.size(); ++k) {
    if (k) out << ' ';
    out << items[k];
  }
}

inline ItemList parse_items(std::string_view field, const std::string& where) {
  ItemList items;
  std::size_t pos = 0;
  while (pos < field.size()) {
    std::size_t end = field.find(' ', pos);
    if (end == std::string_view::npos) end = field.size();
    Index v = 0;
    const auto [ptr, ec] = std::from_chars(field.data() + pos, field.data() + end, v);
    if (ec != std::errc() || ptr != field.data() + end)
      throw DataError(where + ": bad item index list");
    items.push_back(v);
    pos = end + 1;
  }
  return items;
}

}  // namespace detail

inline void save_dataset(const SplitDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write dataset '" + path.string() + "'");
  nlohmann::json meta;
  meta["num_users"] = ds.num_users;
  meta["num_items"] = ds.num_items;
  meta["num_train"] = ds.count(Partition::train);
  meta["num_valid"] = ds.count(Partition::valid);
  meta["num_test"] = ds.count(Partition::test);
  meta["dropped_cold"] = ds.dropped_cold;
  meta["users"] = ds.user_keys;
  meta["items"] = ds.item_keys;
  std::vector<Index> flagged;
  for (std::size_t u = 0; u < ds.num_users; ++u)
    if (ds.no_eval[u]) flagged.push_back(static_cast<Index>(u));
  meta["no_eval"] = flagged;
  meta["config"] = ds.provenance;
  out << kDatasetHeader << '\n' << meta.dump() << '\n';
  for (std::size_t u = 0; u < ds.num_users; ++u) {
    out << u << '\t';
    detail::write_items(out, ds.train[u]);
    out << '\t';
    detail::write_items(out, ds.valid[u]);
    out << '\t';
    detail::write_items(out, ds.test[u]);
    out << '\n';
  }
  if (!out) throw DataError("write failed for dataset '" + path.string() + "'");
}

inline SplitDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset '" + path.string() + "'");
  const std::string name = path.string();
  std::string line;
  if (!std::getline(in, line) || line != kDatasetHeader)
    throw DataError(name + ": not an RCEKD-DATASET v1 file (version mismatch?)");
  if (!std::getline(in, line)) throw DataError(name + ": missing metadata line");

  SplitDataset ds;
  try {
    const auto meta = nlohmann::json::parse(line);
    ds.num_users = meta.at("num_users").get<std::size_t>();
    ds.num_items = meta.at("num_items").get<std::size_t>();
    ds.dropped_cold = meta.at("dropped_cold").get<std::size_t>();
    ds.user_keys = meta.at("users").get<std::vector<std::string>>();
    ds.item_keys = meta.at("items").get<std::vector<std::string>>();
    ds.no_eval.assign(ds.num_users, 0);
    for (Index u : meta.at("no_eval").get<std::vector<Index>>()) {
      if (u >= ds.num_users) throw DataError(name + ": no_eval index out of range");
      ds.no_eval[u] = 1;
    }
    ds.provenance = meta.value("config", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(name + ":2: bad metadata: " + e.what());
  }
  if (ds.user_keys.size() != ds.num_users || ds.item_keys.size() != ds.num_items)
    throw DataError(name + ": metadata counts disagree with key maps");

  ds.train.resize(ds.num_users);
  ds.valid.resize(ds.num_users);
  ds.test.resize(ds.num_users);
  std::size_t line_no = 2;
  for (std::size_t u = 0; u < ds.num_users; ++u) {
    ++line_no;
    const std::string where = name + ":" + std::to_string(line_no);
    if (!std::getline(in, line)) throw DataError(where + ": truncated dataset");
    const auto fields = detail::split_tabs(line);
    if (fields.size() != 4) throw DataError(where + ": expected 4 fields");
    if (fields[0] != std::to_string(u)) throw DataError(where + ": user index out of order");
    ds.train[u] = detail::parse_items(fields[1], where);
    ds.valid[u] = detail::parse_items(fields[2], where);
    ds.test[u] = detail::parse_items(fields[3], where);
    for (const auto* list : {&ds.train[u], &ds.valid[u], &ds.test[u]}) {
      if (!is_sorted_unique(*list)) throw DataError(where + ": item list not sorted");
      if (!list->empty() && list->back() >= ds.num_items)
        throw DataError(where + ": item index out of range");
    }
  }
  return ds;
}

struct DatasetSummary {
  std::size_t users = 0;
  std::size_t items = 0;
  std::size_t interactions = 0;
  double sparsity = 0.0;
};

inline DatasetSummary summarize(const SplitDataset& ds) {
  DatasetSummary s;
  s.users = ds.num_users;
  s.items = ds.num_items;
  s.interactions =
      ds.count(Partition::train) + ds.count(Partition::valid) + ds.count(Partition::test);
  const double cells = static_cast<double>(s.users) * static_cast<double>(s.items);
  s.sparsity = cells > 0 ? 1.0 - static_cast<double>(s.interactions) / cells : 0.0;
  return s;
}

}  // namespace rcekd
