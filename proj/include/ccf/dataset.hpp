// Copyright 2026 The ccf Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#pragma once

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <compare>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ccf/common.hpp"

namespace ccf {

struct Interaction {
  Index user = 0;
  Index item = 0;
  friend auto operator<=>(const Interaction&, const Interaction&) = default;
};

inline std::uint64_t edge_key(Index user, Index item) {
  return (static_cast<std::uint64_t>(user) << 32) | static_cast<std::uint64_t>(item);
}

enum class InputFormat { kPairPerLine, kUserAdjacency };

inline InputFormat parse_input_format(std::string_view name) {
  if (name == "pair" || name == "pair-per-line") return InputFormat::kPairPerLine;
  if (name == "adjacency" || name == "user-adjacency-line") return InputFormat::kUserAdjacency;
  throw ConfigError("unknown input format '" + std::string(name) +
                    "' (expected pair-per-line or user-adjacency-line)");
}

// Edge list with raw string ids compacted to dense indices in first-seen order.
struct RawEdges {
  std::vector<std::string> user_names;
  std::vector<std::string> item_names;
  std::vector<Interaction> edges;
  Index duplicates = 0;

  Index num_users() const { return static_cast<Index>(user_names.size()); }
  Index num_items() const { return static_cast<Index>(item_names.size()); }
};

namespace detail {

class IdCompactor {
 public:
  Index operator()(const std::string& raw, std::vector<std::string>& names) {
    auto [it, inserted] = ids_.try_emplace(raw, static_cast<Index>(names.size()));
    if (inserted) names.push_back(raw);
    return it->second;
  }

 private:
  std::unordered_map<std::string, Index> ids_;
};

inline std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

// Reads every line of a plain or gzip-compressed text file.
inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw IoError("input file not found: " + path.string());
  }
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (f == nullptr) throw IoError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string current;
  std::array<char, 1 << 16> buf{};
  while (gzgets(f, buf.data(), static_cast<int>(buf.size())) != nullptr) {
    current.append(buf.data());
    if (!current.empty() && current.back() == '\n') {
      current.pop_back();
      if (!current.empty() && current.back() == '\r') current.pop_back();
      lines.push_back(std::move(current));
      current.clear();
    }
  }
  int err = 0;
  const char* msg = gzerror(f, &err);
  gzclose(f);
  if (err != Z_OK && err != Z_STREAM_END) {
    throw IoError("read error in " + path.string() + ": " + msg);
  }
  if (!current.empty()) lines.push_back(std::move(current));
  return lines;
}

}  // namespace detail

// Parses interactions from a text file ("user item" lines or "user item1 item2 ..."
// adjacency lines). Blank lines and lines starting with '#' are skipped.
// Duplicate pairs are dropped and counted.
inline RawEdges load_interactions(const std::filesystem::path& path, InputFormat format) {
  const auto lines = detail::read_lines(path);
  RawEdges raw;
  detail::IdCompactor users, items;
  std::unordered_set<std::uint64_t> seen;
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    const auto toks = detail::split_ws(lines[ln]);
    if (toks.empty() || toks.front().front() == '#') continue;
    const bool ok = format == InputFormat::kPairPerLine ? toks.size() == 2 : toks.size() >= 2;
    if (!ok) {
      throw IoError(path.string() + ":" + std::to_string(ln + 1) + ": malformed line '" +
                    lines[ln] + "'");
    }
    const Index u = users(toks[0], raw.user_names);
    for (std::size_t t = 1; t < toks.size(); ++t) {
      const Index i = items(toks[t], raw.item_names);
      if (seen.insert(edge_key(u, i)).second) {
        raw.edges.push_back({u, i});
      } else {
        ++raw.duplicates;
      }
    }
  }
  if (raw.edges.empty()) throw IoError("no interactions in " + path.string());
  return raw;
}

// Immutable train/test split with neighbor structure.
class InteractionDataset {
 public:
  InteractionDataset() = default;

  // Validates ids, deduplicates within each split, drops test edges of users
  // without any train edge (counted in dropped_cold_users()).
  static InteractionDataset from_splits(Index num_users, Index num_items,
                                        std::vector<Interaction> train,
                                        std::vector<Interaction> test) {
    InteractionDataset ds;
    ds.num_users_ = num_users;
    ds.num_items_ = num_items;
    auto check = [&](const Interaction& e) {
      if (e.user < 0 || e.user >= num_users || e.item < 0 || e.item >= num_items) {
        throw ValidationError("interaction (" + std::to_string(e.user) + ", " +
                              std::to_string(e.item) + ") out of range");
      }
    };
    auto dedup = [](std::vector<Interaction>& v) {
      std::sort(v.begin(), v.end());
      v.erase(std::unique(v.begin(), v.end()), v.end());
    };
    for (const auto& e : train) check(e);
    for (const auto& e : test) check(e);
    dedup(train);
    dedup(test);

    ds.user_neighbors_.assign(num_users, {});
    ds.item_neighbors_.assign(num_items, {});
    for (const auto& e : train) {
      ds.user_neighbors_[e.user].push_back(e.item);
      ds.item_neighbors_[e.item].push_back(e.user);
    }
    // train is sorted by (user, item): user lists are sorted already.
    for (auto& n : ds.item_neighbors_) std::sort(n.begin(), n.end());

    std::set<Index> cold;
    std::vector<Interaction> kept;
    kept.reserve(test.size());
    for (const auto& e : test) {
      if (ds.user_neighbors_[e.user].empty()) {
        cold.insert(e.user);
      } else {
        kept.push_back(e);
      }
    }
    ds.dropped_cold_users_ = static_cast<Index>(cold.size());
    ds.test_neighbors_.assign(num_users, {});
    for (const auto& e : kept) ds.test_neighbors_[e.user].push_back(e.item);

    std::unordered_set<std::uint64_t> all;
    for (const auto& e : train) all.insert(edge_key(e.user, e.item));
    for (const auto& e : kept) all.insert(edge_key(e.user, e.item));
    const double cells = static_cast<double>(num_users) * static_cast<double>(num_items);
    ds.density_ = cells > 0 ? static_cast<double>(all.size()) / cells : 0.0;

    ds.train_ = std::move(train);
    ds.test_ = std::move(kept);
    return ds;
  }

  Index num_users() const { return num_users_; }
  Index num_items() const { return num_items_; }
  const std::vector<Interaction>& train() const { return train_; }
  const std::vector<Interaction>& test() const { return test_; }
  // Sorted train item ids of a user.
  const std::vector<Index>& user_neighbors(Index u) const { return user_neighbors_[u]; }
  // Sorted train user ids of an item.
  const std::vector<Index>& item_neighbors(Index i) const { return item_neighbors_[i]; }
  // Sorted held-out item ids of a user.
  const std::vector<Index>& test_items(Index u) const { return test_neighbors_[u]; }
  Index user_degree(Index u) const { return static_cast<Index>(user_neighbors_[u].size()); }
  Index item_degree(Index i) const { return static_cast<Index>(item_neighbors_[i].size()); }
  double density() const { return density_; }
  Index dropped_cold_users() const { return dropped_cold_users_; }

  bool has_train_edge(Index u, Index i) const {
    const auto& n = user_neighbors_[u];
    return std::binary_search(n.begin(), n.end(), i);
  }

  // Train edges added by inject_noise (empty for clean data).
  const std::vector<Interaction>& injected() const { return injected_; }

  // Raw string ids, when the dataset came from a file.
  const std::vector<std::string>& user_names() const { return user_names_; }
  const std::vector<std::string>& item_names() const { return item_names_; }
  void set_names(std::vector<std::string> users, std::vector<std::string> items) {
    user_names_ = std::move(users);
    item_names_ = std::move(items);
  }

  // FNV-1a over the sizes and both splits, for cheap equality checks.
  std::uint64_t fingerprint() const {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](std::uint64_t v) {
      for (int b = 0; b < 8; ++b) {
        h ^= (v >> (8 * b)) & 0xffu;
        h *= 1099511628211ull;
      }
    };
    mix(static_cast<std::uint64_t>(num_users_));
    mix(static_cast<std::uint64_t>(num_items_));
    for (const auto& e : train_) mix(edge_key(e.user, e.item));
    mix(0xfeedfacecafebeefull);
    for (const auto& e : test_) mix(edge_key(e.user, e.item));
    return h;
  }

 private:
  friend InteractionDataset inject_noise(const InteractionDataset&, double, std::uint64_t);

  Index num_users_ = 0;
  Index num_items_ = 0;
  std::vector<Interaction> train_;
  std::vector<Interaction> test_;
  std::vector<std::vector<Index>> user_neighbors_;
  std::vector<std::vector<Index>> item_neighbors_;
  std::vector<std::vector<Index>> test_neighbors_;
  std::vector<Interaction> injected_;
  std::vector<std::string> user_names_;
  std::vector<std::string> item_names_;
  double density_ = 0.0;
  Index dropped_cold_users_ = 0;
};

// Number of held-out edges for a user with `n` interactions.
inline Index test_count(Index n, double train_ratio) {
  if (n <= 1) return 0;
  const auto t = static_cast<Index>(std::floor(static_cast<double>(n) * (1.0 - train_ratio) + 0.5));
  return std::clamp<Index>(t, 0, n - 1);
}

// Splits each user's interactions independently; deterministic in (edges, ratio, seed).
inline InteractionDataset split_per_user(const RawEdges& raw, double train_ratio,
                                         std::uint64_t seed) {
  if (!(train_ratio > 0.0 && train_ratio < 1.0)) {
    throw ValidationError("train_ratio must lie in (0, 1)");
  }
  if (raw.edges.empty()) throw ValidationError("cannot split an empty edge list");
  std::vector<std::vector<Index>> per_user(raw.num_users());
  for (const auto& e : raw.edges) per_user[e.user].push_back(e.item);

  std::vector<Interaction> train, test;
  train.reserve(raw.edges.size());
  for (Index u = 0; u < raw.num_users(); ++u) {
    auto items = per_user[u];
    if (items.empty()) continue;
    // Sorting first makes the permutation independent of file order.
    std::sort(items.begin(), items.end());
    Rng rng = make_rng({seed, static_cast<std::uint64_t>(u)});
    std::shuffle(items.begin(), items.end(), rng);
    const Index n_test = test_count(static_cast<Index>(items.size()), train_ratio);
    const Index n_train = static_cast<Index>(items.size()) - n_test;
    for (Index k = 0; k < static_cast<Index>(items.size()); ++k) {
      (k < n_train ? train : test).push_back({u, items[k]});
    }
  }
  auto ds = InteractionDataset::from_splits(raw.num_users(), raw.num_items(), std::move(train),
                                            std::move(test));
  ds.set_names(raw.user_names, raw.item_names);
  return ds;
}

enum class SparsityGroup { kSparse = 0, kNormal = 1, kPopular = 2 };

inline const char* to_string(SparsityGroup g) {
  switch (g) {
    case SparsityGroup::kSparse: return "sparse";
    case SparsityGroup::kNormal: return "normal";
    case SparsityGroup::kPopular: return "popular";
  }
  return "?";
}

struct SparsityGroups {
  std::vector<SparsityGroup> labels;
  std::pair<Index, Index> boundaries;
  std::array<Index, 3> sizes{};
};

// Labels by train degree: < lo sparse, < hi normal, else popular.
inline SparsityGroups sparsity_groups(const std::vector<Index>& degrees,
                                      std::pair<Index, Index> boundaries) {
  if (boundaries.first >= boundaries.second) {
    throw ValidationError("sparsity boundaries must be strictly increasing");
  }
  SparsityGroups g;
  g.boundaries = boundaries;
  g.labels.reserve(degrees.size());
  for (Index d : degrees) {
    const auto label = d < boundaries.first    ? SparsityGroup::kSparse
                       : d < boundaries.second ? SparsityGroup::kNormal
                                               : SparsityGroup::kPopular;
    g.labels.push_back(label);
    ++g.sizes[static_cast<int>(label)];
  }
  return g;
}

inline std::vector<Index> train_degrees(const InteractionDataset& ds) {
  std::vector<Index> deg(ds.num_users());
  for (Index u = 0; u < ds.num_users(); ++u) deg[u] = ds.user_degree(u);
  return deg;
}

// Tertile cut points of the train degree distribution.
inline std::pair<Index, Index> default_sparsity_boundaries(const InteractionDataset& ds) {
  auto deg = train_degrees(ds);
  std::erase(deg, 0);
  if (deg.empty()) return {1, 2};
  std::sort(deg.begin(), deg.end());
  const auto at = [&](double q) {
    return deg[std::min(deg.size() - 1, static_cast<std::size_t>(q * static_cast<double>(deg.size())))];
  };
  Index lo = at(1.0 / 3.0);
  Index hi = at(2.0 / 3.0);
  if (hi <= lo) hi = lo + 1;
  return {lo, hi};
}

inline SparsityGroups sparsity_groups(const InteractionDataset& ds,
                                      std::optional<std::pair<Index, Index>> boundaries = {}) {
  return sparsity_groups(train_degrees(ds), boundaries.value_or(default_sparsity_boundaries(ds)));
}

// Adds round(ratio·|train|) fake train edges drawn uniformly from cells that are
// in neither split. The test split is untouched.
inline InteractionDataset inject_noise(const InteractionDataset& ds, double ratio,
                                       std::uint64_t seed) {
  if (ratio < 0.0) throw ValidationError("noise ratio must be non-negative");
  const auto n_fake = static_cast<Index>(std::llround(ratio * static_cast<double>(ds.train().size())));
  if (n_fake == 0) return ds;

  std::unordered_set<std::uint64_t> occupied;
  for (const auto& e : ds.train()) occupied.insert(edge_key(e.user, e.item));
  for (const auto& e : ds.test()) occupied.insert(edge_key(e.user, e.item));
  const double cells = static_cast<double>(ds.num_users()) * static_cast<double>(ds.num_items());
  if (cells - static_cast<double>(occupied.size()) < static_cast<double>(n_fake)) {
    throw ValidationError("noise ratio " + std::to_string(ratio) + " needs " +
                          std::to_string(n_fake) + " empty cells, only " +
                          std::to_string(static_cast<Index>(cells) - static_cast<Index>(occupied.size())) +
                          " available");
  }

  Rng rng = make_rng({seed, 0x6e6f697365ull});
  std::uniform_int_distribution<Index> pick_user(0, ds.num_users() - 1);
  std::uniform_int_distribution<Index> pick_item(0, ds.num_items() - 1);
  std::vector<Interaction> fake;
  fake.reserve(n_fake);
  const bool sparse = static_cast<double>(occupied.size() + n_fake) < 0.5 * cells;
  if (sparse) {
    while (static_cast<Index>(fake.size()) < n_fake) {
      const Interaction e{pick_user(rng), pick_item(rng)};
      if (occupied.insert(edge_key(e.user, e.item)).second) fake.push_back(e);
    }
  } else {
    std::vector<Interaction> empty;
    for (Index u = 0; u < ds.num_users(); ++u) {
      for (Index i = 0; i < ds.num_items(); ++i) {
        if (!occupied.contains(edge_key(u, i))) empty.push_back({u, i});
      }
    }
    std::shuffle(empty.begin(), empty.end(), rng);
    fake.assign(empty.begin(), empty.begin() + n_fake);
  }

  auto train = ds.train();
  train.insert(train.end(), fake.begin(), fake.end());
  auto noisy = InteractionDataset::from_splits(ds.num_users(), ds.num_items(), std::move(train),
                                               ds.test());
  noisy.set_names(ds.user_names(), ds.item_names());
  std::sort(fake.begin(), fake.end());
  noisy.injected_ = ds.injected();
  noisy.injected_.insert(noisy.injected_.end(), fake.begin(), fake.end());
  return noisy;
}

struct SplitManifest {
  Index num_users = 0;
  Index num_items = 0;
  Index train_edges = 0;
  Index test_edges = 0;
  double density = 0.0;
  double train_ratio = 0.0;
  std::uint64_t seed = 0;
  Index duplicates = 0;
  Index dropped_cold_users = 0;
  std::string source;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["num_users"] = num_users;
    j["num_items"] = num_items;
    j["train_edges"] = train_edges;
    j["test_edges"] = test_edges;
    j["density"] = density;
    j["train_ratio"] = train_ratio;
    j["seed"] = seed;
    j["duplicates"] = duplicates;
    j["dropped_cold_users"] = dropped_cold_users;
    j["source"] = source;
    return j;
  }
};

inline SplitManifest make_manifest(const InteractionDataset& ds, double train_ratio,
                                   std::uint64_t seed, Index duplicates, std::string source) {
  return {ds.num_users(),
          ds.num_items(),
          static_cast<Index>(ds.train().size()),
          static_cast<Index>(ds.test().size()),
          ds.density(),
          train_ratio,
          seed,
          duplicates,
          ds.dropped_cold_users(),
          std::move(source)};
}

namespace detail {

inline void write_edges(const std::filesystem::path& path, const std::vector<Interaction>& edges) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& e : edges) out << e.user << ' ' << e.item << '\n';
}

inline std::vector<Interaction> read_edges(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<Interaction> edges;
  std::string line;
  Index ln = 0;
  while (std::getline(in, line)) {
    ++ln;
    if (line.empty()) continue;
    std::istringstream ls(line);
    Interaction e;
    if (!(ls >> e.user >> e.item)) {
      throw IoError(path.string() + ":" + std::to_string(ln) + ": malformed edge");
    }
    edges.push_back(e);
  }
  return edges;
}

inline void write_names(const std::filesystem::path& path, const std::vector<std::string>& names) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (std::size_t k = 0; k < names.size(); ++k) out << k << '\t' << names[k] << '\n';
}

inline std::vector<std::string> read_names(const std::filesystem::path& path) {
  std::vector<std::string> names;
  std::ifstream in(path);
  if (!in) return names;
  std::string line;
  while (std::getline(in, line)) {
    const auto tab = line.find('\t');
    names.push_back(tab == std::string::npos ? line : line.substr(tab + 1));
  }
  return names;
}

}  // namespace detail

// Layout: manifest.json, train.txt, test.txt, users.tsv, items.tsv.
inline void save_split(const std::filesystem::path& dir, const InteractionDataset& ds,
                       const SplitManifest& manifest) {
  std::filesystem::create_directories(dir);
  detail::write_edges(dir / "train.txt", ds.train());
  detail::write_edges(dir / "test.txt", ds.test());
  detail::write_names(dir / "users.tsv", ds.user_names());
  detail::write_names(dir / "items.tsv", ds.item_names());
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
  out << manifest.to_json().dump(2) << '\n';
}

inline InteractionDataset load_split(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw IoError("split manifest not found: " + manifest_path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad manifest " + manifest_path.string() + ": " + e.what());
  }
  const Index m = j.at("num_users").get<Index>();
  const Index n = j.at("num_items").get<Index>();
  auto ds = InteractionDataset::from_splits(m, n, detail::read_edges(dir / "train.txt"),
                                            detail::read_edges(dir / "test.txt"));
  ds.set_names(detail::read_names(dir / "users.tsv"), detail::read_names(dir / "items.tsv"));
  return ds;
}

// Re-splits each user's train edges; the result's test split holds the
// validation edges. The original test split is not included.
inline InteractionDataset carve_validation(const InteractionDataset& ds, double val_ratio,
                                           std::uint64_t seed) {
  RawEdges raw;
  raw.user_names.resize(ds.num_users());
  raw.item_names.resize(ds.num_items());
  raw.edges = ds.train();
  return split_per_user(raw, 1.0 - val_ratio, seed ^ 0x76616c69ull);
}

}  // namespace ccf
