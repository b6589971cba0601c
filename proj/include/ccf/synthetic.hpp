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

#include <cmath>
#include <fstream>
#include <random>
#include <string>
#include <unordered_set>
#include <vector>

#include "ccf/common.hpp"
#include "ccf/dataset.hpp"

namespace ccf {

// Clustered implicit-feedback generator: items belong to latent communities
// with long-tailed popularity, each user mixes a primary and a secondary
// community and samples the rest of their items uniformly.
struct SyntheticSpec {
  Index users = 1000;
  Index items = 1500;
  Index clusters = 10;
  double mean_degree = 30.0;
  Index min_degree = 5;
  double in_cluster = 0.85;       // share of interactions drawn from the user's communities
  double primary_share = 0.7;     // of those, share from the primary community
  double popularity_exponent = 0.8;
  std::uint64_t seed = 7;
};

inline RawEdges generate_synthetic(const SyntheticSpec& s) {
  if (s.users < 1 || s.items < 2 || s.clusters < 1 || s.clusters > s.items) {
    throw ConfigError("synthetic: invalid sizes");
  }
  Rng rng = make_rng({s.seed, 0x73796e74ull});
  RawEdges raw;
  for (Index u = 0; u < s.users; ++u) raw.user_names.push_back("u" + std::to_string(u));
  for (Index i = 0; i < s.items; ++i) raw.item_names.push_back("i" + std::to_string(i));

  std::vector<std::vector<Index>> members(s.clusters);
  std::vector<Index> item_ids(s.items);
  for (Index i = 0; i < s.items; ++i) item_ids[i] = i;
  std::shuffle(item_ids.begin(), item_ids.end(), rng);
  for (Index k = 0; k < s.items; ++k) members[k % s.clusters].push_back(item_ids[k]);

  std::vector<std::discrete_distribution<Index>> pick_in_cluster;
  for (const auto& m : members) {
    std::vector<double> w(m.size());
    for (std::size_t r = 0; r < m.size(); ++r) w[r] = 1.0 / std::pow(static_cast<double>(r + 1), s.popularity_exponent);
    pick_in_cluster.emplace_back(w.begin(), w.end());
  }
  std::uniform_int_distribution<Index> any_cluster(0, s.clusters - 1);
  std::uniform_int_distribution<Index> any_item(0, s.items - 1);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::exponential_distribution<double> extra(1.0 / std::max(1.0, s.mean_degree - static_cast<double>(s.min_degree)));

  for (Index u = 0; u < s.users; ++u) {
    const Index primary = any_cluster(rng);
    const Index secondary = any_cluster(rng);
    Index degree = s.min_degree + static_cast<Index>(extra(rng));
    degree = std::min(degree, s.items / 2);
    std::unordered_set<Index> chosen;
    Index guard = 0;
    while (static_cast<Index>(chosen.size()) < degree && guard++ < 50 * degree) {
      Index item;
      if (coin(rng) < s.in_cluster) {
        const Index c = coin(rng) < s.primary_share ? primary : secondary;
        item = members[c][pick_in_cluster[c](rng)];
      } else {
        item = any_item(rng);
      }
      if (chosen.insert(item).second) raw.edges.push_back({u, item});
    }
  }
  return raw;
}

inline void write_pairs(const std::filesystem::path& path, const RawEdges& raw) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& e : raw.edges) out << raw.user_names[e.user] << ' ' << raw.item_names[e.item] << '\n';
}

}  // namespace ccf
