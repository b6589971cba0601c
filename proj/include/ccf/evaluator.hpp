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

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ccf/common.hpp"
#include "ccf/dataset.hpp"
#include "ccf/model.hpp"

namespace ccf {

// Top-K item ids by descending score, ties by ascending id. Items in `masked`
// are never returned; fewer than K ids come back when too few remain.
inline std::vector<Index> topk_ranking(const Vector& scores, std::span<const Index> masked, Index k) {
  const Index n = scores.size();
  std::vector<char> blocked(n, 0);
  for (Index i : masked) blocked[i] = 1;
  std::vector<Index> ids;
  ids.reserve(n);
  for (Index i = 0; i < n; ++i)
    if (!blocked[i]) ids.push_back(i);
  const Index take = std::min<Index>(k, static_cast<Index>(ids.size()));
  auto better = [&](Index a, Index b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); };
  std::partial_sort(ids.begin(), ids.begin() + take, ids.end(), better);
  ids.resize(take);
  return ids;
}

inline std::vector<Index> topk_ranking(Index u, const EmbeddingState& e, const InteractionDataset& ds, Index k) {
  return topk_ranking(score_all_items(u, e), ds.user_neighbors(u), k);
}

namespace detail {
inline Index hits_in_prefix(std::span<const Index> ranked, std::span<const Index> sorted_test, Index k,
                            std::vector<char>* hit_flags = nullptr) {
  Index hits = 0;
  const Index lim = std::min<Index>(k, static_cast<Index>(ranked.size()));
  for (Index r = 0; r < lim; ++r) {
    const bool h = std::binary_search(sorted_test.begin(), sorted_test.end(), ranked[r]);
    if (hit_flags != nullptr) hit_flags->push_back(h ? 1 : 0);
    hits += h ? 1 : 0;
  }
  return hits;
}

inline std::vector<Index> sorted_copy(std::span<const Index> v) {
  std::vector<Index> s(v.begin(), v.end());
  std::sort(s.begin(), s.end());
  return s;
}
}  // namespace detail

// |hits in top K| / |test items|.
inline double recall_at_k(std::span<const Index> ranked, std::span<const Index> test_items, Index k) {
  if (test_items.empty()) throw ValidationError("recall_at_k: no test items");
  const auto t = detail::sorted_copy(test_items);
  return static_cast<double>(detail::hits_in_prefix(ranked, t, k)) / static_cast<double>(t.size());
}

// Binary-gain DCG with 1/log2(rank + 1) discounts (rank from 1), normalized by
// the DCG of min(|test|, K) hits at the top.
inline double ndcg_at_k(std::span<const Index> ranked, std::span<const Index> test_items, Index k) {
  if (test_items.empty()) throw ValidationError("ndcg_at_k: no test items");
  const auto t = detail::sorted_copy(test_items);
  std::vector<char> flags;
  detail::hits_in_prefix(ranked, t, k, &flags);
  double dcg = 0.0;
  for (std::size_t r = 0; r < flags.size(); ++r)
    if (flags[r]) dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  double idcg = 0.0;
  const Index ideal = std::min<Index>(k, static_cast<Index>(t.size()));
  for (Index r = 0; r < ideal; ++r) idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  return dcg / idcg;
}

struct MetricPair {
  double recall = 0.0;
  double ndcg = 0.0;
};

struct EvalReport {
  std::map<Index, double> recall;
  std::map<Index, double> ndcg;
  // group name -> K -> metrics
  std::map<std::string, std::map<Index, MetricPair>> per_group;
  std::map<std::string, Index> group_users;
  double wall_time_per_epoch = 0.0;
  double eval_seconds = 0.0;
  Index users_evaluated = 0;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    for (const auto& [k, v] : recall) j["recall"][std::to_string(k)] = v;
    for (const auto& [k, v] : ndcg) j["ndcg"][std::to_string(k)] = v;
    for (const auto& [g, by_k] : per_group) {
      for (const auto& [k, m] : by_k) {
        j["per_group"][g][std::to_string(k)] = {{"recall", m.recall}, {"ndcg", m.ndcg}};
      }
      j["per_group"][g]["users"] = group_users.at(g);
    }
    j["users_evaluated"] = users_evaluated;
    j["wall_time_per_epoch"] = wall_time_per_epoch;
    j["eval_seconds"] = eval_seconds;
    return j;
  }

  // Long format: config, group, K, metric, value.
  void write_long(std::ostream& out, const std::string& config, bool header = true) const {
    if (header) out << "config\tgroup\tK\tmetric\tvalue\n";
    out.precision(10);
    for (const auto& [k, v] : recall) out << config << "\tall\t" << k << "\trecall\t" << v << '\n';
    for (const auto& [k, v] : ndcg) out << config << "\tall\t" << k << "\tndcg\t" << v << '\n';
    for (const auto& [g, by_k] : per_group) {
      for (const auto& [k, m] : by_k) {
        out << config << '\t' << g << '\t' << k << "\trecall\t" << m.recall << '\n';
        out << config << '\t' << g << '\t' << k << "\tndcg\t" << m.ndcg << '\n';
      }
    }
  }
};

struct EvalOptions {
  std::vector<Index> ks{10, 20};
  // Per-user sparsity labels; per-group metrics are skipped when absent.
  const SparsityGroups* groups = nullptr;
  // Restrict to these users (all users with held-out items when empty).
  std::vector<Index> users;
};

// Macro-averaged Recall@K / NDCG@K over users with at least one held-out item.
// Train items are masked from each user's ranking.
inline EvalReport evaluate(const EmbeddingState& e, const InteractionDataset& ds, const EvalOptions& opt = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  if (opt.ks.empty()) throw ConfigError("evaluate: no cutoffs given");
  const Index kmax = *std::max_element(opt.ks.begin(), opt.ks.end());
  std::vector<Index> users = opt.users;
  if (users.empty()) {
    for (Index u = 0; u < ds.num_users(); ++u)
      if (!ds.test_items(u).empty()) users.push_back(u);
  }
  std::sort(users.begin(), users.end());
  if (users.empty()) throw ValidationError("evaluate: no user has held-out items");

  EvalReport rep;
  std::array<std::map<Index, MetricPair>, 3> group_sums;
  std::array<Index, 3> group_counts{};
  std::map<Index, MetricPair> sums;

  constexpr Index kBlock = 256;
  for (std::size_t start = 0; start < users.size(); start += kBlock) {
    const std::size_t stop = std::min(users.size(), start + kBlock);
    RowMatrix block(static_cast<Index>(stop - start), e.dim());
    for (std::size_t r = start; r < stop; ++r) block.row(static_cast<Index>(r - start)) = e.users.row(users[r]);
    const RowMatrix scores = block * e.items.transpose();
    for (std::size_t r = start; r < stop; ++r) {
      const Index u = users[r];
      const Vector s = scores.row(static_cast<Index>(r - start)).transpose();
      const auto ranked = topk_ranking(s, ds.user_neighbors(u), kmax);
      const auto& test = ds.test_items(u);
      for (Index k : opt.ks) {
        const MetricPair m{recall_at_k(ranked, test, k), ndcg_at_k(ranked, test, k)};
        sums[k].recall += m.recall;
        sums[k].ndcg += m.ndcg;
        if (opt.groups != nullptr) {
          auto& gs = group_sums[static_cast<int>(opt.groups->labels[u])][k];
          gs.recall += m.recall;
          gs.ndcg += m.ndcg;
        }
      }
      if (opt.groups != nullptr) ++group_counts[static_cast<int>(opt.groups->labels[u])];
    }
  }

  const auto n = static_cast<double>(users.size());
  for (const auto& [k, m] : sums) {
    rep.recall[k] = m.recall / n;
    rep.ndcg[k] = m.ndcg / n;
  }
  if (opt.groups != nullptr) {
    for (int g = 0; g < 3; ++g) {
      const std::string name = to_string(static_cast<SparsityGroup>(g));
      rep.group_users[name] = group_counts[g];
      for (Index k : opt.ks) {
        MetricPair m;
        if (group_counts[g] > 0) {
          m.recall = group_sums[g][k].recall / static_cast<double>(group_counts[g]);
          m.ndcg = group_sums[g][k].ndcg / static_cast<double>(group_counts[g]);
        }
        rep.per_group[name][k] = m;
      }
    }
  }
  rep.users_evaluated = static_cast<Index>(users.size());
  rep.eval_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

// log mean exp(-2 |x_hat - y_hat|^2) over all pairs of `sample_size` users
// drawn without replacement. Lower means more uniform on the sphere.
inline double uniformity_diagnostic(const RowMatrix& embeddings, Index sample_size, std::uint64_t seed = 0) {
  if (sample_size < 2) throw ValidationError("uniformity_diagnostic: sample_size must be >= 2");
  std::vector<Index> ids(embeddings.rows());
  std::iota(ids.begin(), ids.end(), Index{0});
  if (sample_size < static_cast<Index>(ids.size())) {
    Rng rng = make_rng({seed, 0x756e6966ull});
    std::shuffle(ids.begin(), ids.end(), rng);
    ids.resize(sample_size);
  }
  if (ids.size() < 2) throw ValidationError("uniformity_diagnostic: need at least two rows");
  RowMatrix x(static_cast<Index>(ids.size()), embeddings.cols());
  for (std::size_t k = 0; k < ids.size(); ++k) {
    const double nrm = embeddings.row(ids[k]).norm();
    if (nrm == 0.0) throw ValidationError("uniformity_diagnostic: zero embedding");
    x.row(static_cast<Index>(k)) = embeddings.row(ids[k]) / nrm;
  }
  double acc = 0.0;
  Index pairs = 0;
  for (Index a = 0; a < x.rows(); ++a) {
    for (Index b = a + 1; b < x.rows(); ++b) {
      acc += std::exp(-2.0 * (x.row(a) - x.row(b)).squaredNorm());
      ++pairs;
    }
  }
  return std::log(acc / static_cast<double>(pairs));
}

// (clean - noisy) / clean.
inline double relative_degradation(double clean, double noisy) {
  if (clean == 0.0) throw ValidationError("relative_degradation: clean metric is zero");
  return (clean - noisy) / clean;
}

}  // namespace ccf
