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
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <vector>

#include "ccf/common.hpp"
#include "ccf/dataset.hpp"
#include "ccf/model.hpp"

namespace ccf {

struct Triplet {
  Index row = 0;
  Index col = 0;
  double weight = 0.0;
};

// D^-1/2 A D^-1/2 of the user-item bipartite graph in CSR form. Node order is
// users [0, M) followed by items [M, M+N). No self-loops.
class NormalizedAdjacency {
 public:
  NormalizedAdjacency() = default;

  Index size() const { return num_users_ + num_items_; }
  Index num_users() const { return num_users_; }
  Index num_items() const { return num_items_; }
  Index nnz() const { return static_cast<Index>(cols_.size()); }
  // Nodes with no train edge; they carry no entries.
  Index isolated_nodes() const { return isolated_; }

  const std::vector<Index>& row_ptr() const { return row_ptr_; }
  const std::vector<Index>& cols() const { return cols_; }
  const std::vector<double>& values() const { return values_; }

  // Weight at (r, c), 0 when absent.
  double weight(Index r, Index c) const {
    const auto b = cols_.begin() + row_ptr_[r];
    const auto e = cols_.begin() + row_ptr_[r + 1];
    const auto it = std::lower_bound(b, e, c);
    return (it != e && *it == c) ? values_[it - cols_.begin()] : 0.0;
  }

  std::vector<Triplet> triplets() const {
    std::vector<Triplet> out;
    out.reserve(cols_.size());
    for (Index r = 0; r < size(); ++r)
      for (Index k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) out.push_back({r, cols_[k], values_[k]});
    return out;
  }

  // out = A * x, x has size() rows.
  RowMatrix multiply(const RowMatrix& x) const {
    if (x.rows() != size()) throw ConfigError("adjacency multiply: row count mismatch");
    RowMatrix out = RowMatrix::Zero(x.rows(), x.cols());
    for (Index r = 0; r < size(); ++r) {
      auto dst = out.row(r);
      for (Index k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) dst.noalias() += values_[k] * x.row(cols_[k]);
    }
    return out;
  }

  void dump(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << std::setprecision(17);
    for (const auto& t : triplets()) out << t.row << ' ' << t.col << ' ' << t.weight << '\n';
  }

 private:
  friend NormalizedAdjacency build_normalized_adjacency(const InteractionDataset&);

  Index num_users_ = 0;
  Index num_items_ = 0;
  Index isolated_ = 0;
  std::vector<Index> row_ptr_;
  std::vector<Index> cols_;
  std::vector<double> values_;
};

inline NormalizedAdjacency build_normalized_adjacency(const InteractionDataset& ds) {
  NormalizedAdjacency a;
  const Index m = ds.num_users();
  const Index n = ds.num_items();
  a.num_users_ = m;
  a.num_items_ = n;
  a.row_ptr_.assign(m + n + 1, 0);
  a.cols_.reserve(2 * ds.train().size());
  a.values_.reserve(2 * ds.train().size());
  auto inv_sqrt = [](Index du, Index di) {
    return 1.0 / std::sqrt(static_cast<double>(du) * static_cast<double>(di));
  };
  for (Index u = 0; u < m; ++u) {
    const auto& nb = ds.user_neighbors(u);
    if (nb.empty()) ++a.isolated_;
    for (Index i : nb) {
      a.cols_.push_back(m + i);
      a.values_.push_back(inv_sqrt(ds.user_degree(u), ds.item_degree(i)));
    }
    a.row_ptr_[u + 1] = static_cast<Index>(a.cols_.size());
  }
  for (Index i = 0; i < n; ++i) {
    const auto& nb = ds.item_neighbors(i);
    if (nb.empty()) ++a.isolated_;
    for (Index u : nb) {
      a.cols_.push_back(u);
      a.values_.push_back(inv_sqrt(ds.user_degree(u), ds.item_degree(i)));
    }
    a.row_ptr_[m + i + 1] = static_cast<Index>(a.cols_.size());
  }
  return a;
}

// Number of layers and the per-layer combination weights alpha_0..alpha_L.
struct PropagationConfig {
  Index num_layers = 0;
  std::vector<double> layer_weights;

  static PropagationConfig uniform(Index layers) {
    PropagationConfig c;
    c.num_layers = layers;
    c.layer_weights.assign(layers + 1, 1.0 / static_cast<double>(layers + 1));
    return c;
  }

  void validate() const {
    if (num_layers < 0) throw ConfigError("num_layers must be >= 0");
    if (static_cast<Index>(layer_weights.size()) != num_layers + 1) {
      throw ConfigError("layer_weights must have num_layers + 1 entries");
    }
  }
};

inline RowMatrix stack(const EmbeddingState& e) {
  RowMatrix x(e.num_users() + e.num_items(), e.dim());
  x.topRows(e.num_users()) = e.users;
  x.bottomRows(e.num_items()) = e.items;
  return x;
}

inline EmbeddingState unstack(const RowMatrix& x, Index num_users) {
  return EmbeddingState(x.topRows(num_users), x.bottomRows(x.rows() - num_users));
}

// sum_j alpha_j A^j X, evaluated by repeated sparse products.
inline RowMatrix propagate_stacked(const RowMatrix& x, const NormalizedAdjacency& adj,
                                   const PropagationConfig& cfg) {
  cfg.validate();
  if (x.rows() != adj.size()) throw ConfigError("propagate: embedding rows do not match adjacency size");
  RowMatrix out = cfg.layer_weights[0] * x;
  RowMatrix layer = x;
  for (Index j = 1; j <= cfg.num_layers; ++j) {
    layer = adj.multiply(layer);
    out.noalias() += cfg.layer_weights[j] * layer;
  }
  return out;
}

inline EmbeddingState propagate(const EmbeddingState& e0, const NormalizedAdjacency& adj,
                                const PropagationConfig& cfg) {
  if (e0.num_users() != adj.num_users() || e0.num_items() != adj.num_items()) {
    throw ConfigError("propagate: embedding tables do not match adjacency");
  }
  return unstack(propagate_stacked(stack(e0), adj, cfg), e0.num_users());
}

// One explicit aggregation step for a single user:
// sum over neighbors i of e_i / sqrt(|N_u| |N_i|).
inline Vector layer0_user_aggregation(Index u, const EmbeddingState& e, const InteractionDataset& ds) {
  const auto& nb = ds.user_neighbors(u);
  if (nb.empty()) throw ValidationError("user " + std::to_string(u) + " has no neighbors");
  Vector out = Vector::Zero(e.dim());
  const double du = static_cast<double>(nb.size());
  for (Index i : nb) {
    out += e.items.row(i).transpose() / std::sqrt(du * static_cast<double>(ds.item_degree(i)));
  }
  return out;
}

}  // namespace ccf
