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
#include <numeric>
#include <vector>

#include "ccf/common.hpp"
#include "ccf/dataset.hpp"

namespace ccf {

// B training triplets. (users[k], pos_items[k]) is a train edge and
// (users[k], neg_items[k]) is not.
struct Batch {
  std::vector<Index> users;
  std::vector<Index> pos_items;
  std::vector<Index> neg_items;

  Index size() const { return static_cast<Index>(users.size()); }

  std::vector<Interaction> positive_pairs() const {
    std::vector<Interaction> out(users.size());
    for (std::size_t k = 0; k < users.size(); ++k) out[k] = {users[k], pos_items[k]};
    return out;
  }

  friend bool operator==(const Batch&, const Batch&) = default;
};

// Uniform over items outside the user's train neighbors. Rejection sampling
// first; after 64 misses, draws directly from the complement.
inline Index sample_negative(Index u, const InteractionDataset& ds, Rng& rng) {
  const auto& pos = ds.user_neighbors(u);
  const Index n = ds.num_items();
  if (static_cast<Index>(pos.size()) >= n) {
    throw ValidationError("user " + std::to_string(u) + " interacted with every item");
  }
  std::uniform_int_distribution<Index> any(0, n - 1);
  for (int attempt = 0; attempt < 64; ++attempt) {
    const Index j = any(rng);
    if (!std::binary_search(pos.begin(), pos.end(), j)) return j;
  }
  // k-th item of the complement, walking the sorted positive list.
  std::uniform_int_distribution<Index> nth(0, n - static_cast<Index>(pos.size()) - 1);
  Index k = nth(rng);
  Index j = k;
  for (Index p : pos) {
    if (p <= j) {
      ++j;
    } else {
      break;
    }
  }
  return j;
}

// Batch sizes for `num_edges` edges: full batches, and a short tail that is kept
// when it has at least two edges or merged into the previous batch otherwise.
inline std::vector<Index> batch_sizes(Index num_edges, Index batch_size) {
  std::vector<Index> sizes;
  for (Index start = 0; start < num_edges; start += batch_size) {
    sizes.push_back(std::min(batch_size, num_edges - start));
  }
  if (sizes.size() >= 2 && sizes.back() < 2) {
    sizes[sizes.size() - 2] += sizes.back();
    sizes.pop_back();
  }
  return sizes;
}

// Deterministic stream of batches for one epoch. The edge permutation is seeded
// by (seed, epoch), each batch's negatives by (seed, epoch, batch index).
class EpochBatches {
 public:
  EpochBatches(const InteractionDataset& ds, Index batch_size, std::uint64_t seed, std::uint64_t epoch)
      : ds_(&ds), seed_(seed), epoch_(epoch) {
    if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
    order_.resize(ds.train().size());
    std::iota(order_.begin(), order_.end(), Index{0});
    Rng rng = make_rng({seed, epoch, 0x73687566ull});
    std::shuffle(order_.begin(), order_.end(), rng);
    sizes_ = batch_sizes(static_cast<Index>(order_.size()), batch_size);
    offsets_.assign(sizes_.size(), 0);
    for (std::size_t b = 1; b < sizes_.size(); ++b) offsets_[b] = offsets_[b - 1] + sizes_[b - 1];
  }

  Index num_batches() const { return static_cast<Index>(sizes_.size()); }

  Batch batch(Index b) const {
    const Index start = offsets_[b];
    Batch out;
    const Index n = sizes_[b];
    out.users.reserve(n);
    out.pos_items.reserve(n);
    out.neg_items.reserve(n);
    Rng rng = make_rng({seed_, epoch_, static_cast<std::uint64_t>(b), 0x6e6567ull});
    for (Index k = start; k < start + n; ++k) {
      const auto& e = ds_->train()[order_[k]];
      out.users.push_back(e.user);
      out.pos_items.push_back(e.item);
      out.neg_items.push_back(sample_negative(e.user, *ds_, rng));
    }
    return out;
  }

  std::vector<Batch> all() const {
    std::vector<Batch> out;
    out.reserve(sizes_.size());
    for (Index b = 0; b < num_batches(); ++b) out.push_back(batch(b));
    return out;
  }

 private:
  const InteractionDataset* ds_;
  std::uint64_t seed_;
  std::uint64_t epoch_;
  std::vector<Index> order_;
  std::vector<Index> sizes_;
  std::vector<Index> offsets_;
};

inline std::vector<Batch> epoch_batches(const InteractionDataset& ds, Index batch_size,
                                        std::uint64_t seed, std::uint64_t epoch) {
  return EpochBatches(ds, batch_size, seed, epoch).all();
}

}  // namespace ccf
