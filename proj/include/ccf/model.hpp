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
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>

#include "ccf/common.hpp"

namespace ccf {

enum class SimilarityKind { kDot, kCosine };

inline const char* to_string(SimilarityKind k) { return k == SimilarityKind::kDot ? "dot" : "cosine"; }

inline SimilarityKind parse_similarity(std::string_view s) {
  if (s == "dot") return SimilarityKind::kDot;
  if (s == "cosine") return SimilarityKind::kCosine;
  throw ConfigError("unknown similarity '" + std::string(s) + "'");
}

// The trainable parameters: one row per user and one row per item.
struct EmbeddingState {
  RowMatrix users;
  RowMatrix items;

  EmbeddingState() = default;
  EmbeddingState(Index num_users, Index num_items, Index dim)
      : users(RowMatrix::Zero(num_users, dim)), items(RowMatrix::Zero(num_items, dim)) {}
  EmbeddingState(RowMatrix u, RowMatrix i) : users(std::move(u)), items(std::move(i)) {
    if (users.cols() != items.cols()) {
      throw ConfigError("user and item tables must share the embedding dimension");
    }
  }

  Index num_users() const { return users.rows(); }
  Index num_items() const { return items.rows(); }
  Index dim() const { return users.cols(); }
  bool finite() const { return users.allFinite() && items.allFinite(); }

  void set_zero() {
    users.setZero();
    items.setZero();
  }

  // this += scale * other
  void axpy(double scale, const EmbeddingState& other) {
    users.noalias() += scale * other.users;
    items.noalias() += scale * other.items;
  }

  double squared_norm() const { return users.squaredNorm() + items.squaredNorm(); }

  friend bool operator==(const EmbeddingState& a, const EmbeddingState& b) {
    return a.users.rows() == b.users.rows() && a.items.rows() == b.items.rows() &&
           a.dim() == b.dim() && a.users == b.users && a.items == b.items;
  }
};

// Uniform in ±sqrt(6 / (fan_in + fan_out)) with fan_in = fan_out = dim.
inline double xavier_bound(Index dim) { return std::sqrt(6.0 / (2.0 * static_cast<double>(dim))); }

inline EmbeddingState init_xavier(Index num_users, Index num_items, Index dim, std::uint64_t seed) {
  if (dim < 1) throw ConfigError("embedding dimension must be >= 1");
  EmbeddingState e(num_users, num_items, dim);
  const double bound = xavier_bound(dim);
  Rng rng = make_rng({seed, 0x78617669ull});
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Index r = 0; r < num_users; ++r)
    for (Index c = 0; c < dim; ++c) e.users(r, c) = dist(rng);
  for (Index r = 0; r < num_items; ++r)
    for (Index c = 0; c < dim; ++c) e.items(r, c) = dist(rng);
  return e;
}

template <typename A, typename B>
double similarity(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b, SimilarityKind kind) {
  if (a.size() != b.size()) throw ConfigError("similarity: dimension mismatch");
  const double dot = a.dot(b);
  if (kind == SimilarityKind::kDot) return dot;
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw ValidationError("cosine similarity of a zero vector");
  return dot / (na * nb);
}

// Dot-product score of user u against every item.
inline Vector score_all_items(Index u, const EmbeddingState& e) {
  return e.items * e.users.row(u).transpose();
}

// Binary checkpoint: magic, version, M, N, d, seed, similarity kind, then both
// tables row-major as little-endian doubles.
struct CheckpointHeader {
  std::int64_t num_users = 0;
  std::int64_t num_items = 0;
  std::int64_t dim = 0;
  std::uint64_t seed = 0;
  SimilarityKind similarity = SimilarityKind::kCosine;
};

namespace detail {
inline constexpr char kCheckpointMagic[8] = {'C', 'C', 'F', 'E', 'M', 'B', '0', '1'};

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("truncated checkpoint");
  return v;
}
}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const EmbeddingState& e,
                            std::uint64_t seed, SimilarityKind sim) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(detail::kCheckpointMagic, sizeof(detail::kCheckpointMagic));
  detail::write_pod<std::int64_t>(out, e.num_users());
  detail::write_pod<std::int64_t>(out, e.num_items());
  detail::write_pod<std::int64_t>(out, e.dim());
  detail::write_pod<std::uint64_t>(out, seed);
  detail::write_pod<std::int32_t>(out, static_cast<std::int32_t>(sim));
  out.write(reinterpret_cast<const char*>(e.users.data()),
            static_cast<std::streamsize>(e.users.size() * sizeof(double)));
  out.write(reinterpret_cast<const char*>(e.items.data()),
            static_cast<std::streamsize>(e.items.size() * sizeof(double)));
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

inline EmbeddingState load_checkpoint(const std::filesystem::path& path,
                                      CheckpointHeader* header_out = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  char magic[sizeof(detail::kCheckpointMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, detail::kCheckpointMagic, sizeof(magic)) != 0) {
    throw IoError("not a checkpoint file: " + path.string());
  }
  CheckpointHeader h;
  h.num_users = detail::read_pod<std::int64_t>(in);
  h.num_items = detail::read_pod<std::int64_t>(in);
  h.dim = detail::read_pod<std::int64_t>(in);
  h.seed = detail::read_pod<std::uint64_t>(in);
  const auto sim = detail::read_pod<std::int32_t>(in);
  if (h.num_users < 0 || h.num_items < 0 || h.dim < 1 || (sim != 0 && sim != 1)) {
    throw IoError("corrupt checkpoint header in " + path.string());
  }
  h.similarity = static_cast<SimilarityKind>(sim);
  EmbeddingState e(h.num_users, h.num_items, h.dim);
  in.read(reinterpret_cast<char*>(e.users.data()),
          static_cast<std::streamsize>(e.users.size() * sizeof(double)));
  in.read(reinterpret_cast<char*>(e.items.data()),
          static_cast<std::streamsize>(e.items.size() * sizeof(double)));
  if (!in) throw IoError("truncated checkpoint " + path.string());
  if (header_out != nullptr) *header_out = h;
  return e;
}

}  // namespace ccf
