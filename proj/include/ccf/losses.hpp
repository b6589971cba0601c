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
//
// Reference (loop-form) evaluation of every training objective. These are the
// readable definitions; gradients.hpp evaluates the same quantities in batched
// matrix form together with their gradients.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ccf/common.hpp"
#include "ccf/dataset.hpp"
#include "ccf/model.hpp"
#include "ccf/sampler.hpp"

namespace ccf {

enum class NaNegatives { kOtherItems, kOtherItemsAndUsers };

inline const char* to_string(NaNegatives n) {
  return n == NaNegatives::kOtherItems ? "other_items" : "other_items_and_users";
}

inline NaNegatives parse_na_negatives(std::string_view s) {
  if (s == "other_items") return NaNegatives::kOtherItems;
  if (s == "other_items_and_users") return NaNegatives::kOtherItemsAndUsers;
  throw ConfigError("unknown na_negatives '" + std::string(s) + "'");
}

// Which embeddings the L2 term covers.
enum class RegScope { kBatch, kFull };

inline const char* to_string(RegScope r) { return r == RegScope::kBatch ? "batch" : "full"; }

inline RegScope parse_reg_scope(std::string_view s) {
  if (s == "batch") return RegScope::kBatch;
  if (s == "full") return RegScope::kFull;
  throw ConfigError("unknown reg_scope '" + std::string(s) + "'");
}

// The auxiliary term added to BPR.
enum class AuxLoss { kNone, kClSs, kClUi, kNa };

struct LossConfig {
  double tau = 0.2;
  double alpha = 1.0;  // weight of the auxiliary term
  double beta = 1e-4;  // L2 weight
  NaNegatives na_negatives = NaNegatives::kOtherItems;
  SimilarityKind contrastive_similarity = SimilarityKind::kCosine;
  RegScope reg_scope = RegScope::kBatch;

  void validate() const {
    if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
    if (alpha < 0.0) throw ConfigError("alpha must be >= 0");
    if (beta < 0.0) throw ConfigError("beta must be >= 0");
  }
};

using PositivePairs = std::span<const Interaction>;

namespace detail {

inline double log_sum_exp(std::span<const double> xs) {
  const double mx = *std::max_element(xs.begin(), xs.end());
  if (!std::isfinite(mx)) return mx;
  double acc = 0.0;
  for (double x : xs) acc += std::exp(x - mx);
  return mx + std::log(acc);
}

}  // namespace detail

// -log( exp(s(a,p)/tau) / sum_k exp(s(a,n_k)/tau) ), negatives given as rows.
// The positive is part of the denominator only if the caller includes it.
inline double infonce(const Vector& anchor, const Vector& positive, const RowMatrix& negatives,
                      double tau, SimilarityKind kind = SimilarityKind::kDot) {
  if (negatives.rows() == 0) throw ValidationError("infonce: empty negative set");
  if (!(tau > 0.0)) throw ConfigError("infonce: tau must be > 0");
  std::vector<double> logits(negatives.rows());
  for (Index k = 0; k < negatives.rows(); ++k) {
    logits[k] = similarity(anchor, negatives.row(k).transpose(), kind) / tau;
  }
  return -similarity(anchor, positive, kind) / tau + detail::log_sum_exp(logits);
}

// Self-sample contrast: each batch user is its own positive against the other
// batch users, likewise for items. Mean over unique users plus mean over unique
// items. A batch with one user and one item yields 0 and sets *degenerate.
inline double cl_ss_loss(std::span<const Index> users, std::span<const Index> items,
                         const EmbeddingState& e, double tau,
                         SimilarityKind kind = SimilarityKind::kCosine, bool* degenerate = nullptr) {
  if (users.empty() || items.empty()) throw ValidationError("cl_ss_loss: empty batch");
  const std::set<Index> uu(users.begin(), users.end());
  const std::set<Index> ii(items.begin(), items.end());
  if (degenerate != nullptr) *degenerate = uu.size() == 1 && ii.size() == 1;
  auto side = [&](const std::set<Index>& ids, const RowMatrix& table) {
    RowMatrix cand(static_cast<Index>(ids.size()), table.cols());
    Index r = 0;
    for (Index id : ids) cand.row(r++) = table.row(id);
    double total = 0.0;
    for (Index k = 0; k < cand.rows(); ++k) {
      const Vector a = cand.row(k).transpose();
      total += infonce(a, a, cand, tau, kind);
    }
    return total / static_cast<double>(cand.rows());
  };
  return side(uu, e.users) + side(ii, e.items);
}

// User-item contrast: anchor e_u, positive e_i, denominator over every batch
// item (one column per pair). Mean over pairs.
inline double cl_ui_loss(PositivePairs pairs, const EmbeddingState& e, double tau,
                         SimilarityKind kind = SimilarityKind::kCosine) {
  if (pairs.empty()) throw ValidationError("cl_ui_loss: empty batch");
  RowMatrix cand(static_cast<Index>(pairs.size()), e.dim());
  for (std::size_t k = 0; k < pairs.size(); ++k) cand.row(k) = e.items.row(pairs[k].item);
  double total = 0.0;
  for (const auto& p : pairs) {
    total += infonce(e.users.row(p.user).transpose(), e.items.row(p.item).transpose(), cand, tau, kind);
  }
  return total / static_cast<double>(pairs.size());
}

// Neighborhood aggregation loss over a batch of positive pairs. For pair (u, i):
//   -s(u,i)/tau + log sum_{p : user(p) != u} exp(s(u, item(p))/tau)
// (plus exp(s(u, user(p))/tau) terms under kOtherItemsAndUsers). Mean over pairs.
inline double na_loss(PositivePairs pairs, const EmbeddingState& e, const LossConfig& cfg) {
  if (pairs.size() < 2) throw ValidationError("na_loss: needs at least two pairs");
  const auto kind = cfg.contrastive_similarity;
  double total = 0.0;
  std::vector<double> logits;
  for (const auto& p : pairs) {
    const Vector eu = e.users.row(p.user).transpose();
    logits.clear();
    for (const auto& q : pairs) {
      if (q.user == p.user) continue;
      logits.push_back(similarity(eu, e.items.row(q.item).transpose(), kind) / cfg.tau);
      if (cfg.na_negatives == NaNegatives::kOtherItemsAndUsers) {
        logits.push_back(similarity(eu, e.users.row(q.user).transpose(), kind) / cfg.tau);
      }
    }
    if (logits.empty()) throw ValidationError("na_loss: every pair shares user " + std::to_string(p.user));
    total += -similarity(eu, e.items.row(p.item).transpose(), kind) / cfg.tau + detail::log_sum_exp(logits);
  }
  return total / static_cast<double>(pairs.size());
}

// log(1 + exp(x)) without overflow.
inline double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double z = std::exp(x);
  return z / (1.0 + z);
}

// -log sigmoid(score(u,i) - score(u,j)) with dot-product scores.
inline double bpr_loss(Index u, Index i_pos, Index j_neg, const EmbeddingState& e) {
  const double delta = e.users.row(u).dot(e.items.row(i_pos)) - e.users.row(u).dot(e.items.row(j_neg));
  return softplus(-delta);
}

inline double bpr_loss(const Batch& b, const EmbeddingState& e) {
  if (b.size() == 0) throw ValidationError("bpr_loss: empty batch");
  double total = 0.0;
  for (Index k = 0; k < b.size(); ++k) total += bpr_loss(b.users[k], b.pos_items[k], b.neg_items[k], e);
  return total / static_cast<double>(b.size());
}

// Unique rows a batch touches, sorted.
struct TouchedRows {
  std::vector<Index> users;
  std::vector<Index> items;
};

inline TouchedRows touched_rows(const Batch& b) {
  std::set<Index> u(b.users.begin(), b.users.end());
  std::set<Index> i(b.pos_items.begin(), b.pos_items.end());
  i.insert(b.neg_items.begin(), b.neg_items.end());
  return {{u.begin(), u.end()}, {i.begin(), i.end()}};
}

// sum of squared norms of the base rows the batch touches (or of the full
// tables under RegScope::kFull).
inline double l2_penalty(const Batch& b, const EmbeddingState& base, RegScope scope) {
  if (scope == RegScope::kFull) return base.squared_norm();
  const auto t = touched_rows(b);
  double s = 0.0;
  for (Index u : t.users) s += base.users.row(u).squaredNorm();
  for (Index i : t.items) s += base.items.row(i).squaredNorm();
  return s;
}

struct LossBreakdown {
  double bpr = 0.0;
  double aux = 0.0;  // unweighted auxiliary loss
  double reg = 0.0;  // unweighted L2 penalty
  double total = 0.0;
};

inline double aux_loss(AuxLoss aux, const Batch& b, const EmbeddingState& e, const LossConfig& cfg) {
  const auto pairs = b.positive_pairs();
  switch (aux) {
    case AuxLoss::kNone: return 0.0;
    case AuxLoss::kClSs: return cl_ss_loss(b.users, b.pos_items, e, cfg.tau, cfg.contrastive_similarity);
    case AuxLoss::kClUi: return cl_ui_loss(pairs, e, cfg.tau, cfg.contrastive_similarity);
    case AuxLoss::kNa: return na_loss(pairs, e, cfg);
  }
  return 0.0;
}

// L = L_bpr + alpha * L_aux + beta * ||E0_touched||^2. `scored` are the
// embeddings the losses see (propagated when an encoder is used), `base` is E0.
inline LossBreakdown joint_loss(const Batch& b, const EmbeddingState& scored, const EmbeddingState& base,
                                const LossConfig& cfg, AuxLoss aux = AuxLoss::kNa) {
  LossBreakdown out;
  out.bpr = bpr_loss(b, scored);
  out.aux = (aux == AuxLoss::kNone || cfg.alpha == 0.0) ? 0.0 : aux_loss(aux, b, scored, cfg);
  out.reg = l2_penalty(b, base, cfg.reg_scope);
  out.total = out.bpr + cfg.alpha * out.aux + cfg.beta * out.reg;
  return out;
}

inline LossBreakdown joint_loss(const Batch& b, const EmbeddingState& e, const LossConfig& cfg,
                                AuxLoss aux = AuxLoss::kNa) {
  return joint_loss(b, e, e, cfg, aux);
}

}  // namespace ccf
