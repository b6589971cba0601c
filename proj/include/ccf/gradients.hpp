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
// Hand-derived gradients for every objective in losses.hpp, evaluated in
// batched matrix form, plus the plain gradient-descent updates of the InfoNCE
// family and a central-difference oracle.
//
// Cosine similarities are handled by normalizing rows, differentiating the dot
// form w.r.t. the normalized rows, then applying the normalization Jacobian
//   d x / |x| : g  ->  (g - (g . x_hat) x_hat) / |x|.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <utility>
#include <vector>

#include "ccf/common.hpp"
#include "ccf/graph.hpp"
#include "ccf/losses.hpp"
#include "ccf/model.hpp"
#include "ccf/sampler.hpp"

namespace ccf {

enum class Table { kUser = 0, kItem = 1 };

// Sparse (table, row) -> d-vector of partial derivatives. Iteration order is
// (table, row) ascending.
class GradAccumulator {
 public:
  using Key = std::pair<Table, Index>;

  explicit GradAccumulator(Index dim = 0) : dim_(dim) {}

  template <typename Derived>
  void add(Table t, Index row, const Eigen::MatrixBase<Derived>& g, double scale = 1.0) {
    auto [it, inserted] = rows_.try_emplace({t, row});
    if (inserted) it->second = Vector::Zero(dim_);
    if (g.size() != dim_) throw ConfigError("GradAccumulator: dimension mismatch");
    for (Index c = 0; c < dim_; ++c) it->second[c] += scale * g(c);
  }

  const Vector* find(Table t, Index row) const {
    const auto it = rows_.find({t, row});
    return it == rows_.end() ? nullptr : &it->second;
  }

  Index dim() const { return dim_; }
  Index size() const { return static_cast<Index>(rows_.size()); }
  auto begin() const { return rows_.begin(); }
  auto end() const { return rows_.end(); }

  void merge(const GradAccumulator& other, double scale = 1.0) {
    for (const auto& [key, g] : other.rows_) add(key.first, key.second, g, scale);
  }

  void add_into(EmbeddingState& dense, double scale = 1.0) const {
    for (const auto& [key, g] : rows_) {
      auto row = key.first == Table::kUser ? dense.users.row(key.second) : dense.items.row(key.second);
      row += scale * g.transpose();
    }
  }

  EmbeddingState to_dense(Index num_users, Index num_items) const {
    EmbeddingState d(num_users, num_items, dim_);
    add_into(d);
    return d;
  }

  bool finite() const {
    return std::all_of(rows_.begin(), rows_.end(), [](const auto& kv) { return kv.second.allFinite(); });
  }

 private:
  Index dim_;
  std::map<Key, Vector> rows_;
};

namespace detail {

// Rows of `x`, normalized when kind is cosine. Keeps the norms for the backward pass.
struct NormalizedRows {
  RowMatrix rows;
  Vector norms;
  bool cosine = false;

  NormalizedRows(RowMatrix x, SimilarityKind kind) : rows(std::move(x)), cosine(kind == SimilarityKind::kCosine) {
    norms = rows.rowwise().norm();
    if (cosine) {
      for (Index r = 0; r < rows.rows(); ++r) {
        if (norms[r] == 0.0) throw ValidationError("cosine similarity of a zero vector");
        rows.row(r) /= norms[r];
      }
    }
  }

  // Gradient w.r.t. the raw rows given the gradient w.r.t. the (normalized) rows.
  RowMatrix backward(RowMatrix g) const {
    if (!cosine) return g;
    for (Index r = 0; r < g.rows(); ++r) {
      const double proj = g.row(r).dot(rows.row(r));
      g.row(r) = (g.row(r) - proj * rows.row(r)) / norms[r];
    }
    return g;
  }
};

inline RowMatrix gather(const RowMatrix& table, std::span<const Index> ids) {
  RowMatrix out(static_cast<Index>(ids.size()), table.cols());
  for (std::size_t k = 0; k < ids.size(); ++k) out.row(static_cast<Index>(k)) = table.row(ids[k]);
  return out;
}

inline void scatter(GradAccumulator& acc, Table t, std::span<const Index> ids, const RowMatrix& g,
                    double scale = 1.0) {
  for (std::size_t k = 0; k < ids.size(); ++k) acc.add(t, ids[k], g.row(static_cast<Index>(k)).transpose(), scale);
}

inline constexpr double kMasked = -std::numeric_limits<double>::infinity();

// Row-wise log-sum-exp over the finite entries, and the matching softmax.
// Throws if a row has no finite entry.
inline Vector masked_softmax_rows(RowMatrix& logits_to_probs) {
  Vector lse(logits_to_probs.rows());
  for (Index r = 0; r < logits_to_probs.rows(); ++r) {
    auto row = logits_to_probs.row(r);
    const double mx = row.maxCoeff();
    if (mx == kMasked) throw ValidationError("contrastive row without any negative");
    double acc = 0.0;
    for (Index c = 0; c < row.size(); ++c) {
      const double z = row[c] == kMasked ? 0.0 : std::exp(row[c] - mx);
      row[c] = z;
      acc += z;
    }
    row /= acc;
    lse[r] = mx + std::log(acc);
  }
  return lse;
}

}  // namespace detail

struct InfoNceGrad {
  double value = 0.0;
  Vector anchor;
  Vector positive;
  RowMatrix negatives;
};

// Gradient of infonce() w.r.t. the anchor, the positive and every negative row.
// With dot similarity the anchor part is -(1/tau)(e_pos - sum_k p_k e_k).
inline InfoNceGrad infonce_grad(const Vector& anchor, const Vector& positive, const RowMatrix& negatives,
                                double tau, SimilarityKind kind = SimilarityKind::kDot) {
  if (negatives.rows() == 0) throw ValidationError("infonce_grad: empty negative set");
  const detail::NormalizedRows a(anchor.transpose(), kind);
  const detail::NormalizedRows p(positive.transpose(), kind);
  const detail::NormalizedRows n(negatives, kind);
  RowMatrix probs = (n.rows * a.rows.row(0).transpose()).transpose() / tau;  // 1 x K logits
  const double lse = detail::masked_softmax_rows(probs)[0];

  InfoNceGrad g;
  g.value = -a.rows.row(0).dot(p.rows.row(0)) / tau + lse;
  RowMatrix ga = (probs * n.rows - p.rows) / tau;
  RowMatrix gp = -a.rows / tau;
  RowMatrix gn = probs.transpose() * a.rows / tau;
  g.anchor = a.backward(ga).row(0).transpose();
  g.positive = p.backward(gp).row(0).transpose();
  g.negatives = n.backward(gn);
  return g;
}

// Per-anchor softmax probabilities over candidates under dot similarity.
inline Vector infonce_probabilities(const Vector& anchor, const RowMatrix& candidates, double tau) {
  RowMatrix probs = (candidates * anchor).transpose() / tau;
  detail::masked_softmax_rows(probs);
  return probs.row(0).transpose();
}

struct BatchGrad {
  double value = 0.0;
  GradAccumulator grad;
};

// Mean BPR loss and its gradient: dL/de_u = -(1 - sigma(D))(e_i - e_j) / B, etc.
inline BatchGrad bpr_grad(const Batch& b, const EmbeddingState& e) {
  BatchGrad out{0.0, GradAccumulator(e.dim())};
  const double inv_b = 1.0 / static_cast<double>(b.size());
  for (Index k = 0; k < b.size(); ++k) {
    const auto eu = e.users.row(b.users[k]);
    const auto ei = e.items.row(b.pos_items[k]);
    const auto ej = e.items.row(b.neg_items[k]);
    const double delta = eu.dot(ei) - eu.dot(ej);
    out.value += softplus(-delta) * inv_b;
    const double coef = -sigmoid(-delta) * inv_b;
    out.grad.add(Table::kUser, b.users[k], (ei - ej).transpose(), coef);
    out.grad.add(Table::kItem, b.pos_items[k], eu.transpose(), coef);
    out.grad.add(Table::kItem, b.neg_items[k], eu.transpose(), -coef);
  }
  return out;
}

// CL-SS on unique batch users and unique batch items.
inline BatchGrad cl_ss_grad(std::span<const Index> users, std::span<const Index> items, const EmbeddingState& e,
                            double tau, SimilarityKind kind = SimilarityKind::kCosine) {
  BatchGrad out{0.0, GradAccumulator(e.dim())};
  auto side = [&](std::span<const Index> raw_ids, const RowMatrix& table, Table t) {
    std::vector<Index> ids(raw_ids.begin(), raw_ids.end());
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    const detail::NormalizedRows x(detail::gather(table, ids), kind);
    const auto n = static_cast<double>(ids.size());
    RowMatrix probs = x.rows * x.rows.transpose() / tau;
    const Vector diag = probs.diagonal();
    const Vector lse = detail::masked_softmax_rows(probs);
    out.value += (lse - diag).sum() / n;
    RowMatrix g = probs;
    g.diagonal().array() -= 1.0;
    g /= n;
    const RowMatrix gx = (g + g.transpose()) * x.rows / tau;
    detail::scatter(out.grad, t, ids, x.backward(gx));
  };
  if (users.empty() || items.empty()) throw ValidationError("cl_ss_grad: empty batch");
  side(users, e.users, Table::kUser);
  side(items, e.items, Table::kItem);
  return out;
}

// CL-UI: B x B in-batch softmax with the diagonal as positives.
inline BatchGrad cl_ui_grad(PositivePairs pairs, const EmbeddingState& e, double tau,
                            SimilarityKind kind = SimilarityKind::kCosine) {
  if (pairs.empty()) throw ValidationError("cl_ui_grad: empty batch");
  std::vector<Index> us(pairs.size()), is(pairs.size());
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    us[k] = pairs[k].user;
    is[k] = pairs[k].item;
  }
  const detail::NormalizedRows a(detail::gather(e.users, us), kind);
  const detail::NormalizedRows c(detail::gather(e.items, is), kind);
  const auto n = static_cast<double>(pairs.size());
  RowMatrix probs = a.rows * c.rows.transpose() / tau;
  const Vector diag = probs.diagonal();
  const Vector lse = detail::masked_softmax_rows(probs);
  BatchGrad out{(lse - diag).sum() / n, GradAccumulator(e.dim())};
  RowMatrix g = probs;
  g.diagonal().array() -= 1.0;
  g /= n;
  detail::scatter(out.grad, Table::kUser, us, a.backward(g * c.rows / tau));
  detail::scatter(out.grad, Table::kItem, is, c.backward(g.transpose() * a.rows / tau));
  return out;
}

// Exact gradient of na_loss(). Entries (k, j) with users[j] == users[k] are
// removed from row k's denominator.
inline BatchGrad na_grad(PositivePairs pairs, const EmbeddingState& e, const LossConfig& cfg) {
  if (pairs.size() < 2) throw ValidationError("na_grad: needs at least two pairs");
  const auto b = static_cast<Index>(pairs.size());
  std::vector<Index> us(b), is(b);
  for (Index k = 0; k < b; ++k) {
    us[k] = pairs[k].user;
    is[k] = pairs[k].item;
  }
  const double tau = cfg.tau;
  const bool with_users = cfg.na_negatives == NaNegatives::kOtherItemsAndUsers;
  const detail::NormalizedRows a(detail::gather(e.users, us), cfg.contrastive_similarity);
  const detail::NormalizedRows c(detail::gather(e.items, is), cfg.contrastive_similarity);

  const Index width = with_users ? 2 * b : b;
  RowMatrix probs(b, width);
  probs.leftCols(b) = a.rows * c.rows.transpose() / tau;
  if (with_users) probs.rightCols(b) = a.rows * a.rows.transpose() / tau;
  const Vector pos = probs.leftCols(b).diagonal();
  for (Index k = 0; k < b; ++k) {
    for (Index j = 0; j < b; ++j) {
      if (us[j] == us[k]) {
        probs(k, j) = detail::kMasked;
        if (with_users) probs(k, b + j) = detail::kMasked;
      }
    }
  }
  const Vector lse = detail::masked_softmax_rows(probs);

  BatchGrad out{(lse - pos).sum() / static_cast<double>(b), GradAccumulator(e.dim())};
  const double inv_b = 1.0 / static_cast<double>(b);
  RowMatrix g_items = probs.leftCols(b) * inv_b;
  g_items.diagonal().array() -= inv_b;
  RowMatrix ga = g_items * c.rows / tau;
  RowMatrix gc = g_items.transpose() * a.rows / tau;
  if (with_users) {
    const RowMatrix g_users = probs.rightCols(b) * inv_b;
    ga.noalias() += (g_users + g_users.transpose()) * a.rows / tau;
  }
  detail::scatter(out.grad, Table::kUser, us, a.backward(std::move(ga)));
  detail::scatter(out.grad, Table::kItem, is, c.backward(std::move(gc)));
  return out;
}

inline BatchGrad aux_grad(AuxLoss aux, const Batch& b, const EmbeddingState& e, const LossConfig& cfg) {
  const auto pairs = b.positive_pairs();
  switch (aux) {
    case AuxLoss::kNone: return {0.0, GradAccumulator(e.dim())};
    case AuxLoss::kClSs: return cl_ss_grad(b.users, b.pos_items, e, cfg.tau, cfg.contrastive_similarity);
    case AuxLoss::kClUi: return cl_ui_grad(pairs, e, cfg.tau, cfg.contrastive_similarity);
    case AuxLoss::kNa: return na_grad(pairs, e, cfg);
  }
  return {0.0, GradAccumulator(e.dim())};
}

struct JointGrad {
  LossBreakdown loss;
  GradAccumulator scored;  // w.r.t. the embeddings the losses saw
  GradAccumulator base;    // w.r.t. E0 (L2 term); empty under RegScope::kFull
  bool full_reg = false;   // base gradient is 2*beta*E0 over the full tables
};

// Gradient of joint_loss(): bpr + alpha * aux w.r.t. `scored`, 2*beta*E0 on the
// touched base rows.
inline JointGrad joint_grad(const Batch& b, const EmbeddingState& scored, const EmbeddingState& base,
                            const LossConfig& cfg, AuxLoss aux) {
  JointGrad out{{}, GradAccumulator(scored.dim()), GradAccumulator(base.dim()), false};
  auto bpr = bpr_grad(b, scored);
  out.loss.bpr = bpr.value;
  out.scored = std::move(bpr.grad);
  if (aux != AuxLoss::kNone && cfg.alpha != 0.0) {
    auto ax = aux_grad(aux, b, scored, cfg);
    out.loss.aux = ax.value;
    out.scored.merge(ax.grad, cfg.alpha);
  }
  out.loss.reg = l2_penalty(b, base, cfg.reg_scope);
  if (cfg.reg_scope == RegScope::kFull) {
    out.full_reg = true;
  } else {
    const auto t = touched_rows(b);
    for (Index u : t.users) out.base.add(Table::kUser, u, base.users.row(u).transpose(), 2.0 * cfg.beta);
    for (Index i : t.items) out.base.add(Table::kItem, i, base.items.row(i).transpose(), 2.0 * cfg.beta);
  }
  out.loss.total = out.loss.bpr + cfg.alpha * out.loss.aux + cfg.beta * out.loss.reg;
  return out;
}

// Applies sum_j alpha_j A^j to upstream gradients; valid as the backward pass of
// propagate() because A is symmetric.
inline EmbeddingState propagation_backprop(const EmbeddingState& upstream, const NormalizedAdjacency& adj,
                                           const PropagationConfig& cfg) {
  return propagate(upstream, adj, cfg);
}

// Dense gradient of joint_loss() w.r.t. E0 when the losses see propagate(E0).
inline EmbeddingState joint_grad_base(const Batch& b, const EmbeddingState& e0, const NormalizedAdjacency* adj,
                                      const PropagationConfig& prop, const LossConfig& cfg, AuxLoss aux,
                                      LossBreakdown* loss_out = nullptr) {
  const bool encode = adj != nullptr && prop.num_layers > 0;
  const EmbeddingState scored = encode ? propagate(e0, *adj, prop) : EmbeddingState{};
  const EmbeddingState& seen = encode ? scored : e0;
  auto jg = joint_grad(b, seen, e0, cfg, aux);
  EmbeddingState g = jg.scored.to_dense(e0.num_users(), e0.num_items());
  if (encode) g = propagation_backprop(g, *adj, prop);
  jg.base.add_into(g);
  if (jg.full_reg) g.axpy(2.0 * cfg.beta, e0);
  if (loss_out != nullptr) *loss_out = jg.loss;
  return g;
}

// ---------------------------------------------------------------------------
// Plain gradient descent on the InfoNCE family (dot similarity, in-batch
// candidates, synchronous: every update uses the pre-step embeddings).

// Pair (anchor row, positive row); candidates for every anchor are the positive
// rows of all pairs in the batch.
struct AnchorPositive {
  Index anchor = 0;
  Index positive = 0;
};

// e_a <- e_a + (eta/tau)(e_pos - sum_k p_ak e_k), one pair at a time.
inline RowMatrix sgd_step_infonce(const RowMatrix& anchors, const RowMatrix& candidates,
                                  std::span<const AnchorPositive> pairs, double tau, double eta) {
  if (!(eta >= 0.0)) throw ConfigError("learning rate must be >= 0");
  RowMatrix next = anchors;
  if (pairs.empty()) return next;
  RowMatrix cand(static_cast<Index>(pairs.size()), candidates.cols());
  for (std::size_t k = 0; k < pairs.size(); ++k) cand.row(static_cast<Index>(k)) = candidates.row(pairs[k].positive);
  for (const auto& p : pairs) {
    const Vector ea = anchors.row(p.anchor).transpose();
    const Vector probs = infonce_probabilities(ea, cand, tau);
    const Vector pull = candidates.row(p.positive).transpose() - cand.transpose() * probs;
    next.row(p.anchor) += (eta / tau) * pull.transpose();
  }
  return next;
}

inline std::vector<AnchorPositive> as_anchor_positive(PositivePairs pairs) {
  std::vector<AnchorPositive> out(pairs.size());
  for (std::size_t k = 0; k < pairs.size(); ++k) out[k] = {pairs[k].user, pairs[k].item};
  return out;
}

// User-anchored specialization: users move toward their interacted item and
// away from the in-batch item distribution. Items are unchanged.
inline EmbeddingState user_item_gd_step(const EmbeddingState& e, PositivePairs pairs, double tau, double eta) {
  const auto ap = as_anchor_positive(pairs);
  return EmbeddingState(sgd_step_infonce(e.users, e.items, ap, tau, eta), e.items);
}

struct GradientMatrices {
  RowMatrix probs;     // B x B softmax of each pair's user over the batch items
  RowMatrix positive;  // B x d, row k = e_{item_k}
  RowMatrix user_rows; // B x d, row k = e_{user_k} before the step
  // B x d elementwise gain with next_user_rows = gain .* user_rows (before
  // scatter). Entries where |user_rows| < kQuotientGuard are set to 1 and counted.
  RowMatrix gain;
  Index masked_entries = 0;
  static constexpr double kQuotientGuard = 1e-12;
};

struct MatrixStepResult {
  EmbeddingState next;
  GradientMatrices mats;
};

// Whole-batch form: E_B <- E_B + (eta/tau)(Y - P Y), rows scattered back onto
// the users (summed when a user appears more than once).
inline MatrixStepResult matrix_form_step(const EmbeddingState& e, PositivePairs pairs, double tau, double eta) {
  if (!(eta >= 0.0)) throw ConfigError("learning rate must be >= 0");
  if (pairs.empty()) throw ValidationError("matrix_form_step: empty batch");
  std::vector<Index> us(pairs.size()), is(pairs.size());
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    us[k] = pairs[k].user;
    is[k] = pairs[k].item;
  }
  MatrixStepResult r;
  auto& m = r.mats;
  m.user_rows = detail::gather(e.users, us);
  m.positive = detail::gather(e.items, is);
  m.probs = m.user_rows * m.positive.transpose() / tau;
  detail::masked_softmax_rows(m.probs);
  const RowMatrix delta = (eta / tau) * (m.positive - m.probs * m.positive);

  m.gain = RowMatrix::Ones(delta.rows(), delta.cols());
  for (Index k = 0; k < delta.rows(); ++k) {
    for (Index c = 0; c < delta.cols(); ++c) {
      const double x = m.user_rows(k, c);
      if (std::abs(x) < GradientMatrices::kQuotientGuard) {
        ++m.masked_entries;
      } else {
        m.gain(k, c) = 1.0 + delta(k, c) / x;
      }
    }
  }

  r.next = e;
  for (Index k = 0; k < delta.rows(); ++k) r.next.users.row(us[k]) += delta.row(k);
  return r;
}

// Mean cosine between each user's row after `steps` full-batch user-item GD
// steps and after `steps` rounds of propagation, one value per step. A
// diagnostic of how closely the two aggregation processes track each other.
inline std::vector<double> gd_propagation_alignment(const EmbeddingState& e0, const InteractionDataset& ds,
                                                    const NormalizedAdjacency& adj, Index steps, double tau,
                                                    double eta) {
  const auto& pairs = ds.train();
  EmbeddingState gd = e0;
  RowMatrix layer = stack(e0);
  std::vector<double> out;
  for (Index s = 0; s < steps; ++s) {
    gd = user_item_gd_step(gd, pairs, tau, eta);
    layer = adj.multiply(layer);
    double total = 0.0;
    Index counted = 0;
    for (Index u = 0; u < e0.num_users(); ++u) {
      const double na = gd.users.row(u).norm();
      const double nb = layer.row(u).norm();
      if (na == 0.0 || nb == 0.0) continue;
      total += gd.users.row(u).dot(layer.row(u)) / (na * nb);
      ++counted;
    }
    out.push_back(counted > 0 ? total / static_cast<double>(counted) : 0.0);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Central-difference oracle.

using LossFn = std::function<double(const EmbeddingState&)>;

// Numeric gradient of `loss` at `e`. When `rows` is given only those rows are
// perturbed; the others stay zero.
inline EmbeddingState finite_difference_oracle(const LossFn& loss, const EmbeddingState& e, double h,
                                               const TouchedRows* rows = nullptr) {
  if (!(h > 0.0)) throw ConfigError("finite difference step must be > 0");
  EmbeddingState g(e.num_users(), e.num_items(), e.dim());
  EmbeddingState x = e;
  auto probe = [&](RowMatrix& table, RowMatrix& out, Index r) {
    for (Index c = 0; c < e.dim(); ++c) {
      const double saved = table(r, c);
      table(r, c) = saved + h;
      const double up = loss(x);
      table(r, c) = saved - h;
      const double down = loss(x);
      table(r, c) = saved;
      out(r, c) = (up - down) / (2.0 * h);
    }
  };
  if (rows != nullptr) {
    for (Index u : rows->users) probe(x.users, g.users, u);
    for (Index i : rows->items) probe(x.items, g.items, i);
  } else {
    for (Index u = 0; u < e.num_users(); ++u) probe(x.users, g.users, u);
    for (Index i = 0; i < e.num_items(); ++i) probe(x.items, g.items, i);
  }
  return g;
}

// max |a - b| / max(max|a|, max|b|, floor).
inline double relative_error(const EmbeddingState& a, const EmbeddingState& b, double floor = 1e-8) {
  const double diff = std::max((a.users - b.users).cwiseAbs().maxCoeff(), (a.items - b.items).cwiseAbs().maxCoeff());
  const double scale = std::max({a.users.cwiseAbs().maxCoeff(), a.items.cwiseAbs().maxCoeff(),
                                 b.users.cwiseAbs().maxCoeff(), b.items.cwiseAbs().maxCoeff(), floor});
  return diff / scale;
}

}  // namespace ccf
