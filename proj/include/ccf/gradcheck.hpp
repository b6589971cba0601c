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
// Analytic gradients vs. central differences on random small instances.
#pragma once

#include <functional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "ccf/gradients.hpp"
#include "ccf/graph.hpp"

namespace ccf {

struct GradcheckRow {
  std::string loss;
  Index instances = 0;
  double max_rel_error = 0.0;
  bool passed = false;
};

struct GradcheckOptions {
  Index instances = 100;
  std::uint64_t seed = 11;
  double threshold = 1e-6;
  double step = 1e-5;
  // Negative control: scales every analytic gradient by (1 + corrupt).
  double corrupt = 0.0;
};

namespace detail {

inline constexpr double kMinRowNorm = 0.5;

struct GradInstance {
  EmbeddingState e;
  Batch batch;
  std::optional<InteractionDataset> graph;
};

inline GradInstance random_instance(Rng& rng, bool with_graph) {
  std::uniform_int_distribution<Index> dm(3, 20), dn(4, 30), dd(2, 8), db(3, 12);
  const Index m = dm(rng), n = dn(rng), d = dd(rng), size = db(rng);
  GradInstance inst;
  inst.e = EmbeddingState(m, n, d);
  // Rows near the origin are redrawn: cosine curvature grows like 1/|x|^3 there.
  std::normal_distribution<double> g(0.0, 0.7);
  auto fill = [&](RowMatrix& t) {
    for (Index r = 0; r < t.rows(); ++r) {
      do {
        for (Index c = 0; c < d; ++c) t(r, c) = g(rng);
      } while (t.row(r).norm() < kMinRowNorm);
    }
  };
  fill(inst.e.users);
  fill(inst.e.items);
  std::uniform_int_distribution<Index> pu(0, m - 1), pi(0, n - 1);
  for (Index k = 0; k < size; ++k) {
    const Index i = pi(rng);
    Index j = pi(rng);
    while (j == i) j = pi(rng);
    inst.batch.users.push_back(pu(rng));
    inst.batch.pos_items.push_back(i);
    inst.batch.neg_items.push_back(j);
  }
  if (std::set<Index>(inst.batch.users.begin(), inst.batch.users.end()).size() < 2) {
    inst.batch.users.back() = (inst.batch.users.front() + 1) % m;
  }
  if (with_graph) {
    std::vector<Interaction> edges;
    std::bernoulli_distribution coin(0.4);
    for (Index u = 0; u < m; ++u) {
      for (Index i = 0; i < n; ++i)
        if (coin(rng)) edges.push_back({u, i});
      edges.push_back({u, pi(rng)});
    }
    inst.graph = InteractionDataset::from_splits(m, n, edges, {});
  }
  return inst;
}

}  // namespace detail

// One row per loss: infonce (dot and cosine), bpr, cl_ss, cl_ui, na,
// na_with_users, l2, joint (lightccf, no encoder) and joint over 1-3
// propagation layers.
inline std::vector<GradcheckRow> run_gradcheck(const GradcheckOptions& opt = {}) {
  struct Case {
    std::string name;
    bool graph = false;
    // Returns (loss, analytic dense gradient) for an instance.
    std::function<std::pair<LossFn, EmbeddingState>(const detail::GradInstance&)> make;
  };
  LossConfig base_cfg;
  base_cfg.tau = 0.5;
  auto dense = [](const GradAccumulator& g, const EmbeddingState& e) { return g.to_dense(e.num_users(), e.num_items()); };
  std::vector<Case> cases;
  for (const auto kind : {SimilarityKind::kDot, SimilarityKind::kCosine}) {
    // Anchor = user 0, positive = item 0, negatives = every item.
    cases.push_back({std::string("infonce_") + to_string(kind), false, [=](const detail::GradInstance& x) {
                       const double tau = base_cfg.tau;
                       auto eval = [tau, kind](const EmbeddingState& e) {
                         return infonce(e.users.row(0).transpose(), e.items.row(0).transpose(), e.items, tau, kind);
                       };
                       const auto g = infonce_grad(x.e.users.row(0).transpose(), x.e.items.row(0).transpose(),
                                                   x.e.items, tau, kind);
                       EmbeddingState a(x.e.num_users(), x.e.num_items(), x.e.dim());
                       a.users.row(0) = g.anchor.transpose();
                       a.items = g.negatives;
                       a.items.row(0) += g.positive.transpose();
                       return std::pair{LossFn(eval), a};
                     }});
  }
  cases.push_back({"bpr", false, [=](const detail::GradInstance& x) {
                     const Batch b = x.batch;
                     return std::pair{LossFn([b](const EmbeddingState& e) { return bpr_loss(b, e); }),
                                      dense(bpr_grad(b, x.e).grad, x.e)};
                   }});
  cases.push_back({"cl_ss", false, [=](const detail::GradInstance& x) {
                     const Batch b = x.batch;
                     const double tau = base_cfg.tau;
                     return std::pair{LossFn([b, tau](const EmbeddingState& e) {
                                        return cl_ss_loss(b.users, b.pos_items, e, tau);
                                      }),
                                      dense(cl_ss_grad(b.users, b.pos_items, x.e, tau).grad, x.e)};
                   }});
  cases.push_back({"cl_ui", false, [=](const detail::GradInstance& x) {
                     const auto pairs = x.batch.positive_pairs();
                     const double tau = base_cfg.tau;
                     return std::pair{LossFn([pairs, tau](const EmbeddingState& e) { return cl_ui_loss(pairs, e, tau); }),
                                      dense(cl_ui_grad(pairs, x.e, tau).grad, x.e)};
                   }});
  for (const auto neg : {NaNegatives::kOtherItems, NaNegatives::kOtherItemsAndUsers}) {
    LossConfig cfg = base_cfg;
    cfg.na_negatives = neg;
    cases.push_back({neg == NaNegatives::kOtherItems ? "na" : "na_with_users", false,
                     [=](const detail::GradInstance& x) {
                       const auto pairs = x.batch.positive_pairs();
                       return std::pair{LossFn([pairs, cfg](const EmbeddingState& e) { return na_loss(pairs, e, cfg); }),
                                        dense(na_grad(pairs, x.e, cfg).grad, x.e)};
                     }});
  }
  cases.push_back({"l2", false, [=](const detail::GradInstance& x) {
                     const Batch b = x.batch;
                     LossConfig cfg = base_cfg;
                     cfg.beta = 1.0;
                     cfg.alpha = 0.0;
                     auto jg = joint_grad(b, x.e, x.e, cfg, AuxLoss::kNone);
                     return std::pair{
                         LossFn([b](const EmbeddingState& e) { return l2_penalty(b, e, RegScope::kBatch); }),
                         dense(jg.base, x.e)};
                   }});
  for (Index layers = 0; layers <= 3; ++layers) {
    cases.push_back({layers == 0 ? std::string("joint") : "joint_L" + std::to_string(layers), layers > 0,
                     [=](const detail::GradInstance& x) {
                       const Batch b = x.batch;
                       LossConfig cfg = base_cfg;
                       cfg.beta = 0.01;
                       const auto prop = PropagationConfig::uniform(layers);
                       if (layers == 0) {
                         return std::pair{LossFn([b, cfg](const EmbeddingState& e) {
                                            return joint_loss(b, e, cfg, AuxLoss::kNa).total;
                                          }),
                                          joint_grad_base(b, x.e, nullptr, prop, cfg, AuxLoss::kNa)};
                       }
                       const auto adj = std::make_shared<NormalizedAdjacency>(build_normalized_adjacency(*x.graph));
                       return std::pair{LossFn([b, cfg, adj, prop](const EmbeddingState& e) {
                                          return joint_loss(b, propagate(e, *adj, prop), e, cfg, AuxLoss::kNa).total;
                                        }),
                                        joint_grad_base(b, x.e, adj.get(), prop, cfg, AuxLoss::kNa)};
                     }});
  }

  std::vector<GradcheckRow> rows;
  for (std::size_t c = 0; c < cases.size(); ++c) {
    Rng rng = make_rng({opt.seed, static_cast<std::uint64_t>(c)});
    GradcheckRow row{cases[c].name, opt.instances, 0.0, true};
    for (Index k = 0; k < opt.instances; ++k) {
      const auto inst = detail::random_instance(rng, cases[c].graph);
      auto [loss, analytic] = cases[c].make(inst);
      if (opt.corrupt != 0.0) {
        analytic.users *= 1.0 + opt.corrupt;
        analytic.items *= 1.0 + opt.corrupt;
      }
      const EmbeddingState numeric = finite_difference_oracle(loss, inst.e, opt.step);
      row.max_rel_error = std::max(row.max_rel_error, relative_error(analytic, numeric));
    }
    row.passed = row.max_rel_error < opt.threshold;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace ccf
