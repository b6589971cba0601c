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

#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "ccf/common.hpp"
#include "ccf/dataset.hpp"
#include "ccf/evaluator.hpp"
#include "ccf/gradients.hpp"
#include "ccf/graph.hpp"
#include "ccf/losses.hpp"
#include "ccf/model.hpp"
#include "ccf/optimizer.hpp"
#include "ccf/sampler.hpp"

namespace ccf {

enum class Objective { kBprOnly, kClSs, kClUi, kLightCcf };

inline const char* to_string(Objective o) {
  switch (o) {
    case Objective::kBprOnly: return "bpr_only";
    case Objective::kClSs: return "cl_ss";
    case Objective::kClUi: return "cl_ui";
    case Objective::kLightCcf: return "lightccf";
  }
  return "?";
}

inline Objective parse_objective(std::string_view s) {
  if (s == "bpr_only") return Objective::kBprOnly;
  if (s == "cl_ss") return Objective::kClSs;
  if (s == "cl_ui") return Objective::kClUi;
  if (s == "lightccf") return Objective::kLightCcf;
  throw ConfigError("unknown objective '" + std::string(s) + "'");
}

inline AuxLoss aux_for(Objective o) {
  switch (o) {
    case Objective::kBprOnly: return AuxLoss::kNone;
    case Objective::kClSs: return AuxLoss::kClSs;
    case Objective::kClUi: return AuxLoss::kClUi;
    case Objective::kLightCcf: return AuxLoss::kNa;
  }
  return AuxLoss::kNone;
}

struct TrainConfig {
  Objective objective = Objective::kLightCcf;
  Index encoder_layers = 0;
  std::vector<double> layer_weights;  // empty: uniform 1/(L+1)
  double lr = 1e-3;
  Index epochs = 200;
  Index patience = 10;       // evaluations without improvement
  Index eval_interval = 5;   // epochs
  OptimizerKind optimizer = OptimizerKind::kAdam;
  LossConfig loss;
  Index dim = 64;
  Index batch_size = 2048;
  std::uint64_t seed = 2024;
  std::vector<Index> ks{10, 20};
  Index early_stop_k = 20;
  double validation_ratio = 0.0;  // > 0 carves a validation split for early stopping
  std::string diagnostic_dir;     // NaN snapshot destination, if set

  PropagationConfig propagation() const {
    if (layer_weights.empty()) return PropagationConfig::uniform(encoder_layers);
    PropagationConfig p{encoder_layers, layer_weights};
    p.validate();
    return p;
  }

  void validate() const {
    if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
    if (patience < 1) throw ConfigError("patience must be >= 1");
    if (eval_interval < 1) throw ConfigError("eval_interval must be >= 1");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (dim < 1) throw ConfigError("dim must be >= 1");
    if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
    if (encoder_layers < 0) throw ConfigError("encoder_layers must be >= 0");
    if (validation_ratio < 0.0 || validation_ratio >= 1.0) throw ConfigError("validation_ratio must be in [0, 1)");
    if (std::find(ks.begin(), ks.end(), early_stop_k) == ks.end()) {
      throw ConfigError("early_stop_k must be one of the evaluation cutoffs");
    }
    loss.validate();
    propagation().validate();
  }
};

struct EpochRecord {
  Index epoch = 0;
  LossBreakdown loss;  // batch means
  double seconds = 0.0;
  double cumulative_seconds = 0.0;
  std::optional<EvalReport> eval;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["epoch"] = epoch;
    j["L_bpr"] = loss.bpr;
    j["L_aux"] = loss.aux;
    j["L_reg"] = loss.reg;
    j["total"] = loss.total;
    j["seconds"] = seconds;
    j["cumulative_seconds"] = cumulative_seconds;
    if (eval) {
      for (const auto& [k, v] : eval->recall) j["recall@" + std::to_string(k)] = v;
      for (const auto& [k, v] : eval->ndcg) j["ndcg@" + std::to_string(k)] = v;
    }
    return j;
  }
};

struct RunRecord {
  std::vector<EpochRecord> epochs;
  Index best_epoch = -1;
  double best_metric = -1.0;
  double total_seconds = 0.0;
  bool stopped_early = false;
  Index degenerate_batches = 0;

  // Same run modulo wall-clock fields.
  bool same_outcome(const RunRecord& o) const {
    if (epochs.size() != o.epochs.size() || best_epoch != o.best_epoch || best_metric != o.best_metric ||
        stopped_early != o.stopped_early || degenerate_batches != o.degenerate_batches) {
      return false;
    }
    for (std::size_t k = 0; k < epochs.size(); ++k) {
      const auto& a = epochs[k];
      const auto& b = o.epochs[k];
      if (a.epoch != b.epoch || a.loss.bpr != b.loss.bpr || a.loss.aux != b.loss.aux || a.loss.reg != b.loss.reg ||
          a.loss.total != b.loss.total || a.eval.has_value() != b.eval.has_value()) {
        return false;
      }
      if (a.eval && (a.eval->recall != b.eval->recall || a.eval->ndcg != b.eval->ndcg)) return false;
    }
    return true;
  }

  nlohmann::ordered_json summary_json() const {
    return {{"best_epoch", best_epoch},   {"best_metric", best_metric},
            {"epochs_run", epochs.size()}, {"total_seconds", total_seconds},
            {"stopped_early", stopped_early}, {"degenerate_batches", degenerate_batches}};
  }
};

// Owns one optimization run: embeddings, optimizer state and the adjacency.
class Trainer {
 public:
  Trainer(const InteractionDataset& ds, TrainConfig cfg) : ds_(&ds), cfg_(std::move(cfg)) {
    cfg_.validate();
    if (ds.train().empty()) throw ValidationError("train: dataset has no train edges");
    prop_ = cfg_.propagation();
    if (prop_.num_layers > 0) adj_ = build_normalized_adjacency(ds);
    e0_ = init_xavier(ds.num_users(), ds.num_items(), cfg_.dim, cfg_.seed);
    opt_.emplace(cfg_.optimizer, cfg_.lr);
  }

  const EmbeddingState& base() const { return e0_; }
  const TrainConfig& config() const { return cfg_; }
  Index degenerate_batches() const { return degenerate_batches_; }

  // Embeddings used for ranking: propagate(E0) with an encoder, E0 otherwise.
  EmbeddingState ranking_embeddings() const { return ranking_embeddings(e0_); }

  EmbeddingState ranking_embeddings(const EmbeddingState& e0) const {
    return prop_.num_layers > 0 ? propagate(e0, *adj_, prop_) : e0;
  }

  // One pass over the train edges. Returns batch-mean losses.
  LossBreakdown run_epoch(Index epoch) {
    const EpochBatches stream(*ds_, cfg_.batch_size, cfg_.seed, static_cast<std::uint64_t>(epoch));
    const AuxLoss aux = aux_for(cfg_.objective);
    LossBreakdown mean;
    for (Index b = 0; b < stream.num_batches(); ++b) {
      const Batch batch = stream.batch(b);
      if (aux == AuxLoss::kClSs || aux == AuxLoss::kClUi) {
        bool degenerate = batch.size() < 2;
        if (aux == AuxLoss::kClSs) {
          degenerate = std::adjacent_find(batch.users.begin(), batch.users.end(), std::not_equal_to<>()) ==
                           batch.users.end() &&
                       std::adjacent_find(batch.pos_items.begin(), batch.pos_items.end(),
                                          std::not_equal_to<>()) == batch.pos_items.end();
        }
        if (degenerate) ++degenerate_batches_;
      }
      LossBreakdown l;
      const EmbeddingState g =
          joint_grad_base(batch, e0_, adj_ ? &*adj_ : nullptr, prop_, cfg_.loss, aux, &l);
      if (!std::isfinite(l.total) || !g.finite()) fail_numeric(epoch, b, l);
      opt_->step(e0_, g);
      mean.bpr += l.bpr;
      mean.aux += l.aux;
      mean.reg += l.reg;
      mean.total += l.total;
    }
    const auto n = static_cast<double>(stream.num_batches());
    mean.bpr /= n;
    mean.aux /= n;
    mean.reg /= n;
    mean.total /= n;
    if (!e0_.finite()) fail_numeric(epoch, -1, mean);
    last_finite_ = e0_;
    return mean;
  }

 private:
  [[noreturn]] void fail_numeric(Index epoch, Index batch, const LossBreakdown& l) const {
    std::ostringstream msg;
    msg << "non-finite value at epoch " << epoch << (batch >= 0 ? ", batch " + std::to_string(batch) : "")
        << ": L_bpr=" << l.bpr << " L_aux=" << l.aux << " L_reg=" << l.reg << " total=" << l.total;
    if (!cfg_.diagnostic_dir.empty()) {
      std::filesystem::create_directories(cfg_.diagnostic_dir);
      const auto dir = std::filesystem::path(cfg_.diagnostic_dir);
      if (last_finite_) save_checkpoint(dir / "nan_snapshot.bin", *last_finite_, cfg_.seed, cfg_.loss.contrastive_similarity);
      std::ofstream(dir / "nan_diagnostic.json")
          << nlohmann::ordered_json{{"epoch", epoch}, {"batch", batch}, {"L_bpr", l.bpr},
                                    {"L_aux", l.aux}, {"L_reg", l.reg}, {"total", l.total}}
                 .dump(2)
          << '\n';
      msg << " (snapshot in " << cfg_.diagnostic_dir << ")";
    }
    throw NumericError(msg.str());
  }

  const InteractionDataset* ds_;
  TrainConfig cfg_;
  PropagationConfig prop_;
  std::optional<NormalizedAdjacency> adj_;
  EmbeddingState e0_;
  std::optional<EmbeddingState> last_finite_;
  std::optional<Optimizer> opt_;
  Index degenerate_batches_ = 0;
};

struct TrainResult {
  EmbeddingState base;     // best E0
  EmbeddingState ranking;  // embeddings the best E0 ranks with
  RunRecord record;
  EvalReport report;       // best checkpoint on the held-out split
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Epoch loop with periodic evaluation and patience-based early stopping on
// NDCG@early_stop_k. Returns the best checkpoint.
inline TrainResult train(const InteractionDataset& ds, const TrainConfig& cfg, const EpochCallback& on_epoch = {},
                         const SparsityGroups* groups = nullptr) {
  cfg.validate();
  std::optional<InteractionDataset> fit_storage;
  if (cfg.validation_ratio > 0.0) fit_storage = carve_validation(ds, cfg.validation_ratio, cfg.seed);
  const InteractionDataset& fit = fit_storage ? *fit_storage : ds;

  Trainer trainer(fit, cfg);
  TrainResult result;
  RunRecord& rec = result.record;
  EvalOptions eval_opt;
  eval_opt.ks = cfg.ks;

  EmbeddingState best = trainer.base();
  Index since_best = 0;
  double cumulative = 0.0;
  for (Index epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochRecord er;
    er.epoch = epoch;
    er.loss = trainer.run_epoch(epoch);
    er.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    cumulative += er.seconds;
    er.cumulative_seconds = cumulative;
    if (epoch % cfg.eval_interval == 0 || epoch == cfg.epochs) {
      er.eval = evaluate(trainer.ranking_embeddings(), fit, eval_opt);
      er.eval->wall_time_per_epoch = cumulative / static_cast<double>(epoch);
      const double metric = er.eval->ndcg.at(cfg.early_stop_k);
      if (metric > rec.best_metric) {
        rec.best_metric = metric;
        rec.best_epoch = epoch;
        best = trainer.base();
        since_best = 0;
      } else {
        ++since_best;
      }
    }
    if (on_epoch) on_epoch(er);
    rec.epochs.push_back(std::move(er));
    if (since_best >= cfg.patience) {
      rec.stopped_early = epoch < cfg.epochs;
      break;
    }
  }
  rec.total_seconds = cumulative;
  rec.degenerate_batches = trainer.degenerate_batches();

  result.base = std::move(best);
  result.ranking = trainer.ranking_embeddings(result.base);
  eval_opt.groups = groups;
  result.report = evaluate(result.ranking, ds, eval_opt);
  result.report.wall_time_per_epoch = rec.epochs.empty() ? 0.0 : cumulative / static_cast<double>(rec.epochs.size());
  return result;
}

struct GridCell {
  double tau = 0.0;
  double alpha = 0.0;
  Index best_epoch = -1;
  EvalReport report;
};

// Trains one run per (tau, alpha) cell with the shared seed. Cells run on up to
// `workers` threads; output order is tau-major regardless of scheduling.
inline std::vector<GridCell> run_grid(const InteractionDataset& ds, const TrainConfig& base,
                                      const std::vector<double>& taus, const std::vector<double>& alphas,
                                      unsigned workers = 1) {
  if (taus.empty() || alphas.empty()) throw ConfigError("run_grid: empty grid");
  std::vector<GridCell> cells;
  for (double t : taus)
    for (double a : alphas) cells.push_back({t, a, -1, {}});
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto work = [&] {
    for (std::size_t k = next++; k < cells.size(); k = next++) {
      try {
        TrainConfig cfg = base;
        cfg.loss.tau = cells[k].tau;
        cfg.loss.alpha = cells[k].alpha;
        auto r = train(ds, cfg);
        cells[k].best_epoch = r.record.best_epoch;
        cells[k].report = std::move(r.report);
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  workers = std::max(1u, workers);
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return cells;
}

}  // namespace ccf
