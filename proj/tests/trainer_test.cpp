#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

#include "ccf/synthetic.hpp"
#include "ccf/trainer.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using namespace ccf;

namespace {

InteractionDataset train_dataset() {
  return split_per_user(
      generate_synthetic({.users = 80, .items = 100, .clusters = 4, .mean_degree = 10, .seed = 6}), 0.8, 3);
}

TrainConfig small_config(Objective obj) {
  TrainConfig c;
  c.objective = obj;
  c.dim = 16;
  c.batch_size = 64;
  c.epochs = 10;
  c.eval_interval = 2;
  c.patience = 10;
  c.lr = 0.01;
  c.seed = 9;
  c.loss.tau = 0.25;
  c.loss.alpha = 0.5;
  return c;
}

}  // namespace

TEST(Trainer, BprOnlyMatchesStandaloneLoop) {
  const auto ds = train_dataset();
  auto cfg = small_config(Objective::kLightCcf);
  cfg.loss.alpha = 0.0;
  cfg.loss.beta = 0.0;
  cfg.optimizer = OptimizerKind::kSgd;
  cfg.lr = 0.05;
  Trainer trainer(ds, cfg);

  EmbeddingState e = init_xavier(ds.num_users(), ds.num_items(), cfg.dim, cfg.seed);
  for (Index epoch = 1; epoch <= 4; ++epoch) {
    trainer.run_epoch(epoch);
    const EpochBatches stream(ds, cfg.batch_size, cfg.seed, static_cast<std::uint64_t>(epoch));
    for (Index b = 0; b < stream.num_batches(); ++b) {
      const auto g = bpr_grad(stream.batch(b), e).grad.to_dense(ds.num_users(), ds.num_items());
      e.axpy(-cfg.lr, g);
    }
    const double diff = std::max((trainer.base().users - e.users).cwiseAbs().maxCoeff(),
                                 (trainer.base().items - e.items).cwiseAbs().maxCoeff());
    EXPECT_LT(diff, 1e-10) << "epoch " << epoch;
  }
}

TEST(Trainer, EpochLossIsBatchMeanOfBreakdown) {
  const auto ds = train_dataset();
  Trainer trainer(ds, small_config(Objective::kLightCcf));
  const auto l = trainer.run_epoch(1);
  EXPECT_NEAR(l.total, l.bpr + 0.5 * l.aux + 1e-4 * l.reg, 1e-12);
  EXPECT_GT(l.bpr, 0.0);
  EXPECT_GT(l.aux, 0.0);
}

TEST(Trainer, RerunIsDeterministic) {
  const auto ds = train_dataset();
  for (auto obj : {Objective::kBprOnly, Objective::kClSs, Objective::kClUi, Objective::kLightCcf}) {
    auto cfg = small_config(obj);
    cfg.epochs = 4;
    cfg.encoder_layers = obj == Objective::kClSs ? 2 : 0;
    const auto a = train(ds, cfg);
    const auto b = train(ds, cfg);
    EXPECT_TRUE(a.record.same_outcome(b.record)) << to_string(obj);
    EXPECT_TRUE(a.base == b.base) << to_string(obj);
  }
}

TEST(Trainer, DifferentSeedChangesOutcome) {
  const auto ds = train_dataset();
  auto cfg = small_config(Objective::kLightCcf);
  cfg.epochs = 2;
  const auto a = train(ds, cfg);
  cfg.seed += 1;
  EXPECT_FALSE(a.base == train(ds, cfg).base);
}

TEST(Trainer, EarlyStoppingKeepsBestCheckpoint) {
  const auto ds = train_dataset();
  auto cfg = small_config(Objective::kLightCcf);
  cfg.epochs = 60;
  cfg.eval_interval = 1;
  cfg.patience = 3;
  cfg.lr = 0.05;
  const auto r = train(ds, cfg);
  const auto& rec = r.record;
  ASSERT_GE(rec.best_epoch, 1);
  Index evals_after_best = 0;
  for (const auto& er : rec.epochs) {
    if (!er.eval) continue;
    EXPECT_LE(er.eval->ndcg.at(20), rec.best_metric);
    if (er.epoch > rec.best_epoch) ++evals_after_best;
  }
  if (rec.stopped_early) EXPECT_EQ(evals_after_best, cfg.patience);
  EXPECT_LE(evals_after_best, cfg.patience);
  // The returned checkpoint reproduces the best score.
  EXPECT_DOUBLE_EQ(r.report.ndcg.at(20), rec.best_metric);
  EXPECT_DOUBLE_EQ(evaluate(r.ranking, ds).ndcg.at(20), rec.best_metric);
}

TEST(Trainer, EvaluatesOnIntervalAndLastEpoch) {
  const auto ds = train_dataset();
  auto cfg = small_config(Objective::kBprOnly);
  cfg.epochs = 7;
  cfg.eval_interval = 3;
  const auto r = train(ds, cfg);
  ASSERT_EQ(r.record.epochs.size(), 7u);
  for (const auto& er : r.record.epochs) {
    EXPECT_EQ(er.eval.has_value(), er.epoch == 3 || er.epoch == 6 || er.epoch == 7) << er.epoch;
  }
}

TEST(Trainer, CallbackSeesEveryEpoch) {
  const auto ds = train_dataset();
  auto cfg = small_config(Objective::kClUi);
  cfg.epochs = 3;
  std::vector<Index> seen;
  train(ds, cfg, [&](const EpochRecord& er) { seen.push_back(er.epoch); });
  EXPECT_EQ(seen, (std::vector<Index>{1, 2, 3}));
}

TEST(Trainer, EncoderRanksWithPropagatedEmbeddings) {
  const auto ds = train_dataset();
  auto cfg = small_config(Objective::kBprOnly);
  cfg.encoder_layers = 2;
  cfg.epochs = 2;
  const auto r = train(ds, cfg);
  const auto expect = propagate(r.base, build_normalized_adjacency(ds), PropagationConfig::uniform(2));
  EXPECT_LT((r.ranking.users - expect.users).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Trainer, ValidationSplitDrivesEarlyStopping) {
  const auto ds = train_dataset();
  auto cfg = small_config(Objective::kBprOnly);
  cfg.epochs = 4;
  cfg.validation_ratio = 0.2;
  const auto r = train(ds, cfg);
  const auto fit = carve_validation(ds, 0.2, cfg.seed);
  EXPECT_DOUBLE_EQ(evaluate(r.ranking, fit, {.ks = cfg.ks}).ndcg.at(20), r.record.best_metric);
}

TEST(Trainer, NonFiniteLossAbortsWithDiagnostic) {
  const auto ds = train_dataset();
  auto cfg = small_config(Objective::kLightCcf);
  cfg.loss.tau = 1e-310;
  const auto dir = fs::temp_directory_path() / "ccf_nan_diag";
  fs::remove_all(dir);
  cfg.diagnostic_dir = dir.string();
  EXPECT_THROW(train(ds, cfg), NumericError);
  EXPECT_TRUE(fs::exists(dir / "nan_diagnostic.json"));
}

TEST(Trainer, RejectsBadConfig) {
  const auto ds = train_dataset();
  auto cfg = small_config(Objective::kLightCcf);
  cfg.early_stop_k = 7;
  EXPECT_THROW(train(ds, cfg), ConfigError);
  cfg = small_config(Objective::kLightCcf);
  cfg.loss.tau = 0.0;
  EXPECT_THROW(train(ds, cfg), ConfigError);
  cfg = small_config(Objective::kLightCcf);
  cfg.batch_size = 1;
  EXPECT_THROW(train(ds, cfg), ConfigError);
}

TEST(Trainer, EpochRecordJson) {
  EpochRecord er;
  er.epoch = 5;
  er.loss = {0.5, 0.25, 0.01, 0.76};
  er.eval = EvalReport{};
  er.eval->recall[20] = 0.1;
  er.eval->ndcg[20] = 0.05;
  const auto j = er.to_json();
  EXPECT_EQ(j["epoch"], 5);
  EXPECT_DOUBLE_EQ(j["L_bpr"].get<double>(), 0.5);
  EXPECT_DOUBLE_EQ(j["L_aux"].get<double>(), 0.25);
  EXPECT_DOUBLE_EQ(j["recall@20"].get<double>(), 0.1);
  EXPECT_DOUBLE_EQ(j["ndcg@20"].get<double>(), 0.05);
}

TEST(Grid, ThirtySixCellsDeterministicAcrossWorkers) {
  const auto ds = split_per_user(
      generate_synthetic({.users = 30, .items = 40, .clusters = 2, .mean_degree = 6, .seed = 1}), 0.8, 1);
  auto cfg = small_config(Objective::kLightCcf);
  cfg.epochs = 1;
  cfg.dim = 8;
  const std::vector<double> taus{0.20, 0.22, 0.24, 0.26, 0.28, 0.30};
  const std::vector<double> alphas{0.1, 0.5, 1.0, 2.5, 5.0, 10.0};
  const auto serial = run_grid(ds, cfg, taus, alphas, 1);
  const auto parallel = run_grid(ds, cfg, taus, alphas, 4);
  ASSERT_EQ(serial.size(), 36u);
  ASSERT_EQ(parallel.size(), 36u);
  for (std::size_t k = 0; k < serial.size(); ++k) {
    EXPECT_DOUBLE_EQ(serial[k].tau, taus[k / 6]);
    EXPECT_DOUBLE_EQ(serial[k].alpha, alphas[k % 6]);
    EXPECT_EQ(serial[k].report.ndcg, parallel[k].report.ndcg);
    EXPECT_EQ(serial[k].report.recall, parallel[k].report.recall);
  }
  EXPECT_THROW(run_grid(ds, cfg, {}, alphas), ConfigError);
}
