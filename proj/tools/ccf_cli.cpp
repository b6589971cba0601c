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
// Command-line driver: prepare, train, evaluate, grid, gradcheck, bench.
// Exit codes: 0 success, 1 validation or numeric failure, 2 I/O or config error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "ccf/bench.hpp"
#include "ccf/config.hpp"
#include "ccf/gradcheck.hpp"
#include "ccf/trainer.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailed = 1;
constexpr int kExitConfig = 2;

void log(const std::string& msg) { std::cerr << "[ccf] " << msg << '\n'; }

struct CommonArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  unsigned workers = 1;
};

fs::path prepare_out_dir(const std::string& out) {
  if (out.empty()) throw ccf::ConfigError("--out is required");
  const fs::path dir(out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ccf::IoError("cannot create output directory " + out + ": " + ec.message());
  const auto probe = dir / ".write_probe";
  if (!std::ofstream(probe)) throw ccf::IoError("output directory not writable: " + out);
  fs::remove(probe);
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw ccf::IoError("cannot write " + path.string());
  out << text;
}

ccf::ExperimentConfig load_config(const CommonArgs& a) {
  ccf::ExperimentConfig cfg = a.config.empty() ? ccf::ExperimentConfig::from(ccf::KeyValueFile{})
                                               : ccf::ExperimentConfig::load(a.config);
  if (a.seed) cfg.train.seed = *a.seed;
  cfg.train.validate();
  return cfg;
}

ccf::InteractionDataset load_logged(const ccf::ExperimentConfig& cfg) {
  const char* root = std::getenv("CCF_DATA_ROOT");
  log(std::string("CCF_DATA_ROOT=") + (root != nullptr ? root : "(unset)"));
  std::string used;
  auto ds = ccf::load_dataset(cfg, &used);
  log("dataset " + cfg.dataset + (used.empty() ? "" : " (under " + used + ")") + ": " +
      std::to_string(ds.num_users()) + " users, " + std::to_string(ds.num_items()) + " items, " +
      std::to_string(ds.train().size()) + " train / " + std::to_string(ds.test().size()) + " test edges");
  return ds;
}

void write_dataset_ref(const fs::path& dir, const ccf::ExperimentConfig& cfg, const ccf::InteractionDataset& ds) {
  nlohmann::ordered_json j = ccf::make_manifest(ds, cfg.train_ratio, cfg.split_seed, 0, cfg.dataset).to_json();
  j["fingerprint"] = ds.fingerprint();
  j["noise_ratio"] = cfg.noise_ratio;
  j["injected_edges"] = ds.injected().size();
  write_text(dir / "split.json", j.dump(2) + "\n");
}

ccf::SparsityGroups groups_for(const ccf::ExperimentConfig& cfg, const ccf::InteractionDataset& ds) {
  return ccf::sparsity_groups(ds, cfg.sparsity_boundaries);
}

int cmd_prepare(const std::string& input, const std::string& format, double ratio, std::uint64_t seed,
                const std::string& out) {
  if (!fs::exists(input)) throw ccf::IoError("input not found: " + input);
  const auto raw = ccf::load_interactions(input, ccf::parse_input_format(format));
  const auto ds = ccf::split_per_user(raw, ratio, seed);
  const fs::path dir = prepare_out_dir(out);
  ccf::save_split(dir, ds, ccf::make_manifest(ds, ratio, seed, raw.duplicates, input));
  log("wrote split to " + dir.string() + ": " + std::to_string(ds.train().size()) + " train / " +
      std::to_string(ds.test().size()) + " test edges, " + std::to_string(raw.duplicates) + " duplicates dropped");
  return kExitOk;
}

int cmd_train(const CommonArgs& a) {
  auto cfg = load_config(a);
  const fs::path dir = prepare_out_dir(a.out);
  cfg.train.diagnostic_dir = dir.string();
  write_text(dir / "config.txt", cfg.materialize());
  const auto ds = load_logged(cfg);
  write_dataset_ref(dir, cfg, ds);
  const auto groups = groups_for(cfg, ds);

  std::ofstream epochs(dir / "epochs.jsonl");
  if (!epochs) throw ccf::IoError("cannot write epochs.jsonl");
  const auto result = ccf::train(
      ds, cfg.train,
      [&](const ccf::EpochRecord& er) {
        epochs << er.to_json().dump() << '\n';
        epochs.flush();
        if (er.eval) {
          log("epoch " + std::to_string(er.epoch) + " loss " + std::to_string(er.loss.total) + " ndcg@" +
              std::to_string(cfg.train.early_stop_k) + " " + std::to_string(er.eval->ndcg.at(cfg.train.early_stop_k)));
        }
      },
      &groups);

  ccf::save_checkpoint(dir / "checkpoint.bin", result.base, cfg.train.seed, cfg.train.loss.contrastive_similarity);
  nlohmann::ordered_json run = result.record.summary_json();
  run["report"] = result.report.to_json();
  write_text(dir / "report.json", run.dump(2) + "\n");
  std::ofstream tsv(dir / "report.tsv");
  result.report.write_long(tsv, ccf::to_string(cfg.train.objective));
  log("best epoch " + std::to_string(result.record.best_epoch) + ", ndcg@" + std::to_string(cfg.train.early_stop_k) +
      " " + std::to_string(result.report.ndcg.at(cfg.train.early_stop_k)));
  std::cout << run.dump(2) << '\n';
  return kExitOk;
}

int cmd_evaluate(const CommonArgs& a, std::string checkpoint) {
  const auto cfg = load_config(a);
  if (checkpoint.empty()) checkpoint = cfg.checkpoint;
  if (checkpoint.empty()) throw ccf::ConfigError("evaluate: no checkpoint given (--checkpoint or config key)");
  const fs::path dir = prepare_out_dir(a.out);
  write_text(dir / "config.txt", cfg.materialize());
  const auto ds = load_logged(cfg);
  ccf::CheckpointHeader h;
  const auto e0 = ccf::load_checkpoint(checkpoint, &h);
  if (h.num_users != ds.num_users() || h.num_items != ds.num_items()) {
    throw ccf::ConfigError("checkpoint shape " + std::to_string(h.num_users) + "x" + std::to_string(h.num_items) +
                           " does not match dataset " + std::to_string(ds.num_users()) + "x" +
                           std::to_string(ds.num_items()));
  }
  const auto prop = cfg.train.propagation();
  const auto ranking = prop.num_layers > 0 ? ccf::propagate(e0, ccf::build_normalized_adjacency(ds), prop) : e0;
  const auto groups = groups_for(cfg, ds);
  ccf::EvalOptions opt;
  opt.ks = cfg.train.ks;
  opt.groups = &groups;
  const auto report = ccf::evaluate(ranking, ds, opt);
  write_text(dir / "report.json", report.to_json().dump(2) + "\n");
  std::ofstream tsv(dir / "report.tsv");
  report.write_long(tsv, ccf::to_string(cfg.train.objective));
  std::cout << report.to_json().dump(2) << '\n';
  return kExitOk;
}

int cmd_grid(const CommonArgs& a) {
  const auto cfg = load_config(a);
  const fs::path dir = prepare_out_dir(a.out);
  write_text(dir / "config.txt", cfg.materialize());
  const auto ds = load_logged(cfg);
  write_dataset_ref(dir, cfg, ds);
  log("grid " + std::to_string(cfg.grid_tau.size()) + "x" + std::to_string(cfg.grid_alpha.size()) + " on " +
      std::to_string(a.workers) + " worker(s)");
  const auto cells = ccf::run_grid(ds, cfg.train, cfg.grid_tau, cfg.grid_alpha, a.workers);
  std::ofstream tsv(dir / "grid.tsv");
  std::ofstream long_tsv(dir / "report.tsv");
  tsv << "tau\talpha\tbest_epoch";
  for (auto k : cfg.train.ks) tsv << "\trecall@" << k << "\tndcg@" << k;
  tsv << '\n';
  tsv.precision(10);
  bool header = true;
  for (const auto& c : cells) {
    tsv << c.tau << '\t' << c.alpha << '\t' << c.best_epoch;
    for (auto k : cfg.train.ks) tsv << '\t' << c.report.recall.at(k) << '\t' << c.report.ndcg.at(k);
    tsv << '\n';
    std::ostringstream name;
    name << "tau=" << c.tau << ",alpha=" << c.alpha;
    c.report.write_long(long_tsv, name.str(), header);
    header = false;
  }
  log("wrote " + (dir / "grid.tsv").string());
  return kExitOk;
}

int cmd_gradcheck(const std::string& out, const ccf::GradcheckOptions& opt) {
  const auto rows = ccf::run_gradcheck(opt);
  bool ok = true;
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  std::cout << "loss\tinstances\tmax_rel_error\tresult\n";
  for (const auto& r : rows) {
    std::cout << r.loss << '\t' << r.instances << '\t' << r.max_rel_error << '\t' << (r.passed ? "pass" : "FAIL")
              << '\n';
    j.push_back({{"loss", r.loss}, {"instances", r.instances}, {"max_rel_error", r.max_rel_error}, {"passed", r.passed}});
    ok = ok && r.passed;
  }
  if (!out.empty()) write_text(prepare_out_dir(out) / "gradcheck.json", j.dump(2) + "\n");
  return ok ? kExitOk : kExitFailed;
}

int cmd_bench(const CommonArgs& a) {
  const auto cfg = load_config(a);
  const fs::path dir = prepare_out_dir(a.out);
  write_text(dir / "config.txt", cfg.materialize());
  const auto ds = load_logged(cfg);
  std::vector<ccf::NamedConfig> configs;
  for (const auto& b : cfg.bench_entries) {
    ccf::TrainConfig t = cfg.train;
    t.objective = b.objective;
    t.encoder_layers = b.layers;
    t.layer_weights.clear();
    configs.push_back({b.name, t});
  }
  const auto rows = ccf::timing_harness(ds, configs, cfg.bench_epochs);
  ccf::write_timing(std::cout, rows);
  std::ofstream tsv(dir / "timing.tsv");
  ccf::write_timing(tsv, rows);
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    j.push_back({{"method", r.name},
                 {"seconds_per_epoch", r.seconds_per_epoch},
                 {"epochs", r.epochs},
                 {"total_seconds", r.total_seconds}});
  }
  write_text(dir / "timing.json", j.dump(2) + "\n");
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contrastive collaborative filtering: train, evaluate and check objectives"};
  app.require_subcommand(1);

  CommonArgs common;
  auto add_common = [&](CLI::App* sub, bool needs_out = true) {
    sub->add_option("--config", common.config, "Config file (key = value)")->check(CLI::ExistingFile);
    auto* o = sub->add_option("--out", common.out, "Output directory");
    if (needs_out) o->required();
    sub->add_option("--seed", common.seed, "Override the training seed");
  };

  std::string input, format = "pair-per-line";
  double ratio = 0.8;
  std::uint64_t split_seed = 2024;
  auto* prepare = app.add_subcommand("prepare", "Split a raw interaction file per user");
  prepare->add_option("--input", input, "Interaction file (plain or gzip)")->required();
  prepare->add_option("--format", format, "pair-per-line | user-adjacency-line");
  prepare->add_option("--ratio", ratio, "Train fraction per user");
  prepare->add_option("--seed", split_seed, "Split seed");
  prepare->add_option("--out", common.out, "Output directory")->required();

  auto* train = app.add_subcommand("train", "Train one configuration");
  add_common(train);

  std::string checkpoint;
  auto* evaluate = app.add_subcommand("evaluate", "Evaluate a checkpoint");
  add_common(evaluate);
  evaluate->add_option("--checkpoint", checkpoint, "Checkpoint written by train");

  auto* grid = app.add_subcommand("grid", "Sweep tau x alpha");
  add_common(grid);
  grid->add_option("--workers", common.workers, "Parallel training runs")->check(CLI::PositiveNumber);

  ccf::GradcheckOptions gc;
  auto* gradcheck = app.add_subcommand("gradcheck", "Analytic vs finite-difference gradients");
  gradcheck->add_option("--out", common.out, "Write gradcheck.json here");
  gradcheck->add_option("--seed", gc.seed, "Instance seed");
  gradcheck->add_option("--instances", gc.instances, "Random instances per loss")->check(CLI::PositiveNumber);
  gradcheck->add_option("--corrupt", gc.corrupt, "Scale analytic gradients by 1 + this (negative control)");

  auto* bench = app.add_subcommand("bench", "Per-epoch timing table");
  add_common(bench);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*prepare) return cmd_prepare(input, format, ratio, split_seed, common.out);
    if (*train) return cmd_train(common);
    if (*evaluate) return cmd_evaluate(common, checkpoint);
    if (*grid) return cmd_grid(common);
    if (*gradcheck) return cmd_gradcheck(common.out, gc);
    if (*bench) return cmd_bench(common);
  } catch (const ccf::IoError& e) {
    log(std::string("error: ") + e.what());
    return kExitConfig;
  } catch (const ccf::ConfigError& e) {
    log(std::string("error: ") + e.what());
    return kExitConfig;
  } catch (const ccf::Error& e) {
    log(std::string("error: ") + e.what());
    return kExitFailed;
  } catch (const std::exception& e) {
    log(std::string("error: ") + e.what());
    return kExitFailed;
  }
  return kExitOk;
}
