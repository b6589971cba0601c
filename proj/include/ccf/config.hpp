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
// Run configuration: a flat "key = value" text file. Every key has a default;
// materialize() writes the full resolved set back out so a run directory is
// reproducible from its config copy alone.
#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ccf/common.hpp"
#include "ccf/dataset.hpp"
#include "ccf/synthetic.hpp"
#include "ccf/trainer.hpp"

namespace ccf {

class KeyValueFile {
 public:
  static KeyValueFile parse(std::istream& in, const std::string& origin = "<config>") {
    KeyValueFile kv;
    std::string line;
    int ln = 0;
    while (std::getline(in, line)) {
      ++ln;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw ConfigError(origin + ":" + std::to_string(ln) + ": expected 'key = value'");
      }
      kv.values_[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
  }

  static KeyValueFile load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    return parse(in, path.string());
  }

  bool has(const std::string& key) const { return values_.contains(key); }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string str(const std::string& key, const std::string& def) const {
    used_.insert(key);
    const auto it = values_.find(key);
    return it == values_.end() ? def : it->second;
  }

  double real(const std::string& key, double def) const {
    const auto s = str(key, "");
    if (s.empty()) return def;
    try {
      std::size_t pos = 0;
      const double v = std::stod(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "': expected a number, got '" + s + "'");
    }
  }

  Index integer(const std::string& key, Index def) const {
    const auto s = str(key, "");
    if (s.empty()) return def;
    try {
      std::size_t pos = 0;
      const long long v = std::stoll(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return static_cast<Index>(v);
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "': expected an integer, got '" + s + "'");
    }
  }

  std::vector<double> reals(const std::string& key, const std::vector<double>& def) const {
    const auto s = str(key, "");
    if (s.empty()) return def;
    std::vector<double> out;
    for (const auto& tok : split_list(s)) {
      try {
        out.push_back(std::stod(tok));
      } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': bad number '" + tok + "'");
      }
    }
    return out;
  }

  std::vector<Index> integers(const std::string& key, const std::vector<Index>& def) const {
    std::vector<Index> out;
    for (double v : reals(key, {})) out.push_back(static_cast<Index>(v));
    return out.empty() ? def : out;
  }

  // Keys present in the file that no accessor asked for.
  std::vector<std::string> unused() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_)
      if (!used_.contains(k)) out.push_back(k);
    return out;
  }

  static std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string tok;
    std::istringstream in(s);
    while (std::getline(in, tok, ',')) {
      tok = trim(tok);
      if (!tok.empty()) out.push_back(tok);
    }
    return out;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

// One (objective, encoder layers) entry of a timing run.
struct BenchEntry {
  std::string name;
  Objective objective = Objective::kLightCcf;
  Index layers = 0;
};

struct ExperimentConfig {
  std::string dataset = "synthetic";  // prepared split dir, raw interaction file, or "synthetic"
  InputFormat format = InputFormat::kPairPerLine;
  double train_ratio = 0.8;
  std::uint64_t split_seed = 2024;
  double noise_ratio = 0.0;
  std::uint64_t noise_seed = 1;
  std::optional<std::pair<Index, Index>> sparsity_boundaries;
  SyntheticSpec synthetic;
  TrainConfig train;
  std::vector<double> grid_tau{0.20, 0.22, 0.24, 0.26, 0.28, 0.30};
  std::vector<double> grid_alpha{0.1, 0.5, 1.0, 2.5, 5.0, 10.0};
  Index bench_epochs = 3;
  std::vector<BenchEntry> bench_entries{{"bpr_mf", Objective::kBprOnly, 0},
                                        {"lightgcn_3", Objective::kBprOnly, 3},
                                        {"lightccf_0", Objective::kLightCcf, 0}};
  std::string checkpoint;  // for evaluate

  static ExperimentConfig from(const KeyValueFile& kv) {
    ExperimentConfig c;
    c.dataset = kv.str("dataset", c.dataset);
    c.format = parse_input_format(kv.str("format", "pair-per-line"));
    c.train_ratio = kv.real("train_ratio", c.train_ratio);
    c.split_seed = static_cast<std::uint64_t>(kv.integer("split_seed", static_cast<Index>(c.split_seed)));
    c.noise_ratio = kv.real("noise_ratio", c.noise_ratio);
    c.noise_seed = static_cast<std::uint64_t>(kv.integer("noise_seed", static_cast<Index>(c.noise_seed)));
    const auto sb = kv.str("sparsity_boundaries", "auto");
    if (sb != "auto") {
      const auto b = kv.integers("sparsity_boundaries", {});
      if (b.size() != 2) throw ConfigError("sparsity_boundaries needs two integers or 'auto'");
      c.sparsity_boundaries = std::pair{b[0], b[1]};
    }

    auto& s = c.synthetic;
    s.users = kv.integer("synthetic.users", s.users);
    s.items = kv.integer("synthetic.items", s.items);
    s.clusters = kv.integer("synthetic.clusters", s.clusters);
    s.mean_degree = kv.real("synthetic.mean_degree", s.mean_degree);
    s.min_degree = kv.integer("synthetic.min_degree", s.min_degree);
    s.in_cluster = kv.real("synthetic.in_cluster", s.in_cluster);
    s.primary_share = kv.real("synthetic.primary_share", s.primary_share);
    s.popularity_exponent = kv.real("synthetic.popularity_exponent", s.popularity_exponent);
    s.seed = static_cast<std::uint64_t>(kv.integer("synthetic.seed", static_cast<Index>(s.seed)));

    auto& t = c.train;
    t.objective = parse_objective(kv.str("objective", to_string(t.objective)));
    t.encoder_layers = kv.integer("encoder_layers", t.encoder_layers);
    const auto lw = kv.str("layer_weights", "uniform");
    if (lw != "uniform") t.layer_weights = kv.reals("layer_weights", {});
    t.lr = kv.real("lr", t.lr);
    t.epochs = kv.integer("epochs", t.epochs);
    t.patience = kv.integer("patience", t.patience);
    t.eval_interval = kv.integer("eval_interval", t.eval_interval);
    t.optimizer = parse_optimizer(kv.str("optimizer", to_string(t.optimizer)));
    t.loss.tau = kv.real("tau", t.loss.tau);
    t.loss.alpha = kv.real("alpha", t.loss.alpha);
    t.loss.beta = kv.real("beta", t.loss.beta);
    t.loss.na_negatives = parse_na_negatives(kv.str("na_negatives", to_string(t.loss.na_negatives)));
    t.loss.contrastive_similarity = parse_similarity(kv.str("similarity", to_string(t.loss.contrastive_similarity)));
    t.loss.reg_scope = parse_reg_scope(kv.str("reg_scope", to_string(t.loss.reg_scope)));
    t.dim = kv.integer("dim", t.dim);
    t.batch_size = kv.integer("batch_size", t.batch_size);
    t.seed = static_cast<std::uint64_t>(kv.integer("seed", static_cast<Index>(t.seed)));
    t.ks = kv.integers("topk", t.ks);
    t.early_stop_k = kv.integer("early_stop_k", t.early_stop_k);
    t.validation_ratio = kv.real("validation_ratio", t.validation_ratio);

    c.grid_tau = kv.reals("grid.tau", c.grid_tau);
    c.grid_alpha = kv.reals("grid.alpha", c.grid_alpha);
    c.bench_epochs = kv.integer("bench.epochs", c.bench_epochs);
    if (kv.has("bench.entries")) {
      c.bench_entries.clear();
      for (const auto& tok : KeyValueFile::split_list(kv.str("bench.entries", ""))) {
        // name:objective:layers
        std::istringstream in(tok);
        std::string name, obj, layers;
        if (!std::getline(in, name, ':') || !std::getline(in, obj, ':') || !std::getline(in, layers)) {
          throw ConfigError("bench.entries: expected name:objective:layers, got '" + tok + "'");
        }
        c.bench_entries.push_back({name, parse_objective(obj), static_cast<Index>(std::stoll(layers))});
      }
    }
    c.checkpoint = kv.str("checkpoint", c.checkpoint);

    const auto extra = kv.unused();
    if (!extra.empty()) {
      std::string msg = "unknown config keys:";
      for (const auto& k : extra) msg += " " + k;
      throw ConfigError(msg);
    }
    c.train.validate();
    return c;
  }

  static ExperimentConfig load(const std::filesystem::path& path) { return from(KeyValueFile::load(path)); }

  // Every key with its resolved value.
  std::string materialize() const {
    std::ostringstream o;
    o.precision(17);
    auto list = [](const auto& v) {
      std::ostringstream s;
      s.precision(17);
      for (std::size_t k = 0; k < v.size(); ++k) s << (k ? "," : "") << v[k];
      return s.str();
    };
    o << "dataset = " << dataset << '\n'
      << "format = " << (format == InputFormat::kPairPerLine ? "pair-per-line" : "user-adjacency-line") << '\n'
      << "train_ratio = " << train_ratio << '\n'
      << "split_seed = " << split_seed << '\n'
      << "noise_ratio = " << noise_ratio << '\n'
      << "noise_seed = " << noise_seed << '\n'
      << "sparsity_boundaries = "
      << (sparsity_boundaries ? std::to_string(sparsity_boundaries->first) + "," + std::to_string(sparsity_boundaries->second)
                              : std::string("auto"))
      << '\n';
    o << "synthetic.users = " << synthetic.users << '\n'
      << "synthetic.items = " << synthetic.items << '\n'
      << "synthetic.clusters = " << synthetic.clusters << '\n'
      << "synthetic.mean_degree = " << synthetic.mean_degree << '\n'
      << "synthetic.min_degree = " << synthetic.min_degree << '\n'
      << "synthetic.in_cluster = " << synthetic.in_cluster << '\n'
      << "synthetic.primary_share = " << synthetic.primary_share << '\n'
      << "synthetic.popularity_exponent = " << synthetic.popularity_exponent << '\n'
      << "synthetic.seed = " << synthetic.seed << '\n';
    o << "objective = " << to_string(train.objective) << '\n'
      << "encoder_layers = " << train.encoder_layers << '\n'
      << "layer_weights = " << (train.layer_weights.empty() ? std::string("uniform") : list(train.layer_weights)) << '\n'
      << "lr = " << train.lr << '\n'
      << "epochs = " << train.epochs << '\n'
      << "patience = " << train.patience << '\n'
      << "eval_interval = " << train.eval_interval << '\n'
      << "optimizer = " << to_string(train.optimizer) << '\n'
      << "tau = " << train.loss.tau << '\n'
      << "alpha = " << train.loss.alpha << '\n'
      << "beta = " << train.loss.beta << '\n'
      << "na_negatives = " << to_string(train.loss.na_negatives) << '\n'
      << "similarity = " << to_string(train.loss.contrastive_similarity) << '\n'
      << "reg_scope = " << to_string(train.loss.reg_scope) << '\n'
      << "dim = " << train.dim << '\n'
      << "batch_size = " << train.batch_size << '\n'
      << "seed = " << train.seed << '\n'
      << "topk = " << list(train.ks) << '\n'
      << "early_stop_k = " << train.early_stop_k << '\n'
      << "validation_ratio = " << train.validation_ratio << '\n';
    o << "grid.tau = " << list(grid_tau) << '\n'
      << "grid.alpha = " << list(grid_alpha) << '\n'
      << "bench.epochs = " << bench_epochs << '\n'
      << "bench.entries = ";
    for (std::size_t k = 0; k < bench_entries.size(); ++k) {
      o << (k ? "," : "") << bench_entries[k].name << ':' << to_string(bench_entries[k].objective) << ':'
        << bench_entries[k].layers;
    }
    o << '\n';
    if (!checkpoint.empty()) o << "checkpoint = " << checkpoint << '\n';
    return o.str();
  }
};

// Resolves a relative dataset path against $CCF_DATA_ROOT when set.
inline std::filesystem::path resolve_data_path(const std::string& p, std::string* root_used = nullptr) {
  std::filesystem::path path(p);
  if (path.is_relative()) {
    if (const char* root = std::getenv("CCF_DATA_ROOT"); root != nullptr && *root != '\0') {
      if (root_used != nullptr) *root_used = root;
      return std::filesystem::path(root) / path;
    }
  }
  return path;
}

// Loads the dataset a config describes: a prepared split directory, a raw
// interaction file (split on the fly), or the synthetic generator. Noise is
// injected into the train split when noise_ratio > 0.
inline InteractionDataset load_dataset(const ExperimentConfig& c, std::string* root_used = nullptr) {
  InteractionDataset ds;
  if (c.dataset == "synthetic") {
    ds = split_per_user(generate_synthetic(c.synthetic), c.train_ratio, c.split_seed);
  } else {
    const auto path = resolve_data_path(c.dataset, root_used);
    if (std::filesystem::is_directory(path)) {
      ds = load_split(path);
    } else {
      ds = split_per_user(load_interactions(path, c.format), c.train_ratio, c.split_seed);
    }
  }
  if (c.noise_ratio > 0.0) ds = inject_noise(ds, c.noise_ratio, c.noise_seed);
  return ds;
}

}  // namespace ccf
