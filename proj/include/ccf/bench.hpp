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
#include <chrono>
#include <ostream>
#include <string>
#include <vector>

#include "ccf/common.hpp"
#include "ccf/gradients.hpp"
#include "ccf/trainer.hpp"

namespace ccf {

struct TimingRow {
  std::string name;
  double seconds_per_epoch = 0.0;
  Index epochs = 0;
  double total_seconds = 0.0;
};

struct NamedConfig {
  std::string name;
  TrainConfig config;
};

// Wall-clock seconds per training epoch (evaluation excluded). One warmup
// epoch is run and discarded, then `measured_epochs` are timed. `epochs` is
// the configured epoch budget unless `converged_epochs` supplies a count.
inline std::vector<TimingRow> timing_harness(const InteractionDataset& ds, const std::vector<NamedConfig>& configs,
                                             Index measured_epochs,
                                             const std::vector<Index>& converged_epochs = {}) {
  if (measured_epochs < 1) throw ConfigError("timing_harness: measured_epochs must be >= 1");
  std::vector<TimingRow> rows;
  for (std::size_t k = 0; k < configs.size(); ++k) {
    Trainer trainer(ds, configs[k].config);
    trainer.run_epoch(0);
    double total = 0.0;
    for (Index e = 1; e <= measured_epochs; ++e) {
      const auto t0 = std::chrono::steady_clock::now();
      trainer.run_epoch(e);
      total += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
    TimingRow r;
    r.name = configs[k].name;
    r.seconds_per_epoch = total / static_cast<double>(measured_epochs);
    r.epochs = k < converged_epochs.size() ? converged_epochs[k] : configs[k].config.epochs;
    r.total_seconds = r.seconds_per_epoch * static_cast<double>(r.epochs);
    rows.push_back(r);
  }
  return rows;
}

inline void write_timing(std::ostream& out, const std::vector<TimingRow>& rows) {
  out << "method\tseconds_per_epoch\tepochs\ttotal_seconds\n";
  for (const auto& r : rows) out << r.name << '\t' << r.seconds_per_epoch << '\t' << r.epochs << '\t' << r.total_seconds << '\n';
}

// Median wall time of one forward+backward evaluation of the auxiliary loss on
// a random batch of `batch_size` distinct-user pairs with dimension `dim`.
inline double time_aux_batch(AuxLoss aux, Index batch_size, Index dim, int repeats, std::uint64_t seed = 1) {
  const Index n = batch_size;
  EmbeddingState e(n, n, dim);
  Rng rng = make_rng({seed, static_cast<std::uint64_t>(batch_size)});
  std::normal_distribution<double> g(0.0, 1.0);
  for (Index r = 0; r < n; ++r)
    for (Index c = 0; c < dim; ++c) {
      e.users(r, c) = g(rng);
      e.items(r, c) = g(rng);
    }
  Batch b;
  for (Index k = 0; k < n; ++k) {
    b.users.push_back(k);
    b.pos_items.push_back(k);
    b.neg_items.push_back((k + 1) % n);
  }
  LossConfig cfg;
  std::vector<double> times;
  for (int r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    auto res = aux == AuxLoss::kNone ? bpr_grad(b, e) : aux_grad(aux, b, e, cfg);
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!std::isfinite(res.value)) throw NumericError("time_aux_batch: non-finite loss");
    times.push_back(dt);
  }
  std::nth_element(times.begin(), times.begin() + times.size() / 2, times.end());
  return times[times.size() / 2];
}

}  // namespace ccf
