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
#include <string>
#include <string_view>

#include "ccf/common.hpp"
#include "ccf/model.hpp"

namespace ccf {

enum class OptimizerKind { kSgd, kAdam };

inline const char* to_string(OptimizerKind k) { return k == OptimizerKind::kSgd ? "sgd" : "adam"; }

inline OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "sgd") return OptimizerKind::kSgd;
  if (s == "adam") return OptimizerKind::kAdam;
  throw ConfigError("unknown optimizer '" + std::string(s) + "'");
}

// Dense first-order optimizer over both embedding tables.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : kind_(kind), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (!(lr > 0.0)) throw ConfigError("learning rate must be > 0");
  }

  void step(EmbeddingState& params, const EmbeddingState& grad) {
    if (kind_ == OptimizerKind::kSgd) {
      params.axpy(-lr_, grad);
      return;
    }
    if (m_.num_users() != params.num_users() || m_.dim() != params.dim()) {
      m_ = EmbeddingState(params.num_users(), params.num_items(), params.dim());
      v_ = m_;
      t_ = 0;
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    adam(params.users, grad.users, m_.users, v_.users, c1, c2);
    adam(params.items, grad.items, m_.items, v_.items, c1, c2);
  }

  OptimizerKind kind() const { return kind_; }
  double lr() const { return lr_; }

 private:
  void adam(RowMatrix& p, const RowMatrix& g, RowMatrix& m, RowMatrix& v, double c1, double c2) const {
    m = beta1_ * m + (1.0 - beta1_) * g;
    v = beta2_ * v + (1.0 - beta2_) * g.cwiseProduct(g);
    p.array() -= lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
  }

  OptimizerKind kind_;
  double lr_, beta1_, beta2_, eps_;
  EmbeddingState m_, v_;
  long t_ = 0;
};

}  // namespace ccf
