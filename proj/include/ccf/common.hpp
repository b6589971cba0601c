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

#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace ccf {

using Index = std::int64_t;
using Vector = Eigen::VectorXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Base of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File missing, unreadable, malformed on disk.
class IoError : public Error {
 public:
  using Error::Error;
};

// Bad config keys/values, dimension mismatches between inputs.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A precondition on the data or arguments does not hold.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Non-finite values appeared during optimization.
class NumericError : public Error {
 public:
  using Error::Error;
};

using Rng = std::mt19937_64;

// Derives an independent generator from a list of integers, so that e.g.
// (seed, epoch, batch) each get a stream that does not depend on how many
// draws another stream consumed.
inline Rng make_rng(std::initializer_list<std::uint64_t> parts) {
  std::vector<std::uint32_t> words;
  words.reserve(parts.size() * 2);
  for (auto p : parts) {
    words.push_back(static_cast<std::uint32_t>(p & 0xffffffffu));
    words.push_back(static_cast<std::uint32_t>(p >> 32));
  }
  std::seed_seq mixed(words.begin(), words.end());
  return Rng(mixed);
}

inline bool all_finite(const RowMatrix& m) { return m.allFinite(); }

}  // namespace ccf
