// Copyright 2026 The hessdag Authors.
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

#ifndef HESSDAG_RNG_HPP_
#define HESSDAG_RNG_HPP_

#include <cstddef>
#include <cstdint>
#include <random>

#include "hessdag/linalg.hpp"

namespace hessdag {

// SplitMix64 finalizer; used to derive independent substream seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  double rademacher() { return (engine_() >> 63) != 0 ? 1.0 : -1.0; }
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(engine_() % n); }

  Vector normal_vector(std::size_t n, double stddev = 1.0);
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

enum class ProbeDistribution { kRademacher, kGaussian };

// Hands out probe vectors whose content depends only on (seed, index), so
// probes can be drawn in any order or in parallel with identical results.
class ProbeStream {
 public:
  explicit ProbeStream(std::uint64_t seed,
                       ProbeDistribution dist = ProbeDistribution::kRademacher)
      : seed_(seed), dist_(dist) {}

  Vector probe(std::uint64_t index, std::size_t dim) const;
  Vector next(std::size_t dim) { return probe(counter_++, dim); }
  // Gaussian start vector for power iteration, drawn from a reserved substream.
  Vector start_vector(std::uint64_t index, std::size_t dim) const;

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }
  ProbeDistribution distribution() const { return dist_; }

 private:
  std::uint64_t seed_;
  ProbeDistribution dist_;
  std::uint64_t counter_ = 0;
};

}  // namespace hessdag

#endif  // HESSDAG_RNG_HPP_
