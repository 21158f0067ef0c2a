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

#include "hessdag/rng.hpp"

namespace hessdag {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Vector Rng::normal_vector(std::size_t n, double stddev) {
  Vector v(n);
  for (double& x : v) x = stddev * normal();
  return v;
}

Vector ProbeStream::probe(std::uint64_t index, std::size_t dim) const {
  Rng rng(mix_seed(seed_, index));
  Vector z(dim);
  for (double& x : z) {
    x = dist_ == ProbeDistribution::kRademacher ? rng.rademacher() : rng.normal();
  }
  return z;
}

Vector ProbeStream::start_vector(std::uint64_t index, std::size_t dim) const {
  Rng rng(mix_seed(seed_ ^ 0x5DEECE66DULL, index));
  return rng.normal_vector(dim);
}

}  // namespace hessdag
