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

#ifndef HESSDAG_TESTS_TEST_SUPPORT_HPP_
#define HESSDAG_TESTS_TEST_SUPPORT_HPP_

#include <cstdint>
#include <string>

#include "hessdag/calculus.hpp"
#include "hessdag/graph.hpp"
#include "hessdag/linalg.hpp"

namespace hessdag::testing {

// ||a - b||_F / max(||b||_F, floor)
double rel_err(const Matrix& a, const Matrix& b, double floor = 1e-300);
double rel_err(const Vector& a, const Vector& b, double floor = 1e-300);

Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed);
Vector random_theta(const Graph& g, std::uint64_t seed, double scale = 0.5);
Batch random_batch(const Graph& g, std::size_t n, std::uint64_t seed);

// Draws theta and batch until every piecewise-linear pre-activation clears
// `margin`.
struct Point {
  Vector theta;
  Batch batch;
};
Point kink_free_point(const Graph& g, std::size_t batch_size, std::uint64_t seed,
                      double margin = 1e-3, double scale = 0.5);

// Small graph factories. Node names: "x" input, "h<i>" linear, "a<i>"
// activation, "loss".
GraphSpec chain_spec(std::size_t layers, std::size_t width, Activation fn, std::size_t in = 3,
                     std::size_t out = 2, bool cross_entropy = false);
// stem -> two branches -> sum or concat+linear -> head. Branch ends "b1", "b2",
// merge "m".
GraphSpec diamond_spec(std::size_t width, Activation fn, bool concat, std::size_t out = 2);
// v0 -> v1 -> v2 with a skip v0 -> v2 (sum), then head.
GraphSpec skip_spec(std::size_t width, Activation fn);
// Single-head attention over `seq` rows with Q/K/V projections, mean pool and
// readout.
GraphSpec attention_spec(std::size_t seq, std::size_t dim, std::size_t out = 1);

}  // namespace hessdag::testing

#endif  // HESSDAG_TESTS_TEST_SUPPORT_HPP_
