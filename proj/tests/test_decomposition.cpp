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

#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>

#include "hessdag/decomposition.hpp"
#include "hessdag/error.hpp"
#include "test_support.hpp"

namespace hessdag {
namespace {

using testing::rel_err;

std::vector<NodeId> analysed_nodes(const Graph& g) {
  std::vector<NodeId> out;
  for (const Node& n : g.nodes()) {
    if (n.id != g.out()) out.push_back(n.id);
  }
  return out;
}

std::vector<GraphSpec> test_graphs() {
  std::vector<GraphSpec> out;
  out.push_back(testing::chain_spec(3, 3, Activation::kTanh));
  out.push_back(testing::chain_spec(2, 3, Activation::kGELU, 3, 3, true));
  out.push_back(testing::diamond_spec(3, Activation::kSiLU, true));
  out.push_back(testing::diamond_spec(3, Activation::kReLU, false));
  out.push_back(testing::skip_spec(3, Activation::kSoftplus));
  out.push_back(testing::attention_spec(3, 3));
  return out;
}

double min_eigenvalue(const Matrix& m) {
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) e(i, j) = 0.5 * (m(i, j) + m(j, i));
  }
  return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(e).eigenvalues().minCoeff();
}

TEST(GnRecursive, PredictionBaseIsLossHessian) {
  const Graph g = Graph::build(testing::chain_spec(1, 3, Activation::kTanh, 3, 3, true));
  const auto p = testing::kink_free_point(g, 1, 1);
  BatchHessian bh(g, p.theta, p.batch);
  EXPECT_EQ(gn_block_recursive(bh, g.prediction(), g.prediction()), bh.engine(0).loss_hessian());
}

TEST(GnRecursive, EqualsUnrolledOnAllGraphs) {
  std::uint64_t seed = 10;
  for (const GraphSpec& s : test_graphs()) {
    const Graph g = Graph::build(s);
    const auto p = testing::kink_free_point(g, 2, ++seed);
    BatchHessian bh(g, p.theta, p.batch);
    for (NodeId v : analysed_nodes(g)) {
      for (NodeId w : analysed_nodes(g)) {
        const Matrix rec = gn_block_recursive(bh, v, w);
        const Matrix unr = gn_block_unrolled(bh, v, w);
        EXPECT_LE(frobenius_norm(rec - unr), 1e-10 * frobenius_norm(unr)) << g.node(v).name << "," << g.node(w).name;
      }
    }
  }
}

TEST(Decompose, FullIsGnPlusTensorAndTensorRecursionAgrees) {
  std::uint64_t seed = 20;
  for (const GraphSpec& s : test_graphs()) {
    const Graph g = Graph::build(s);
    const auto p = testing::kink_free_point(g, 2, ++seed);
    BatchHessian bh(g, p.theta, p.batch);
    for (NodeId v : analysed_nodes(g)) {
      for (NodeId w : analysed_nodes(g)) {
        const DecomposedBlock b = decompose(bh, v, w);
        EXPECT_LE(frobenius_norm(b.full - (b.gn + b.tensor)), 1e-10 * frobenius_norm(b.full));
        const Matrix direct = bh.input_block(v, w, Component::kTensor);
        EXPECT_LE(frobenius_norm(b.tensor - direct), 1e-10 * std::max(frobenius_norm(b.full), 1e-300));
      }
    }
  }
}

TEST(Decompose, PiecewiseLinearTensorVanishes) {
  for (Activation fn : {Activation::kReLU, Activation::kLeakyReLU}) {
    for (const GraphSpec& s : {testing::chain_spec(3, 4, fn), testing::diamond_spec(3, fn, true),
                               testing::skip_spec(3, fn)}) {
      const Graph g = Graph::build(s);
      const auto p = testing::kink_free_point(g, 2, 31);
      BatchHessian bh(g, p.theta, p.batch);
      for (NodeId v : analysed_nodes(g)) {
        for (NodeId w : analysed_nodes(g)) {
          const DecomposedBlock b = decompose(bh, v, w);
          EXPECT_LT(frobenius_norm(b.tensor), 1e-10 * (1.0 + frobenius_norm(b.gn)));
          EXPECT_LT(gn_gap(b), 1e-7);
        }
      }
    }
  }
}

TEST(Decompose, SmoothNetHasTensorPart) {
  const Graph g = Graph::build(testing::chain_spec(2, 4, Activation::kGELU));
  const auto p = testing::kink_free_point(g, 2, 32);
  BatchHessian bh(g, p.theta, p.batch);
  const DecomposedBlock b = decompose(bh, g.find("h0"), g.find("h0"));
  EXPECT_GT(frobenius_norm(b.tensor), 0.0);
  EXPECT_GT(gn_gap(b), 0.0);
}

TEST(Decompose, LinearNetHasNoTensorPart) {
  GraphSpec s;
  s.input("x", 3);
  s.linear("l1", "x", 4);
  s.linear("l2", "l1", 3);
  s.linear("head", "l2", 2);
  s.mse("loss", "head");
  const Graph g = Graph::build(s);
  const auto p = testing::kink_free_point(g, 2, 33);
  BatchHessian bh(g, p.theta, p.batch);
  for (NodeId v : analysed_nodes(g)) {
    for (NodeId w : analysed_nodes(g)) EXPECT_EQ(frobenius_norm(decompose(bh, v, w).tensor), 0.0);
  }
}

TEST(GnUnrolled, IdentityChainGivesLossHessian) {
  GraphSpec s;
  s.input("x", 2);
  s.linear("l1", "x", 2);
  s.linear("l2", "l1", 2);
  s.mse("loss", "l2");
  const Graph g = Graph::build(s);
  const Vector theta{1, 0, 0, 1, 0, 0, 1, 0, 0, 1, 0, 0};
  const Batch batch{Sample{{{0.3, 0.1}}, {1.0, -1.0}, 0}};
  BatchHessian bh(g, theta, batch);
  EXPECT_EQ(gn_block_unrolled(bh, g.find("x"), g.find("x")), Matrix::identity(2));
}

TEST(GnUnrolled, SkipReceivesBothPaths) {
  const Graph g = Graph::build(testing::skip_spec(3, Activation::kTanh));
  const auto p = testing::kink_free_point(g, 1, 34);
  BatchHessian bh(g, p.theta, p.batch);
  HessianEngine& e = bh.engine(0);
  const NodeId v0 = g.find("v0"), l1 = g.find("l1"), v2 = g.find("v2"), out = g.prediction();
  Matrix expect = transpose_times(e.edge_jacobian(l1, v0), gn_block_unrolled(bh, l1, out));
  expect += transpose_times(e.edge_jacobian(v2, v0), gn_block_unrolled(bh, v2, out));
  EXPECT_LT(rel_err(gn_block_unrolled(bh, v0, out), expect), 1e-12);
}

TEST(GnUnrolled, DiamondSumsBranchJacobians) {
  const Graph g = Graph::build(testing::diamond_spec(3, Activation::kTanh, false));
  const auto p = testing::kink_free_point(g, 1, 35);
  BatchHessian bh(g, p.theta, p.batch);
  HessianEngine& e = bh.engine(0);
  const NodeId s = g.find("s");
  Matrix through(3, 3);
  for (const char* branch : {"1", "2"}) {
    const NodeId l = g.find(std::string("l") + branch), b = g.find(std::string("b") + branch);
    through += e.edge_jacobian(g.find("m"), b) * e.edge_jacobian(b, l) * e.edge_jacobian(l, s);
  }
  const Matrix j = e.total_jacobian(g.prediction(), g.find("m")) * through;
  const Matrix expect = transpose_times(j, e.loss_hessian() * j);
  EXPECT_LT(rel_err(gn_block_unrolled(bh, s, s), expect), 1e-12);
  EXPECT_LT(rel_err(gn_block_recursive(bh, s, s), expect), 1e-10);
}

TEST(GnGap, DiamondSumReluAndAttentionQk) {
  {
    const Graph g = Graph::build(testing::diamond_spec(4, Activation::kReLU, false));
    const auto p = testing::kink_free_point(g, 4, 36);
    BatchHessian bh(g, p.theta, p.batch);
    EXPECT_LT(gn_gap(decompose(bh, g.find("b1"), g.find("b2"))), 1e-6);
  }
  {
    // Sequence 8, width 16, weights at the usual 1/sqrt(3 fan_in) scale.
    const Graph g = Graph::build(testing::attention_spec(8, 16));
    const auto p = testing::kink_free_point(g, 8, 37, 1e-3, 1.0 / std::sqrt(48.0));
    BatchHessian bh(g, p.theta, p.batch);
    EXPECT_GT(gn_gap(decompose(bh, g.find("q"), g.find("k"))), 10.0);
  }
}

TEST(GnGap, EpsGuardsZeroDenominator) {
  EXPECT_EQ(gn_gap(Matrix(2, 2), Matrix(2, 2)), 0.0);
  EXPECT_DOUBLE_EQ(gn_gap(Matrix(1, 1), Matrix::identity(1), 1e-12), 1e12);
}

TEST(GnBlockMatrix, IsPositiveSemidefinite) {
  std::uint64_t seed = 40;
  for (const GraphSpec& s : test_graphs()) {
    const Graph g = Graph::build(s);
    const auto p = testing::kink_free_point(g, 2, ++seed);
    BatchHessian bh(g, p.theta, p.batch);
    const Matrix gn = assemble_input_hessian(bh, analysed_nodes(g), Component::kGaussNewton);
    EXPECT_GE(min_eigenvalue(gn), -1e-8 * frobenius_norm(gn));
    EXPECT_LE(negative_mass(gn, 1e-8 * frobenius_norm(gn)), 0.0);
  }
}

TEST(NegativeMass, TrivialMatrices) {
  const Matrix a = testing::random_matrix(5, 3, 1);
  EXPECT_EQ(negative_mass(a * a.transpose(), 1e-12), 0.0);
  const Matrix d = Matrix::diagonal(Vector{1.0, -2.0});
  EXPECT_DOUBLE_EQ(negative_mass(d), 2.0);
  const auto esc = escape_directions(d, 0.0);
  ASSERT_EQ(esc.size(), 1u);
  EXPECT_DOUBLE_EQ(esc[0].eigenvalue, -2.0);
  EXPECT_NEAR(std::abs(esc[0].direction[1]), 1.0, 1e-15);
  EXPECT_NEAR(esc[0].direction[0], 0.0, 1e-15);
  EXPECT_THROW(negative_mass(Matrix(2, 3)), Error);
  EXPECT_THROW(escape_directions(Matrix(3, 2), 0.0), Error);
}

TEST(NegativeMass, EscapeDirectionsOrderedByMagnitude) {
  const auto esc = escape_directions(Matrix::diagonal(Vector{-0.5, 3.0, -4.0, -1.0}), 0.75);
  ASSERT_EQ(esc.size(), 2u);
  EXPECT_DOUBLE_EQ(esc[0].eigenvalue, -4.0);
  EXPECT_DOUBLE_EQ(esc[1].eigenvalue, -1.0);
}

TEST(NegativeMass, SmoothFullHessianMatchesOracleEigensolver) {
  const Graph g = Graph::build(testing::diamond_spec(3, Activation::kTanh, true));
  const auto p = testing::kink_free_point(g, 2, 50, 1e-3, 1.5);
  const Matrix h = assemble_full_hessian(g, p.theta, p.batch);
  Eigen::MatrixXd e(h.rows(), h.cols());
  for (std::size_t i = 0; i < h.rows(); ++i) {
    for (std::size_t j = 0; j < h.cols(); ++j) e(i, j) = h(i, j);
  }
  const Eigen::VectorXd lambda = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(e).eigenvalues();
  double expect = 0.0;
  for (double l : lambda) {
    if (l < 0.0) expect -= l;
  }
  ASSERT_GT(expect, 0.0);
  EXPECT_NEAR(negative_mass(h), expect, 1e-10 * expect);
}

TEST(NormBridge, InequalityHolds) {
  std::uint64_t seed = 60;
  for (const GraphSpec& s : test_graphs()) {
    const Graph g = Graph::build(s);
    const auto p = testing::kink_free_point(g, 3, ++seed);
    BatchHessian bh(g, p.theta, p.batch);
    for (NodeId v : g.param_nodes()) {
      for (NodeId w : g.param_nodes()) {
        const NormBridge nb = norm_bridge(bh, v, w);
        EXPECT_LE(nb.lhs, nb.rhs() + 1e-8);
      }
    }
  }
}

}  // namespace
}  // namespace hessdag
