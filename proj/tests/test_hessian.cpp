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

#include <cmath>

#include "hessdag/calculus.hpp"
#include "hessdag/error.hpp"
#include "hessdag/hessian.hpp"
#include "hessdag/oracle.hpp"
#include "test_support.hpp"

namespace hessdag {
namespace {

using testing::rel_err;

double block_err(const Matrix& exact, const Matrix& fd) {
  const double n = frobenius_norm(exact);
  return n < 1e-8 ? frobenius_norm(exact - fd) : frobenius_norm(exact - fd) / n;
}

Matrix slice(const Matrix& m, std::size_t r0, std::size_t rows, std::size_t c0, std::size_t cols) {
  Matrix out(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) out(i, j) = m(r0 + i, c0 + j);
  }
  return out;
}

std::vector<NodeId> analysed_nodes(const Graph& g) {
  std::vector<NodeId> out;
  for (const Node& n : g.nodes()) {
    if (n.id != g.out()) out.push_back(n.id);
  }
  return out;
}

GraphSpec smooth_spec(std::uint64_t seed) {
  const Activation fns[] = {Activation::kTanh, Activation::kGELU, Activation::kSiLU, Activation::kSoftplus};
  const Activation fn = fns[seed % 4];
  switch (seed % 4) {
    case 0: return testing::chain_spec(3, 4, fn);
    case 1: return testing::diamond_spec(3, fn, seed % 8 == 1);
    case 2: return testing::skip_spec(4, fn);
    default: return testing::attention_spec(3, 3 + seed % 2);
  }
}

TEST(InputBlock, ExampleOneChainMatchesFiniteDifferences) {
  const Graph g = Graph::build(testing::chain_spec(2, 3, Activation::kTanh));
  const auto p = testing::kink_free_point(g, 1, 21);
  BatchHessian bh(g, p.theta, p.batch);
  const NodeId v1 = g.find("h0"), v2 = g.find("a0");
  HessianEngine& e = bh.engine(0);
  const ForwardState& fs = e.forward_state();
  const Matrix d = e.edge_jacobian(v2, v1);
  Matrix expect = transpose_times(d, e.input_block(v2, v2) * d);
  expect += contract_input(g, fs, v2, v1, v1, e.backward_state().grads[v2.index]);
  const Matrix block = bh.input_block(v1, v1);
  EXPECT_LT(rel_err(block, expect), 1e-13);
  EXPECT_LT(block_err(block, fd_block(g, p.theta, p.batch, v1, v1)), 1e-4);
}

TEST(InputBlock, AllPairsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const Graph g = Graph::build(smooth_spec(seed));
    const auto p = testing::kink_free_point(g, 2, 100 + seed);
    BatchHessian bh(g, p.theta, p.batch);
    for (NodeId v : analysed_nodes(g)) {
      for (NodeId w : analysed_nodes(g)) {
        EXPECT_LT(block_err(bh.input_block(v, w), fd_block(g, p.theta, p.batch, v, w)), 1e-4)
            << "seed " << seed << " pair " << g.node(v).name << "," << g.node(w).name;
      }
    }
  }
}

TEST(InputBlock, PiecewiseLinearPairsMatchFiniteDifferences) {
  for (Activation fn : {Activation::kReLU, Activation::kLeakyReLU}) {
    const Graph g = Graph::build(testing::diamond_spec(3, fn, true));
    const auto p = testing::kink_free_point(g, 2, 31);
    BatchHessian bh(g, p.theta, p.batch);
    for (NodeId v : analysed_nodes(g)) {
      for (NodeId w : analysed_nodes(g)) {
        EXPECT_LT(block_err(bh.input_block(v, w), fd_block(g, p.theta, p.batch, v, w)), 1e-4);
      }
    }
  }
}

TEST(InputBlock, CrossEntropyAttentionMatchesFiniteDifferences) {
  GraphSpec s;
  s.input("x", 3, 3);
  s.linear("q", "x", 2, false);
  s.linear("k", "x", 2, false);
  s.linear("v", "x", 3);
  s.attention("att", "q", "k", "v");
  s.activation("act", "att", Activation::kGELU);
  s.mean_pool("pool", "act");
  s.linear("head", "pool", 3);
  s.softmax_ce("loss", "head", 3);
  const Graph g = Graph::build(s);
  const auto p = testing::kink_free_point(g, 2, 41, 1e-3, 1.0);
  BatchHessian bh(g, p.theta, p.batch);
  // Some blocks here are ~1e-3 in norm; a wider step keeps the stencil's
  // roundoff below their scale.
  const FDConfig wide{1e-3, FDScheme::kMixed4pt, 1e-3};
  for (NodeId v : analysed_nodes(g)) {
    for (NodeId w : analysed_nodes(g)) {
      EXPECT_LT(block_err(bh.input_block(v, w), fd_block(g, p.theta, p.batch, v, w, wide)), 1e-4)
          << g.node(v).name << "," << g.node(w).name;
    }
  }
}

TEST(InputBlock, LossNodePairsAreZero) {
  const Graph g = Graph::build(testing::skip_spec(3, Activation::kTanh));
  const auto p = testing::kink_free_point(g, 1, 5);
  BatchHessian bh(g, p.theta, p.batch);
  for (const Node& v : g.nodes()) {
    EXPECT_EQ(frobenius_norm(bh.input_block(v.id, g.out())), 0.0);
    EXPECT_EQ(frobenius_norm(bh.input_block(g.out(), v.id)), 0.0);
  }
}

TEST(InputBlock, PredictionBaseIsLossHessian) {
  const Graph g = Graph::build(testing::chain_spec(1, 3, Activation::kTanh, 3, 4));
  const auto p = testing::kink_free_point(g, 1, 6);
  BatchHessian bh(g, p.theta, p.batch);
  EXPECT_EQ(bh.input_block(g.prediction(), g.prediction()), Matrix::identity(4) * 0.5);
}

TEST(InputBlock, DiamondSumMergeHasNoMixedTensorTerm) {
  const Graph g = Graph::build(testing::diamond_spec(3, Activation::kGELU, false));
  const auto p = testing::kink_free_point(g, 1, 7);
  BatchHessian bh(g, p.theta, p.batch);
  HessianEngine& e = bh.engine(0);
  const NodeId b1 = g.find("b1"), b2 = g.find("b2"), m = g.find("m");
  const Matrix expect = transpose_times(e.edge_jacobian(m, b1), e.input_block(m, m) * e.edge_jacobian(m, b2));
  EXPECT_EQ(bh.input_block(b1, b2), expect);
  EXPECT_EQ(tensor_mixed(g, e.forward_state(), m, b1, b2).frobenius(), 0.0);
}

TEST(InputBlock, ChainOneDirectionalProduct) {
  const Graph g = Graph::build(testing::chain_spec(3, 3, Activation::kSiLU));
  const auto p = testing::kink_free_point(g, 1, 8);
  BatchHessian bh(g, p.theta, p.batch);
  HessianEngine& e = bh.engine(0);
  const auto order = g.topological_order();
  for (std::size_t i = 0; i + 1 < order.size(); ++i) {
    for (std::size_t j = i + 1; j + 1 < order.size(); ++j) {
      const NodeId vi = order[i], vj = order[j];
      Matrix expect = e.input_block(vj, vj);
      for (std::size_t k = j; k > i; --k) expect = transpose_times(e.edge_jacobian(order[k], order[k - 1]), expect);
      EXPECT_LT(rel_err(e.input_block(vi, vj), expect, 1e-300), 1e-12)
          << g.node(vi).name << "," << g.node(vj).name;
    }
  }
}

TEST(InputBlock, CanonicalAndOneSidedAgree) {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const Graph g = Graph::build(smooth_spec(seed));
    const auto p = testing::kink_free_point(g, 1, 200 + seed);
    BatchHessian a(g, p.theta, p.batch, {Recursion::kCanonical, true});
    BatchHessian b(g, p.theta, p.batch, {Recursion::kOneSided, true});
    for (NodeId v : analysed_nodes(g)) {
      for (NodeId w : analysed_nodes(g)) {
        for (Component c : {Component::kFull, Component::kGaussNewton, Component::kTensor}) {
          EXPECT_LT(block_err(a.input_block(v, w, c), b.input_block(v, w, c)), 1e-10);
        }
      }
    }
  }
}

TEST(InputBlock, MemoizationIsBitIdentical) {
  for (Recursion r : {Recursion::kCanonical, Recursion::kOneSided}) {
    const Graph g = Graph::build(testing::diamond_spec(3, Activation::kTanh, true));
    const auto p = testing::kink_free_point(g, 2, 9);
    BatchHessian on(g, p.theta, p.batch, {r, true});
    BatchHessian off(g, p.theta, p.batch, {r, false});
    for (NodeId v : analysed_nodes(g)) {
      for (NodeId w : analysed_nodes(g)) {
        EXPECT_EQ(on.input_block(v, w), off.input_block(v, w));
        EXPECT_EQ(on.param_block(v, w), off.param_block(v, w));
      }
    }
  }
}

TEST(InputBlock, NoPairRecomputed) {
  const Graph g = Graph::build(testing::skip_spec(3, Activation::kGELU));
  const auto p = testing::kink_free_point(g, 1, 10);
  BatchHessian bh(g, p.theta, p.batch);
  HessianEngine& e = bh.engine(0);
  for (int pass = 0; pass < 2; ++pass) {
    for (const Node& v : g.nodes()) {
      for (const Node& w : g.nodes()) {
        e.input_block(v.id, w.id);
        EXPECT_TRUE(e.idle());
      }
    }
  }
  for (const Node& v : g.nodes()) {
    for (const Node& w : g.nodes()) EXPECT_EQ(e.computations(v.id, w.id, Component::kFull), 1u);
  }
}

TEST(InputBlock, SmoothBlocksAreTransposeSymmetric) {
  const Graph g = Graph::build(testing::attention_spec(3, 3));
  const auto p = testing::kink_free_point(g, 2, 11);
  BatchHessian bh(g, p.theta, p.batch);
  for (NodeId v : analysed_nodes(g)) {
    for (NodeId w : analysed_nodes(g)) {
      const Matrix hvw = bh.input_block(v, w), hwv = bh.input_block(w, v);
      const double scale = std::max({frobenius_norm(hvw), frobenius_norm(hwv), 1e-300});
      EXPECT_LT(frobenius_norm(hvw - hwv.transpose()) / scale, 1e-9);
      EXPECT_LT(frobenius_norm(symmetrize_pair(hvw, hwv) - hvw) / scale, 1e-9);
    }
  }
}

TEST(SymmetrizePair, TrivialCases) {
  const Matrix s = Matrix::from_rows({{2, 1}, {1, 3}});
  EXPECT_EQ(symmetrize_pair(s, s), s);
  const Matrix a = Matrix::from_rows({{0, 1}, {-1, 0}});
  EXPECT_EQ(symmetrize_pair(a, a), Matrix(2, 2));
  EXPECT_THROW(symmetrize_pair(Matrix(2, 3), Matrix(2, 3)), Error);
}

TEST(ParamBlock, ReluBlocksDifferFromGaussNewton) {
  const Graph g = Graph::build(testing::chain_spec(2, 3, Activation::kReLU));
  const auto p = testing::kink_free_point(g, 1, 12);
  BatchHessian bh(g, p.theta, p.batch);
  const Node& h0 = g.node(g.find("h0"));
  const Node& h1 = g.node(g.find("h1"));
  for (NodeId v : {h0.id, h1.id}) {
    for (NodeId w : {h0.id, h1.id}) EXPECT_EQ(bh.input_block(v, w, Component::kTensor), Matrix(3, 3));
  }
  const Matrix fd = fd_param_hessian(g, p.theta, p.batch);
  const Matrix block = bh.param_block(h0.id, h1.id);
  const Matrix gn = bh.param_block(h0.id, h1.id, Component::kGaussNewton);
  EXPECT_GT(frobenius_norm(block - gn), 1e-3 * frobenius_norm(block));
  EXPECT_LT(block_err(block, slice(fd, h0.param_offset, h0.param_count, h1.param_offset, h1.param_count)), 1e-4);
  // A Linear node is affine in its own weights, so its diagonal block has no
  // mixed term.
  HessianEngine& e = bh.engine(0);
  const Matrix d = jacobian_param(g, e.forward_state(), h1.id);
  EXPECT_LT(rel_err(bh.param_block(h1.id, h1.id), transpose_times(d, e.input_block(h1.id, h1.id) * d)), 1e-13);
  EXPECT_LT(block_err(bh.param_block(h1.id, h1.id),
                      slice(fd, h1.param_offset, h1.param_count, h1.param_offset, h1.param_count)), 1e-4);
}

TEST(ParamBlock, ZeroGradientReducesToJacobianSandwich) {
  const Graph g = Graph::build(testing::chain_spec(2, 3, Activation::kTanh));
  const auto p0 = testing::kink_free_point(g, 1, 13);
  Batch batch = p0.batch;
  batch[0].target = forward(g, p0.theta, batch[0]).values[g.prediction().index];
  BatchHessian bh(g, p0.theta, batch);
  HessianEngine& e = bh.engine(0);
  const auto params = g.param_nodes();
  for (NodeId v : params) {
    for (NodeId w : params) {
      const Matrix dv = jacobian_param(g, e.forward_state(), v);
      const Matrix dw = jacobian_param(g, e.forward_state(), w);
      EXPECT_LT(rel_err(bh.param_block(v, w), transpose_times(dv, e.input_block(v, w) * dw)), 1e-12);
    }
  }
}

TEST(ParamBlock, ParameterFreeNodeGivesEmptyBlock) {
  const Graph g = Graph::build(testing::chain_spec(1, 2, Activation::kTanh));
  const auto p = testing::kink_free_point(g, 1, 14);
  BatchHessian bh(g, p.theta, p.batch);
  const Matrix m = bh.param_block(g.find("a0"), g.find("h0"));
  EXPECT_EQ(m.rows() * m.cols(), 0u);
}

TEST(FullHessian, SingleLinearEqualsNormalEquations) {
  GraphSpec s;
  s.input("x", 2);
  s.linear("l", "x", 2);
  s.mse("loss", "l");
  const Graph g = Graph::build(s);
  const Vector theta = testing::random_theta(g, 15);
  const Batch batch = testing::random_batch(g, 4, 16);
  // L = mean_n (1/2) sum_r (w_r . x~_n - t_nr)^2, so each output row has
  // Hessian mean_n x~ x~^T.
  Matrix xx(3, 3);
  for (const Sample& x : batch) {
    const Vector xt{x.inputs[0][0], x.inputs[0][1], 1.0};
    xx += Matrix::outer(xt, xt) * (1.0 / static_cast<double>(batch.size()));
  }
  Matrix expect(6, 6);
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = 0; j < 3; ++j) expect(r * 3 + i, r * 3 + j) = xx(i, j);
    }
  }
  // Parameter layout is weights row-major then bias; permute expect into it.
  Matrix layout(6, 6);
  auto index = [](std::size_t r, std::size_t i) { return i < 2 ? r * 2 + i : 4 + r; };
  for (std::size_t r1 = 0; r1 < 2; ++r1) {
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t r2 = 0; r2 < 2; ++r2) {
        for (std::size_t j = 0; j < 3; ++j) layout(index(r1, i), index(r2, j)) = expect(r1 * 3 + i, r2 * 3 + j);
      }
    }
  }
  const Matrix h = assemble_full_hessian(g, theta, batch);
  EXPECT_LT(rel_err(h, layout), 1e-13);
  EXPECT_LT(rel_err(h, fd_param_hessian(g, theta, batch)), 1e-6);
}

TEST(FullHessian, RandomSmoothGraphsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Graph g = Graph::build(smooth_spec(seed));
    ASSERT_LE(g.param_count(), 200u);
    const auto p = testing::kink_free_point(g, 2, 300 + seed);
    const Matrix exact = assemble_full_hessian(g, p.theta, p.batch);
    EXPECT_LT(rel_err(exact, fd_param_hessian(g, p.theta, p.batch)), 1e-4) << "seed " << seed;
  }
}

TEST(FullHessian, TiedWeightsSumFourPairBlocks) {
  GraphSpec s;
  s.input("x", 3);
  s.linear("l1", "x", 3);
  s.activation("a1", "l1", Activation::kTanh);
  s.linear("l2", "a1", 3);
  s.activation("a2", "l2", Activation::kTanh);
  s.linear("head", "a2", 2);
  s.mse("loss", "head");
  s.share("tied", {"l1", "l2"});
  const Graph g = Graph::build(s);
  const auto p = testing::kink_free_point(g, 2, 17);
  BatchHessian bh(g, p.theta, p.batch);
  const NodeId l1 = g.find("l1"), l2 = g.find("l2");
  Matrix expect = bh.param_block(l1, l1);
  expect += bh.param_block(l1, l2);
  expect += bh.param_block(l2, l1);
  expect += bh.param_block(l2, l2);
  const Matrix full = assemble_full_hessian(bh);
  const Node& n = g.node(l1);
  EXPECT_LT(rel_err(slice(full, n.param_offset, n.param_count, n.param_offset, n.param_count), expect), 1e-13);
  EXPECT_LT(rel_err(full, fd_param_hessian(g, p.theta, p.batch)), 1e-4);
}

TEST(FullHessian, ReluChainIsSymmetric) {
  const Graph g = Graph::build(testing::chain_spec(3, 4, Activation::kReLU));
  const auto p = testing::kink_free_point(g, 3, 18);
  const Matrix h = assemble_full_hessian(g, p.theta, p.batch);
  EXPECT_LT(frobenius_norm(h - h.transpose()), 1e-9 * frobenius_norm(h));
  EXPECT_LT(rel_err(h, fd_param_hessian(g, p.theta, p.batch)), 1e-4);
}

TEST(FullHessian, GaussNewtonAndTensorSumToFull) {
  const Graph g = Graph::build(testing::diamond_spec(3, Activation::kSoftplus, true));
  const auto p = testing::kink_free_point(g, 2, 19);
  BatchHessian bh(g, p.theta, p.batch);
  const Matrix full = assemble_full_hessian(bh);
  Matrix sum = assemble_full_hessian(bh, {kDefaultAssemblyCap, false, Component::kGaussNewton});
  sum += assemble_full_hessian(bh, {kDefaultAssemblyCap, false, Component::kTensor});
  EXPECT_LT(rel_err(sum, full), 1e-12);
}

TEST(FullHessian, CapExceededPointsToHvp) {
  const Graph g = Graph::build(testing::chain_spec(2, 4, Activation::kTanh));
  const auto p = testing::kink_free_point(g, 1, 20);
  try {
    assemble_full_hessian(g, p.theta, p.batch, {10, false, Component::kFull});
    FAIL() << "expected cap error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kCapExceeded);
  }
}

TEST(AssembleInput, BlockLayoutMatchesBlocks) {
  const Graph g = Graph::build(testing::chain_spec(2, 3, Activation::kTanh));
  const auto p = testing::kink_free_point(g, 1, 22);
  BatchHessian bh(g, p.theta, p.batch);
  const std::vector<NodeId> nodes{g.find("h0"), g.find("a1")};
  const Matrix m = assemble_input_hessian(bh, nodes);
  EXPECT_EQ(slice(m, 0, 3, 3, 3), bh.input_block(nodes[0], nodes[1]));
  EXPECT_EQ(slice(m, 3, 3, 0, 3), bh.input_block(nodes[1], nodes[0]));
}

}  // namespace
}  // namespace hessdag
