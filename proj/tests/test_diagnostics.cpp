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

#include "hessdag/decomposition.hpp"
#include "hessdag/diagnostics.hpp"
#include "hessdag/error.hpp"
#include "test_support.hpp"

namespace hessdag {
namespace {

using testing::rel_err;

std::vector<NodeId> chain_nodes(const Graph& g) {
  std::vector<NodeId> out;
  for (NodeId id : g.topological_order()) {
    if (id != g.out()) out.push_back(id);
  }
  return out;
}

GraphSpec identity_chain(std::size_t layers, std::size_t width) {
  GraphSpec s;
  std::string prev = s.input("x", width);
  for (std::size_t i = 0; i < layers; ++i) prev = s.linear("l" + std::to_string(i), prev, width);
  s.mse("loss", prev);
  return s;
}

Vector identity_theta(const Graph& g, double diag) {
  Vector theta(g.param_count(), 0.0);
  for (NodeId id : g.param_nodes()) {
    const Node& n = g.node(id);
    for (std::size_t i = 0; i < n.cols; ++i) theta[n.param_offset + i * n.in_cols + i] = diag;
  }
  return theta;
}

TEST(Coupling, DiagonalIsOneAndClampApplies) {
  EXPECT_EQ(coupling(2.0, 2.0, 2.0).value, 1.0);
  EXPECT_EQ(coupling(5.0, 1.0, 4.0, true).value, 1.0);
  EXPECT_DOUBLE_EQ(coupling(5.0, 1.0, 4.0, false).value, 2.5);
  EXPECT_TRUE(coupling(1.0, 0.0, 4.0).degenerate);
}

TEST(Coupling, SelfPairsReportOne) {
  const Graph g = Graph::build(testing::chain_spec(2, 3, Activation::kTanh));
  const auto p = testing::kink_free_point(g, 2, 1);
  BatchHessian bh(g, p.theta, p.batch);
  for (const PairMetrics& m : pair_metrics(bh, g.measurement_nodes())) {
    if (m.v == m.w) EXPECT_EQ(m.coupling, 1.0);
  }
}

TEST(Coupling, ReluNetStaysBelowOneUnclamped) {
  const Graph g = Graph::build(testing::diamond_spec(4, Activation::kReLU, true));
  const auto p = testing::kink_free_point(g, 3, 2);
  BatchHessian bh(g, p.theta, p.batch);
  for (const PairMetrics& m : pair_metrics(bh, g.measurement_nodes(), {false, false, Component::kFull})) {
    if ((m.flags & kFlagCouplingDegenerate) == 0) EXPECT_LE(m.coupling, 1.0 + 1e-9);
  }
}

TEST(Coupling, InvariantUnderHomogeneousRescaling) {
  const Graph g = Graph::build(testing::chain_spec(2, 4, Activation::kReLU));
  const auto p = testing::kink_free_point(g, 2, 3);
  // Scale h0 (weights and bias) by 2 and h1's weights by 1/2; ReLU keeps the
  // function unchanged while a0 and h0 are scaled.
  Vector scaled = p.theta;
  const Node& h0 = g.node(g.find("h0"));
  const Node& h1 = g.node(g.find("h1"));
  for (std::size_t k = 0; k < h0.param_count; ++k) scaled[h0.param_offset + k] *= 2.0;
  for (std::size_t k = 0; k < h1.cols * h1.in_cols; ++k) scaled[h1.param_offset + k] *= 0.5;
  BatchHessian a(g, p.theta, p.batch), b(g, scaled, p.batch);
  EXPECT_NEAR(batch_loss(g, scaled, p.batch), batch_loss(g, p.theta, p.batch), 1e-12);
  const auto ma = pair_metrics(a, g.measurement_nodes(), {false, false, Component::kFull});
  const auto mb = pair_metrics(b, g.measurement_nodes(), {false, false, Component::kFull});
  ASSERT_EQ(ma.size(), mb.size());
  for (std::size_t k = 0; k < ma.size(); ++k) {
    EXPECT_NEAR(mb[k].coupling, ma[k].coupling, 1e-9 * ma[k].coupling)
        << g.node(ma[k].v).name << "," << g.node(ma[k].w).name;
  }
}

TEST(RankMetrics, TrivialBlocks) {
  const RankMetrics one = rank_metrics(Matrix::outer(Vector{1.0, 2.0, -1.0}, Vector{0.5, 3.0}));
  EXPECT_NEAR(one.stable_rank, 1.0, 1e-14);
  EXPECT_NEAR(one.d_eff, 1.0, 1e-14);
  EXPECT_EQ(one.rank, 1u);
  const RankMetrics id = rank_metrics(Matrix::identity(3));
  EXPECT_NEAR(id.stable_rank, 3.0, 1e-14);
  EXPECT_NEAR(id.d_eff, 3.0, 1e-14);
  EXPECT_TRUE(rank_metrics(Matrix(3, 2)).degenerate);
}

TEST(RankMetrics, InequalityChainOnRandomBlocks) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Matrix m = testing::random_matrix(5 + seed % 3, 4, seed);
    const RankMetrics r = rank_metrics(m);
    const Vector s = singular_values(m);
    double f = 0.0, nuc = 0.0;
    for (double x : s) {
      f += x * x;
      nuc += x;
    }
    EXPECT_NEAR(r.stable_rank, f / (s[0] * s[0]), 1e-12);
    EXPECT_NEAR(r.d_eff, nuc / s[0], 1e-12);
    EXPECT_GE(r.stable_rank, 1.0 - 1e-12);
    EXPECT_LE(r.stable_rank, static_cast<double>(r.rank) + 1e-12);
    EXPECT_LE(r.stable_rank, r.d_eff + 1e-12);
    EXPECT_LE(r.d_eff, std::sqrt(static_cast<double>(r.rank) * r.stable_rank) + 1e-12);
  }
}

TEST(Profile, CountsCoverAllPairs) {
  const Graph g = Graph::build(testing::skip_spec(3, Activation::kTanh));
  const auto p = testing::kink_free_point(g, 2, 4);
  BatchHessian bh(g, p.theta, p.batch);
  const auto nodes = g.measurement_nodes();
  const auto metrics = pair_metrics(bh, nodes);
  EXPECT_EQ(metrics.size(), nodes.size() * (nodes.size() + 1) / 2);
  const DistanceProfile prof = distance_profile(metrics, MetricKind::kResonance);
  std::size_t total = 0;
  for (const ProfileRow& r : prof.rows) total += r.count;
  EXPECT_EQ(total, metrics.size());
}

TEST(DecayFit, ExactExponential) {
  DistanceProfile p;
  for (std::size_t d = 1; d <= 6; ++d) p.rows.push_back({d, std::exp(-0.5 * static_cast<double>(d)), 0.0, 1});
  const DecayFit f = decay_fit(p);
  EXPECT_NEAR(f.slope, 0.5, 1e-9);
  EXPECT_TRUE(f.r_squared_defined);
  EXPECT_NEAR(f.r_squared, 1.0, 1e-12);
}

TEST(DecayFit, ConstantProfileHasUndefinedRSquared) {
  DistanceProfile p;
  for (std::size_t d = 1; d <= 4; ++d) p.rows.push_back({d, 2.0, 0.0, 3});
  const DecayFit f = decay_fit(p);
  EXPECT_EQ(f.slope, 0.0);
  EXPECT_FALSE(f.r_squared_defined);
}

TEST(DecayFit, NeedsTwoDistances) {
  DistanceProfile p;
  p.rows.push_back({1, 1.0, 0.0, 1});
  p.rows.push_back({2, 0.0, 0.0, 1});
  EXPECT_THROW(decay_fit(p), Error);
}

TEST(Spearman, RankCorrelation) {
  EXPECT_DOUBLE_EQ(spearman(Vector{1, 2, 3, 4}, Vector{10, 20, 35, 100}), 1.0);
  EXPECT_DOUBLE_EQ(spearman(Vector{1, 2, 3}, Vector{3, 2, 1}), -1.0);
}

TEST(Lyapunov, IdentityAndHalfChains) {
  const Graph g = Graph::build(identity_chain(4, 3));
  const Batch batch{Sample{{{0.1, 0.2, 0.3}}, {0.0, 0.0, 0.0}, 0}};
  const auto chain = chain_nodes(g);
  {
    BatchHessian bh(g, identity_theta(g, 1.0), batch);
    EXPECT_NEAR(rho_max(bh.engine(0)), 1.0, 1e-14);
    EXPECT_NEAR(lyapunov_exponent(bh.engine(0), chain, 0, 4), 0.0, 1e-14);
  }
  {
    BatchHessian bh(g, identity_theta(g, 0.5), batch);
    EXPECT_NEAR(lyapunov_exponent(bh.engine(0), chain, 0, 4), std::log(0.5), 1e-14);
  }
}

TEST(Lyapunov, Submultiplicative) {
  const Graph g = Graph::build(testing::chain_spec(4, 4, Activation::kTanh));
  const auto p = testing::kink_free_point(g, 1, 5);
  BatchHessian bh(g, p.theta, p.batch);
  HessianEngine& e = bh.engine(0);
  const auto chain = chain_nodes(g);
  for (std::size_t i = 0; i < chain.size(); ++i) {
    double bound = 1.0;
    for (std::size_t j = i + 1; j < chain.size(); ++j) {
      bound *= spectral_norm(e.edge_jacobian(chain[j], chain[j - 1]));
      EXPECT_LE(spectral_norm(chain_product(e, chain, i, j)), bound * (1 + 1e-12));
    }
  }
}

TEST(Lyapunov, RejectsBranchingSegment) {
  const Graph g = Graph::build(testing::skip_spec(3, Activation::kTanh));
  const auto p = testing::kink_free_point(g, 1, 6);
  BatchHessian bh(g, p.theta, p.batch);
  try {
    lyapunov_exponent(bh.engine(0), {g.find("v0"), g.find("l1"), g.find("v1")}, 0, 2);
    FAIL() << "expected not-a-chain";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNotAChain);
  }
}

TEST(ResonanceBound, HoldsOnChains) {
  const Graph g = Graph::build(testing::chain_spec(4, 4, Activation::kGELU));
  const auto p = testing::kink_free_point(g, 3, 7);
  BatchHessian bh(g, p.theta, p.batch);
  const auto chain = chain_nodes(g);
  for (std::size_t i = 0; i < chain.size(); ++i) {
    for (std::size_t j = i; j < chain.size(); ++j) EXPECT_TRUE(resonance_bound_check(bh, chain, i, j).ok);
  }
  BatchHessian single(g, p.theta, Batch{p.batch.front()});
  const BoundCheck same = resonance_bound_check(single, chain, 2, 2);
  EXPECT_NEAR(same.lhs, same.rhs, 1e-14 * same.rhs);
}

TEST(ResonanceBound, IdentityChainIsTight) {
  const Graph g = Graph::build(identity_chain(3, 2));
  BatchHessian bh(g, identity_theta(g, 1.0), Batch{Sample{{{0.1, 0.2}}, {1.0, 0.0}, 0}});
  const auto chain = chain_nodes(g);
  const BoundCheck b = resonance_bound_check(bh, chain, 0, 3);
  EXPECT_DOUBLE_EQ(b.lhs, b.rhs);
}

TEST(InteractionRadius, ClosedForm) {
  EXPECT_EQ(interaction_radius(1.0, 0.5, 1e-3, 1.0).k, 10u);
  EXPECT_TRUE(interaction_radius(1.0, 1.0, 1e-3, 1.0).no_decay);
  EXPECT_TRUE(interaction_radius(1.0, 1.7, 1e-3, 1.0).no_decay);
  const double eps = 1e-4;
  EXPECT_EQ(interaction_radius(1.0, 0.9, eps, 1.0).k,
            static_cast<std::size_t>(std::ceil(std::log(eps) / std::log(0.9))));
}

TEST(InteractionRadius, MeasuredOnContractingChain) {
  const Graph g = Graph::build(identity_chain(3, 2));
  BatchHessian bh(g, identity_theta(g, 0.9), Batch{Sample{{{0.1, 0.2}}, {1.0, 0.0}, 0}});
  const double c = frobenius_norm(bh.input_block(g.prediction(), g.prediction()));
  double min_diag = 1e300;
  for (NodeId v : g.measurement_nodes()) min_diag = std::min(min_diag, frobenius_norm(bh.input_block(v, v)));
  const InteractionRadius r = interaction_radius(bh, 1e-3);
  EXPECT_FALSE(r.no_decay);
  EXPECT_EQ(r.k, static_cast<std::size_t>(std::ceil(std::log(1e-3 * min_diag / c) / std::log(0.9))));
}

TEST(PathDecomposition, ChainHasOneTerm) {
  const Graph g = Graph::build(testing::chain_spec(3, 3, Activation::kTanh));
  const auto p = testing::kink_free_point(g, 2, 8);
  BatchHessian bh(g, p.theta, p.batch);
  const PathDecomposition d = path_decomposition_gn(bh, g.find("h0"), g.find("a1"));
  ASSERT_EQ(d.terms.size(), 1u);
  EXPECT_LT(d.residual, 1e-12);
}

TEST(PathDecomposition, DiamondBranchesMeetOnce) {
  const Graph g = Graph::build(testing::diamond_spec(3, Activation::kSiLU, false));
  const auto p = testing::kink_free_point(g, 2, 9);
  BatchHessian bh(g, p.theta, p.batch);
  const PathDecomposition d = path_decomposition_gn(bh, g.find("b1"), g.find("b2"));
  ASSERT_EQ(d.terms.size(), 1u);
  EXPECT_EQ(d.terms[0].c, g.prediction());
  EXPECT_LT(d.residual, 1e-8);
  const PathDecomposition stem = path_decomposition_gn(bh, g.find("s"), g.find("s"));
  EXPECT_EQ(stem.terms.size(), 4u);
  EXPECT_LT(stem.residual, 1e-8);
}

TEST(PathDecomposition, SkipGraphTwoPaths) {
  const Graph g = Graph::build(testing::skip_spec(3, Activation::kGELU));
  const auto p = testing::kink_free_point(g, 2, 10);
  BatchHessian bh(g, p.theta, p.batch);
  const PathDecomposition d = path_decomposition_gn(bh, g.find("v0"), g.prediction());
  EXPECT_EQ(d.terms.size(), 2u);
  EXPECT_LT(d.residual, 1e-8);
  EXPECT_LT(rel_err(d.total, gn_block_unrolled(bh, g.find("v0"), g.prediction())), 1e-8);
}

TEST(PathDecomposition, OverflowFlag) {
  const Graph g = Graph::build(testing::skip_spec(3, Activation::kGELU));
  const auto p = testing::kink_free_point(g, 1, 11);
  BatchHessian bh(g, p.theta, p.batch);
  EXPECT_TRUE(path_decomposition_gn(bh, g.find("x"), g.find("x"), 3).overflow);
}

TEST(SkipStep, Examples) {
  EXPECT_EQ(optimal_skip_step(12, 3).k, 4u);
  EXPECT_EQ(optimal_skip_step(8, 8).k, 1u);
  const SkipStep s = optimal_skip_step(3, 5);
  EXPECT_EQ(s.k, 1u);
  EXPECT_TRUE(s.clamped);
  EXPECT_THROW(optimal_skip_step(4, 0), Error);
}

TEST(LowRankBlock, BottleneckBlockHasExactRank) {
  GraphSpec s;
  s.input("x", 4);
  s.linear("h0", "x", 6);
  s.activation("a0", "h0", Activation::kTanh);
  s.linear("neck", "a0", 2);
  s.activation("a1", "neck", Activation::kTanh);
  s.linear("h2", "a1", 6);
  s.activation("a2", "h2", Activation::kTanh);
  s.linear("head", "a2", 3);
  s.mse("loss", "head");
  const Graph g = Graph::build(s);
  const auto p = testing::kink_free_point(g, 1, 12);
  BatchHessian bh(g, p.theta, p.batch);
  const Matrix block = gn_block_recursive(bh, g.find("h0"), g.find("a2"));
  const LowRankBlock lr = low_rank_block(block, 2);
  EXPECT_LT(lr.error, 1e-8);
  EXPECT_NEAR(lr.error, lr.tail_error, 1e-8);
}

TEST(LowRankBlock, ErrorMatchesTailAndDecreases) {
  const Matrix m = testing::random_matrix(6, 5, 13);
  double prev = 1e300;
  for (std::size_t r = 1; r <= 5; ++r) {
    const LowRankBlock lr = low_rank_block(m, r);
    EXPECT_NEAR(lr.error, lr.tail_error, 1e-8);
    EXPECT_LE(lr.error, prev + 1e-12);
    prev = lr.error;
  }
  EXPECT_LT(low_rank_block(m, 5).error, 1e-12);
  EXPECT_THROW(low_rank_block(m, 6), Error);
}

}  // namespace
}  // namespace hessdag
