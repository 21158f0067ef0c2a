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

// Metrics over Hessian blocks: resonance, coupling, stable rank, effective
// dimension, distance profiles and decay fits, Lyapunov statistics, path
// decomposition and low-rank factorization.

#ifndef HESSDAG_DIAGNOSTICS_HPP_
#define HESSDAG_DIAGNOSTICS_HPP_

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "hessdag/graph.hpp"
#include "hessdag/hessian.hpp"
#include "hessdag/linalg.hpp"

namespace hessdag {

// Bit flags on PairMetrics.
enum MetricFlag : unsigned {
  kFlagNone = 0,
  kFlagCouplingDegenerate = 1u << 0,  // a diagonal resonance is zero
  kFlagRankDegenerate = 1u << 1,      // block is zero
  kFlagGapDegenerate = 1u << 2,       // GN part is zero
};

std::string flag_string(unsigned flags);

double resonance(const Matrix& block);

struct Coupling {
  double value = 0.0;
  bool degenerate = false;
};
// R(v,w) / sqrt(R(v,v) R(w,w)); with clamp the result is at most 1.
Coupling coupling(double r_vw, double r_vv, double r_ww, bool clamp = true);

struct RankMetrics {
  double stable_rank = 0.0;  // ||H||_F^2 / ||H||_2^2
  double d_eff = 0.0;        // ||H||_* / ||H||_2
  std::size_t rank = 0;      // singular values above rank_tol * sigma_1
  bool degenerate = false;
};
RankMetrics rank_metrics(const Matrix& block, double rank_tol = 1e-10);

struct PairMetrics {
  NodeId v, w;
  std::size_t dist = 0;
  double resonance = 0.0;
  double coupling = 0.0;
  double stable_rank = 0.0;
  double d_eff = 0.0;
  double gn_gap = 0.0;
  unsigned flags = kFlagNone;
};

struct MetricOptions {
  bool clamp_coupling = true;
  // Stable rank and d_eff per sample, then averaged, instead of on the
  // batch-mean block.
  bool per_sample_rank = false;
  Component component = Component::kFull;
};

// Metrics for every unordered pair (v <= w in the given order) of nodes.
std::vector<PairMetrics> pair_metrics(BatchHessian& h, const std::vector<NodeId>& nodes,
                                      const MetricOptions& options = {});

enum class MetricKind { kResonance, kCoupling, kStableRank, kDEff, kGnGap };
const char* metric_name(MetricKind k);
double metric_value(const PairMetrics& m, MetricKind k);

struct ProfileRow {
  std::size_t dist = 0;
  double mean = 0.0;
  double std = 0.0;
  std::size_t count = 0;
};
struct DistanceProfile {
  MetricKind metric = MetricKind::kResonance;
  std::vector<ProfileRow> rows;  // ascending distance, non-empty bins only
};

// Pairs flagged degenerate for the metric are left out of the means.
DistanceProfile distance_profile(const std::vector<PairMetrics>& metrics, MetricKind kind);

struct DecayFit {
  double slope = 0.0;  // b in log R = a - b d
  double intercept = 0.0;
  double r_squared = 0.0;
  bool r_squared_defined = false;
  std::size_t points = 0;
};
// Least squares of log(mean) on distance over rows with dist >= min_dist
// and a positive mean. Throws kInsufficientData for fewer than 2 distances.
DecayFit decay_fit(const DistanceProfile& profile, std::size_t min_dist = 1);

// Ordinary least squares y = a + b x with R^2.
struct LinearFit {
  double intercept = 0.0;
  double slope = 0.0;
  double r_squared = 0.0;
  bool r_squared_defined = false;
};
LinearFit linear_fit(std::span<const double> x, std::span<const double> y);

// Spearman rank correlation (average ranks on ties).
double spearman(std::span<const double> x, std::span<const double> y);

// max over non-loss edges of ||D_{u<-v}||_2 for one sample.
double rho_max(HessianEngine& e);
// Maximum out-degree over non-loss nodes.
std::size_t max_out_degree(const Graph& g);

// Chain segments: consecutive nodes joined by edges, each with one child.
void require_chain(const Graph& g, const std::vector<NodeId>& chain);
// Pi_{j<-i} = D_{j<-j-1} ... D_{i+1<-i}
Matrix chain_product(HessianEngine& e, const std::vector<NodeId>& chain, std::size_t i,
                     std::size_t j);
// (1/m) log ||Pi_{i+m<-i}||_2
double lyapunov_exponent(HessianEngine& e, const std::vector<NodeId>& chain, std::size_t i,
                         std::size_t m);

struct BoundCheck {
  double lhs = 0.0;
  double rhs = 0.0;
  bool ok = false;
};
// R(v_i, v_j) against ||H^f_{v_j,v_j}||_F ||Pi_{j<-i}||_2 (per-sample right
// side, batch-averaged).
BoundCheck resonance_bound_check(BatchHessian& h, const std::vector<NodeId>& chain,
                                 std::size_t i, std::size_t j);

struct InteractionRadius {
  std::size_t k = 0;
  bool no_decay = false;
};
// Smallest k with c * s_rho^k < eps * min_diag.
InteractionRadius interaction_radius(double c, double s_rho, double eps, double min_diag);
// Same, with c = ||grad^2 l||_F, s = max out-degree, rho = rho_max and the
// smallest diagonal resonance over the measurement nodes, all batch means.
InteractionRadius interaction_radius(BatchHessian& h, double eps);

struct PathContribution {
  NodeId c;
  std::vector<NodeId> path_v;
  std::vector<NodeId> path_w;
  Matrix contribution;
};
struct PathDecomposition {
  std::vector<PathContribution> terms;
  Matrix total;     // sum of the terms
  double residual = 0.0;  // ||total - GN block||_F / ||GN block||_F
  bool overflow = false;
};
// GN block of (v, w) split over path pairs into the prediction node.
PathDecomposition path_decomposition_gn(BatchHessian& h, NodeId v, NodeId w,
                                        std::size_t cap = 4096);

struct SkipStep {
  std::size_t k = 0;
  bool clamped = false;
};
SkipStep optimal_skip_step(std::size_t layers, std::size_t budget);

struct LowRankBlock {
  Svd factors;
  double error = 0.0;       // ||H - U S V^T||_F
  double tail_error = 0.0;  // sqrt(sum_{i>r} sigma_i^2)
};
LowRankBlock low_rank_block(const Matrix& block, std::size_t r);

}  // namespace hessdag

#endif  // HESSDAG_DIAGNOSTICS_HPP_
