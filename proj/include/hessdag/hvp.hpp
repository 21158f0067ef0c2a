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

// Hessian-vector products by forward-over-reverse propagation and the
// stochastic estimators built on them.

#ifndef HESSDAG_HVP_HPP_
#define HESSDAG_HVP_HPP_

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "hessdag/calculus.hpp"
#include "hessdag/graph.hpp"
#include "hessdag/hessian.hpp"
#include "hessdag/linalg.hpp"
#include "hessdag/rng.hpp"

namespace hessdag {

struct TangentState {
  NodeVectors r;  // r_v, aligned with f_v
};

// r_v = sum_{p in Pa(v)} D_{v<-p} r_p + D_v^theta t_v + s_v, with s the
// offset tangents at the source nodes (empty entries are zero).
TangentState tangent_forward(const Graph& g, const ForwardState& fs, const NodeVectors& sources,
                             std::span<const double> param_tangent = {});

// Directional derivative of the backward pass along a tangent state.
// input[v] = sum_w H^f_{v,w} s_w (or its GN / tensor part) and param is the
// matching parametric product when a parameter tangent was supplied.
struct Costate {
  NodeVectors input;
  Vector param;
};
Costate curvature_costate(const Graph& g, const ForwardState& fs, const BackwardState& bs,
                          const TangentState& t, std::span<const double> param_tangent = {},
                          Component c = Component::kFull, bool want_param = false);

// HVP_v(r) = sum_w H^f_{v,w} r_w for one sample, without forming blocks.
Vector block_hvp(const Graph& g, const ForwardState& fs, const BackwardState& bs, NodeId v,
                 const NodeVectors& sources, Component c = Component::kFull);

// Batch-mean parametric Hessian times r.
Vector param_hvp(const Graph& g, const std::vector<Evaluation>& evals, std::span<const double> r);
Vector param_hvp(const Graph& g, std::span<const double> theta, const Batch& batch,
                 std::span<const double> r);

// A linear map R^in -> R^out given by products only.
struct LinearOperator {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  std::function<Vector(std::span<const double>)> apply;
};

// z -> H_{v,w} z as a batch mean, via block_hvp with a single source at w.
LinearOperator pair_operator(const Graph& g, const std::vector<Evaluation>& evals, NodeId v,
                             NodeId w, Component c = Component::kFull);

// (1/m) sum_k ||op(z_k)||^2 with z_k = stream.probe(k).
double hutchinson_frob_sq(const LinearOperator& op, std::size_t m, const ProbeStream& stream);

inline constexpr std::size_t kDefaultPowerIters = 50;
inline constexpr double kStableRankFloor = 1e-24;

// Power iteration on op^T op using op and its transpose; returns sigma_1^2.
double power_sigma_sq(const LinearOperator& op, const LinearOperator& op_t, std::size_t iters,
                      const ProbeStream& stream);

struct StableRankEstimate {
  double value = 0.0;
  bool degenerate = false;
  double frob_sq = 0.0;
  double sigma_sq = 0.0;
  double std_error = 0.0;  // of value, from the probe spread
};

StableRankEstimate stochastic_stable_rank(const LinearOperator& op, const LinearOperator& op_t,
                                          std::size_t m, std::size_t iters,
                                          const ProbeStream& stream,
                                          double floor = kStableRankFloor);
StableRankEstimate stochastic_stable_rank(const Graph& g, const std::vector<Evaluation>& evals,
                                          NodeId v, NodeId w, std::size_t m,
                                          std::size_t iters, const ProbeStream& stream,
                                          double floor = kStableRankFloor);

// Tensor and GN norms estimated from the same probes.
double stochastic_gn_gap(const LinearOperator& full, const LinearOperator& gn, std::size_t m,
                         const ProbeStream& stream, double eps = 1e-12);
double stochastic_gn_gap(const Graph& g, const std::vector<Evaluation>& evals, NodeId v,
                         NodeId w, std::size_t m, const ProbeStream& stream,
                         double eps = 1e-12);

}  // namespace hessdag

#endif  // HESSDAG_HVP_HPP_
