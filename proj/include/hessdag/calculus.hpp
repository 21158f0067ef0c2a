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

// Forward evaluation, backpropagation and exact first and second derivatives
// of every node kind. Piecewise-linear activations use sigma'(0) = sigma''(0)
// = 0.

#ifndef HESSDAG_CALCULUS_HPP_
#define HESSDAG_CALCULUS_HPP_

#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include "hessdag/graph.hpp"
#include "hessdag/linalg.hpp"

namespace hessdag {

struct Sample {
  std::vector<Vector> inputs;  // one entry per Input node, in insertion order
  Vector target;               // regression target for LossMse
  std::size_t label = 0;       // class index for LossSoftmaxCe
};

using Batch = std::vector<Sample>;

// Per-node vectors indexed by NodeId::index. An empty entry means zero.
using NodeVectors = std::vector<Vector>;

struct ForwardState {
  std::shared_ptr<const Vector> theta;
  NodeVectors values;          // f_v, row-major for sequence nodes
  std::vector<Matrix> attention;  // softmax weights of attention nodes
  Vector probabilities;        // class probabilities at a cross-entropy loss
  Vector target;
  std::size_t label = 0;
  double loss = 0.0;

  std::span<const double> params(const Node& node) const {
    return {theta->data() + node.param_offset, node.param_count};
  }
};

struct BackwardState {
  NodeVectors grads;  // delta_v = dL/df_v
};

struct Evaluation {
  ForwardState fs;
  BackwardState bs;
};

// Scalar activation and its first two derivatives.
double activation_value(Activation fn, double z);
double activation_d1(Activation fn, double z);
double activation_d2(Activation fn, double z);

// Additive offsets are injected after each node function (f_v = g_v + eps_v).
ForwardState forward(const Graph& g, std::shared_ptr<const Vector> theta, const Sample& x,
                     const NodeVectors* offsets = nullptr);
ForwardState forward(const Graph& g, std::span<const double> theta, const Sample& x,
                     const NodeVectors* offsets = nullptr);
BackwardState backward(const Graph& g, const ForwardState& fs);
// Re-evaluates g_u from the parent values in fs, optionally replacing some
// parents and the node's parameters. Used by finite-difference checks.
Vector evaluate_node(const Graph& g, const ForwardState& fs, NodeId u,
                     const NodeVectors* parent_override = nullptr,
                     std::span<const double> params = {});
Evaluation evaluate(const Graph& g, std::shared_ptr<const Vector> theta, const Sample& x);
std::vector<Evaluation> evaluate_batch(const Graph& g, std::span<const double> theta,
                                       const Batch& batch);

// dL/dtheta for one sample, shared slices accumulated.
Vector param_gradient(const Graph& g, const ForwardState& fs, const BackwardState& bs);
double batch_loss(const Graph& g, std::span<const double> theta, const Batch& batch);
Vector batch_gradient(const Graph& g, std::span<const double> theta, const Batch& batch);

// Dense derivatives. Throw kInvalidArgument for non-edges and nodes without
// parameters.
Matrix jacobian_edge(const Graph& g, const ForwardState& fs, NodeId u, NodeId v);
Matrix jacobian_param(const Graph& g, const ForwardState& fs, NodeId v);
Tensor3 tensor_input(const Graph& g, const ForwardState& fs, NodeId u, NodeId v);
Tensor3 tensor_mixed(const Graph& g, const ForwardState& fs, NodeId u, NodeId v, NodeId w);
Tensor3 tensor_param(const Graph& g, const ForwardState& fs, NodeId v);
// d_u x d_v x p_u: d^2 f_u / (df_v dtheta_u) for a parent v of u.
Tensor3 tensor_input_param(const Graph& g, const ForwardState& fs, NodeId u, NodeId v);

// Contractions of the second-derivative tensors of node u with a weight
// vector over its outputs, sum_i weight_i * d^2 f_{u,i} / (...).
// Parents v, w may coincide. Result d_v x d_w.
Matrix contract_input(const Graph& g, const ForwardState& fs, NodeId u, NodeId v, NodeId w,
                      std::span<const double> weight);
// d_v x p_u
Matrix contract_input_param(const Graph& g, const ForwardState& fs, NodeId u, NodeId v,
                            std::span<const double> weight);
// p_u x p_u
Matrix contract_param(const Graph& g, const ForwardState& fs, NodeId u,
                      std::span<const double> weight);
// True when node u has a nonzero second derivative with respect to its inputs.
bool has_input_curvature(const Graph& g, NodeId u);

// Hessian of the loss with respect to the prediction node.
Matrix loss_hessian(const Graph& g, const ForwardState& fs);

// Node-local linear maps. Tangents and accumulators are NodeVectors indexed by
// node; only the parents of u are read or written.
Vector local_jvp(const Graph& g, const ForwardState& fs, NodeId u, const NodeVectors& tangents,
                 std::span<const double> param_tangent);
void local_vjp(const Graph& g, const ForwardState& fs, NodeId u, std::span<const double> delta,
               NodeVectors& parent_accum, std::span<double> param_accum);
// With phi = <weight, g_u(f_Pa, theta_u)>, adds the directional derivative of
// grad phi along (tangents, param_tangent) to the parent and parameter
// accumulators.
void local_second(const Graph& g, const ForwardState& fs, NodeId u,
                  std::span<const double> weight, const NodeVectors& tangents,
                  std::span<const double> param_tangent, NodeVectors& parent_accum,
                  std::span<double> param_accum);

}  // namespace hessdag

#endif  // HESSDAG_CALCULUS_HPP_
