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

#include "hessdag/hvp.hpp"

#include <cmath>

#include "hessdag/error.hpp"

namespace hessdag {
namespace {

std::span<const double> param_slice(std::span<const double> theta, const Node& n) {
  if (theta.empty() || !n.has_params()) return {};
  return theta.subspan(n.param_offset, n.param_count);
}

std::span<double> param_slice(Vector& theta, const Node& n) {
  if (theta.empty() || !n.has_params()) return {};
  return std::span<double>(theta).subspan(n.param_offset, n.param_count);
}

bool is_zero(const Vector& v) { return v.empty(); }

// ||op(z_k)||^2 for k = 0..m-1.
Vector probe_norms(const LinearOperator& op, std::size_t m, const ProbeStream& stream) {
  Vector out(m);
  for (std::size_t k = 0; k < m; ++k) {
    const Vector y = op.apply(stream.probe(k, op.in_dim));
    out[k] = dot(y, y);
  }
  return out;
}

double mean(const Vector& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

TangentState tangent_forward(const Graph& g, const ForwardState& fs, const NodeVectors& sources,
                             std::span<const double> param_tangent) {
  if (!param_tangent.empty() && param_tangent.size() != g.param_count()) {
    throw Error(ErrorCode::kDimensionMismatch, "tangent_forward: parameter tangent length");
  }
  TangentState t;
  t.r.resize(g.size());
  for (NodeId id : g.topological_order()) {
    const Node& n = g.node(id);
    Vector r = n.kind == OpKind::kInput ? Vector(n.dim(), 0.0)
                                        : local_jvp(g, fs, id, t.r, param_slice(param_tangent, n));
    if (id.index < sources.size() && !sources[id.index].empty()) {
      if (sources[id.index].size() != n.dim()) {
        throw Error(ErrorCode::kDimensionMismatch, "tangent_forward: source at '" + n.name + "'");
      }
      axpy(1.0, sources[id.index], r);
    }
    t.r[id.index] = std::move(r);
  }
  return t;
}

Costate curvature_costate(const Graph& g, const ForwardState& fs, const BackwardState& bs,
                          const TangentState& t, std::span<const double> param_tangent,
                          Component c, bool want_param) {
  Costate out;
  out.input.resize(g.size());
  if (want_param) out.param.assign(g.param_count(), 0.0);
  const bool loss_term = c != Component::kTensor;
  const bool node_terms = c != Component::kGaussNewton;
  const auto order = g.topological_order();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const Node& n = g.node(*it);
    std::span<double> paccum = param_slice(out.param, n);
    if (!is_zero(out.input[n.id.index])) {
      local_vjp(g, fs, n.id, out.input[n.id.index], out.input, paccum);
    }
    const bool is_loss_node = n.id == g.out();
    if ((is_loss_node && loss_term) || (!is_loss_node && node_terms)) {
      const Vector& weight = bs.grads[n.id.index];
      if (!weight.empty()) {
        local_second(g, fs, n.id, weight, t.r, param_slice(param_tangent, n), out.input, paccum);
      }
    }
  }
  return out;
}

Vector block_hvp(const Graph& g, const ForwardState& fs, const BackwardState& bs, NodeId v,
                 const NodeVectors& sources, Component c) {
  const TangentState t = tangent_forward(g, fs, sources);
  Costate cs = curvature_costate(g, fs, bs, t, {}, c, false);
  Vector& out = cs.input[v.index];
  if (out.empty()) out.assign(g.node(v).dim(), 0.0);
  return std::move(out);
}

Vector param_hvp(const Graph& g, const std::vector<Evaluation>& evals, std::span<const double> r) {
  if (r.size() != g.param_count()) {
    throw Error(ErrorCode::kDimensionMismatch, "param_hvp: expected " + std::to_string(g.param_count()) +
                                                   " entries, got " + std::to_string(r.size()));
  }
  if (evals.empty()) throw Error(ErrorCode::kInsufficientData, "param_hvp: empty batch");
  Vector out(g.param_count(), 0.0);
  const NodeVectors none;
  for (const Evaluation& e : evals) {
    const TangentState t = tangent_forward(g, e.fs, none, r);
    const Costate cs = curvature_costate(g, e.fs, e.bs, t, r, Component::kFull, true);
    axpy(1.0 / static_cast<double>(evals.size()), cs.param, out);
  }
  return out;
}

Vector param_hvp(const Graph& g, std::span<const double> theta, const Batch& batch,
                 std::span<const double> r) {
  return param_hvp(g, evaluate_batch(g, theta, batch), r);
}

LinearOperator pair_operator(const Graph& g, const std::vector<Evaluation>& evals, NodeId v,
                             NodeId w, Component c) {
  LinearOperator op;
  op.in_dim = g.node(w).dim();
  op.out_dim = g.node(v).dim();
  op.apply = [&g, &evals, v, w, c](std::span<const double> z) {
    NodeVectors sources(g.size());
    sources[w.index].assign(z.begin(), z.end());
    Vector out(g.node(v).dim(), 0.0);
    for (const Evaluation& e : evals) {
      axpy(1.0 / static_cast<double>(evals.size()), block_hvp(g, e.fs, e.bs, v, sources, c), out);
    }
    return out;
  };
  return op;
}

double hutchinson_frob_sq(const LinearOperator& op, std::size_t m, const ProbeStream& stream) {
  if (m == 0) throw Error(ErrorCode::kInvalidArgument, "hutchinson_frob_sq: need at least one probe");
  return mean(probe_norms(op, m, stream));
}

double power_sigma_sq(const LinearOperator& op, const LinearOperator& op_t, std::size_t iters,
                      const ProbeStream& stream) {
  Vector x = stream.start_vector(0, op.in_dim);
  double n = norm2(x);
  if (n == 0.0) return 0.0;
  for (double& xi : x) xi /= n;
  for (std::size_t k = 0; k < iters; ++k) {
    Vector y = op_t.apply(op.apply(x));
    n = norm2(y);
    if (n == 0.0) return 0.0;
    for (double& yi : y) yi /= n;
    x = std::move(y);
  }
  const Vector y = op.apply(x);
  return dot(y, y);
}

StableRankEstimate stochastic_stable_rank(const LinearOperator& op, const LinearOperator& op_t,
                                          std::size_t m, std::size_t iters,
                                          const ProbeStream& stream, double floor) {
  if (m == 0) throw Error(ErrorCode::kInvalidArgument, "stochastic_stable_rank: need at least one probe");
  StableRankEstimate est;
  est.sigma_sq = power_sigma_sq(op, op_t, iters, stream);
  if (est.sigma_sq < floor) {
    est.degenerate = true;
    return est;
  }
  const Vector samples = probe_norms(op, m, stream);
  est.frob_sq = mean(samples);
  double var = 0.0;
  for (double s : samples) var += (s - est.frob_sq) * (s - est.frob_sq);
  var = m > 1 ? var / static_cast<double>(m - 1) : 0.0;
  est.value = est.frob_sq / est.sigma_sq;
  est.std_error = std::sqrt(var / static_cast<double>(m)) / est.sigma_sq;
  return est;
}

StableRankEstimate stochastic_stable_rank(const Graph& g, const std::vector<Evaluation>& evals,
                                          NodeId v, NodeId w, std::size_t m,
                                          std::size_t iters, const ProbeStream& stream,
                                          double floor) {
  return stochastic_stable_rank(pair_operator(g, evals, v, w), pair_operator(g, evals, w, v), m, iters,
                                stream, floor);
}

double stochastic_gn_gap(const LinearOperator& full, const LinearOperator& gn, std::size_t m,
                         const ProbeStream& stream, double eps) {
  if (m == 0) throw Error(ErrorCode::kInvalidArgument, "stochastic_gn_gap: need at least one probe");
  double tensor_sq = 0.0, gn_sq = 0.0;
  for (std::size_t k = 0; k < m; ++k) {
    const Vector z = stream.probe(k, full.in_dim);
    const Vector yg = gn.apply(z);
    Vector yt = full.apply(z);
    axpy(-1.0, yg, yt);
    tensor_sq += dot(yt, yt);
    gn_sq += dot(yg, yg);
  }
  const double inv = 1.0 / static_cast<double>(m);
  return std::sqrt(tensor_sq * inv) / (std::sqrt(gn_sq * inv) + eps);
}

double stochastic_gn_gap(const Graph& g, const std::vector<Evaluation>& evals, NodeId v,
                         NodeId w, std::size_t m, const ProbeStream& stream, double eps) {
  return stochastic_gn_gap(pair_operator(g, evals, v, w, Component::kFull),
                           pair_operator(g, evals, v, w, Component::kGaussNewton), m, stream, eps);
}

}  // namespace hessdag
