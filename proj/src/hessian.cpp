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

#include "hessdag/hessian.hpp"

#include <string>

#include "hessdag/error.hpp"

namespace hessdag {
namespace {

void add_block(Matrix& dst, std::size_t row0, std::size_t col0, const Matrix& src) {
  for (std::size_t i = 0; i < src.rows(); ++i) {
    for (std::size_t j = 0; j < src.cols(); ++j) dst(row0 + i, col0 + j) += src(i, j);
  }
}

}  // namespace

HessianEngine::HessianEngine(const Graph& g, const ForwardState& fs, const BackwardState& bs,
                             EngineOptions options)
    : g_(g), fs_(fs), bs_(bs), options_(options) {}

Matrix HessianEngine::zero(NodeId v, NodeId w) const {
  return Matrix(g_.node(v).dim(), g_.node(w).dim());
}

const Matrix& HessianEngine::edge_jacobian(NodeId u, NodeId v) {
  auto key = std::make_pair(u.index, v.index);
  auto it = edges_.find(key);
  if (it == edges_.end()) it = edges_.emplace(key, jacobian_edge(g_, fs_, u, v)).first;
  return it->second;
}

const Matrix& HessianEngine::total_jacobian(NodeId p, NodeId w) {
  auto key = std::make_pair(p.index, w.index);
  auto it = totals_.find(key);
  if (it != totals_.end()) return it->second;
  Matrix j;
  if (p == w) {
    j = Matrix::identity(g_.node(p).dim());
  } else {
    j = zero(p, w);
    if (g_.is_ancestor_or_self(w, p)) {
      for (NodeId q : g_.node(p).parents) {
        if (!g_.is_ancestor_or_self(w, q)) continue;
        j += edge_jacobian(p, q) * total_jacobian(q, w);
      }
    }
  }
  return totals_.emplace(key, std::move(j)).first->second;
}

const Matrix& HessianEngine::loss_hessian() {
  if (!loss_hessian_) loss_hessian_ = std::make_unique<Matrix>(hessdag::loss_hessian(g_, fs_));
  return *loss_hessian_;
}

const Matrix& HessianEngine::contraction(NodeId u, NodeId v, NodeId p) {
  Key key{u.index, v.index, static_cast<int>(p.index)};
  auto it = contractions_.find(key);
  if (it == contractions_.end()) {
    it = contractions_.emplace(key, contract_input(g_, fs_, u, v, p, bs_.grads[u.index])).first;
  }
  return it->second;
}

const Matrix& HessianEngine::param_jacobian(NodeId v) {
  auto it = param_jacobians_.find(v.index);
  if (it == param_jacobians_.end()) it = param_jacobians_.emplace(v.index, jacobian_param(g_, fs_, v)).first;
  return it->second;
}

Matrix HessianEngine::tensor_source(NodeId v, NodeId w) {
  Matrix acc = zero(v, w);
  for (NodeId u : g_.node(v).children) {
    if (u == g_.out() || !has_input_curvature(g_, u)) continue;
    for (NodeId p : g_.node(u).parents) {
      if (!g_.is_ancestor_or_self(w, p)) continue;
      if (p == w) {
        acc += contraction(u, v, p);
      } else {
        acc += contraction(u, v, p) * total_jacobian(p, w);
      }
    }
  }
  return acc;
}

Matrix HessianEngine::input_block(NodeId v, NodeId w, Component c) {
  if (v.index >= g_.size() || w.index >= g_.size()) {
    throw Error(ErrorCode::kUnknownNode, "input_block: node out of range");
  }
  const Key key{v.index, w.index, static_cast<int>(c)};
  if (options_.memoize) {
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
  }
  if (!in_progress_.insert(key).second) {
    throw Error(ErrorCode::kInternal, "recursion re-entered pair (" + g_.node(v).name + ", " +
                                          g_.node(w).name + ")");
  }
  Matrix result = compute(v, w, c);
  in_progress_.erase(key);
  ++counts_[key];
  if (options_.memoize) cache_.emplace(key, result);
  return result;
}

Matrix HessianEngine::compute(NodeId v, NodeId w, Component c) {
  if (v == g_.out() || w == g_.out()) return zero(v, w);
  return options_.recursion == Recursion::kCanonical ? canonical(v, w, c) : one_sided(v, w, c);
}

Matrix HessianEngine::canonical(NodeId v, NodeId w, Component c) {
  const NodeId pred = g_.prediction();
  if (v == pred && w == pred) return c == Component::kTensor ? zero(v, w) : loss_hessian();
  Matrix acc = zero(v, w);
  if (w == pred) {
    for (NodeId u : g_.node(v).children) {
      acc += transpose_times(edge_jacobian(u, v), input_block(u, pred, c));
    }
    return acc;
  }
  if (v == pred) {
    for (NodeId u : g_.node(w).children) acc += input_block(pred, u, c) * edge_jacobian(u, w);
    return acc;
  }
  for (NodeId u1 : g_.node(v).children) {
    const Matrix& d1 = edge_jacobian(u1, v);
    for (NodeId u2 : g_.node(w).children) {
      acc += transpose_times(d1, input_block(u1, u2, c) * edge_jacobian(u2, w));
    }
  }
  if (c != Component::kGaussNewton) {
    // Direct tensor terms (children shared by v and w), plus the path-mixed
    // terms that arise when a curved child also depends on v or w through
    // another route.
    acc += tensor_source(v, w);
    for (NodeId u1 : g_.node(v).children) {
      acc += transpose_times(edge_jacobian(u1, v), tensor_source(w, u1).transpose());
    }
  }
  return acc;
}

Matrix HessianEngine::one_sided(NodeId v, NodeId w, Component c) {
  const NodeId pred = g_.prediction();
  if (v == pred) {
    if (c == Component::kTensor) return zero(v, w);
    return loss_hessian() * total_jacobian(pred, w);
  }
  Matrix acc = zero(v, w);
  for (NodeId u : g_.node(v).children) {
    acc += transpose_times(edge_jacobian(u, v), input_block(u, w, c));
  }
  if (c != Component::kGaussNewton) acc += tensor_source(v, w);
  return acc;
}

Matrix HessianEngine::param_block(NodeId v, NodeId w, Component c) {
  const Node& nv = g_.node(v);
  const Node& nw = g_.node(w);
  if (!nv.has_params() || !nw.has_params()) return Matrix();
  const Matrix& dv = param_jacobian(v);
  const Matrix& dw = param_jacobian(w);
  Matrix h = transpose_times(dv, input_block(v, w, c) * dw);
  if (c == Component::kGaussNewton) return h;
  if (v == w) h += contract_param(g_, fs_, v, bs_.grads[v.index]);
  for (NodeId p : nv.parents) {
    if (!g_.is_ancestor_or_self(w, p)) continue;
    const Matrix m = contract_input_param(g_, fs_, v, p, bs_.grads[v.index]);
    h += transpose_times(m, total_jacobian(p, w) * dw);
  }
  for (NodeId p : nw.parents) {
    if (!g_.is_ancestor_or_self(v, p)) continue;
    const Matrix m = contract_input_param(g_, fs_, w, p, bs_.grads[w.index]);
    h += transpose_times(total_jacobian(p, v) * dv, m);
  }
  return h;
}

std::size_t HessianEngine::computations(NodeId v, NodeId w, Component c) const {
  auto it = counts_.find(Key{v.index, w.index, static_cast<int>(c)});
  return it == counts_.end() ? 0 : it->second;
}

BatchHessian::BatchHessian(const Graph& g, std::vector<Evaluation> evals, EngineOptions options)
    : g_(g), evals_(std::move(evals)) {
  if (evals_.empty()) throw Error(ErrorCode::kInvalidArgument, "empty batch");
  engines_.reserve(evals_.size());
  for (const Evaluation& e : evals_) {
    engines_.push_back(std::make_unique<HessianEngine>(g_, e.fs, e.bs, options));
  }
}

BatchHessian::BatchHessian(const Graph& g, std::span<const double> theta, const Batch& batch,
                           EngineOptions options)
    : BatchHessian(g, evaluate_batch(g, theta, batch), options) {}

Matrix BatchHessian::input_block(NodeId v, NodeId w, Component c) {
  Matrix mean = engines_.front()->input_block(v, w, c);
  for (std::size_t i = 1; i < engines_.size(); ++i) mean += engines_[i]->input_block(v, w, c);
  mean *= 1.0 / static_cast<double>(engines_.size());
  return mean;
}

Matrix BatchHessian::param_block(NodeId v, NodeId w, Component c) {
  Matrix mean = engines_.front()->param_block(v, w, c);
  for (std::size_t i = 1; i < engines_.size(); ++i) mean += engines_[i]->param_block(v, w, c);
  mean *= 1.0 / static_cast<double>(engines_.size());
  return mean;
}

Matrix symmetrize_pair(const Matrix& hvw, const Matrix& hwv) { return symmetrize(hvw, hwv); }

Matrix assemble_full_hessian(BatchHessian& batch, AssemblyOptions options) {
  const Graph& g = batch.graph();
  const std::size_t cap = options.allow_large ? kHardAssemblyCap : options.cap;
  if (g.param_count() > cap) {
    throw Error(ErrorCode::kCapExceeded,
                "P = " + std::to_string(g.param_count()) + " exceeds the dense assembly cap of " +
                    std::to_string(cap) + "; use param_hvp instead");
  }
  const std::size_t p = g.param_count();
  Matrix h(p, p);
  const std::vector<NodeId> nodes = g.param_nodes();
  for (NodeId a : nodes) {
    for (NodeId b : nodes) {
      add_block(h, g.node(a).param_offset, g.node(b).param_offset,
                batch.param_block(a, b, options.component));
    }
  }
  return h;
}

Matrix assemble_full_hessian(const Graph& g, std::span<const double> theta, const Batch& batch,
                             AssemblyOptions options) {
  if (g.param_count() > (options.allow_large ? kHardAssemblyCap : options.cap)) {
    throw Error(ErrorCode::kCapExceeded,
                "P = " + std::to_string(g.param_count()) + " exceeds the dense assembly cap; use param_hvp instead");
  }
  BatchHessian bh(g, theta, batch);
  return assemble_full_hessian(bh, options);
}

Matrix assemble_input_hessian(BatchHessian& batch, const std::vector<NodeId>& nodes, Component c) {
  const Graph& g = batch.graph();
  std::vector<std::size_t> offset(nodes.size() + 1, 0);
  for (std::size_t i = 0; i < nodes.size(); ++i) offset[i + 1] = offset[i] + g.node(nodes[i]).dim();
  Matrix h(offset.back(), offset.back());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    for (std::size_t j = 0; j < nodes.size(); ++j) {
      add_block(h, offset[i], offset[j], batch.input_block(nodes[i], nodes[j], c));
    }
  }
  return h;
}

const Matrix* BlockMatrix::find(NodeId v, NodeId w) const {
  auto it = blocks_.find({v.index, w.index});
  return it == blocks_.end() ? nullptr : &it->second;
}

}  // namespace hessdag
