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

#include "hessdag/calculus.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <string>

#include "hessdag/error.hpp"

namespace hessdag {
namespace {

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }
double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

const Vector* tangent_of(const NodeVectors& t, NodeId p) {
  if (p.index >= t.size() || t[p.index].empty()) return nullptr;
  return &t[p.index];
}

Vector& slot(NodeVectors& acc, const Graph& g, NodeId p) {
  Vector& v = acc[p.index];
  if (v.empty()) v.assign(g.node(p).dim(), 0.0);
  return v;
}

const Vector& value(const ForwardState& fs, NodeId p) { return fs.values[p.index]; }

void require_parent(const Graph& g, NodeId u, NodeId v) {
  const auto& parents = g.node(u).parents;
  if (std::find(parents.begin(), parents.end(), v) == parents.end()) {
    throw Error(ErrorCode::kInvalidArgument,
                "no edge " + g.node(v).name + " -> " + g.node(u).name);
  }
}

void require_params(const Graph& g, NodeId v) {
  if (!g.node(v).has_params()) {
    throw Error(ErrorCode::kInvalidArgument, "node '" + g.node(v).name + "' has no parameters");
  }
}

// Softmax row helpers for attention: a (x) (c - <a, c>).
void softmax_jvp_row(std::span<const double> a, std::span<const double> c, std::span<double> out) {
  const double ac = dot(a, c);
  for (std::size_t t = 0; t < a.size(); ++t) out[t] = a[t] * (c[t] - ac);
}

struct AttentionView {
  std::size_t seq, dk, dv;
  double scale;
  std::span<const double> q, k, v;
  const Matrix& a;
};

AttentionView attention_view(const Graph& g, const ForwardState& fs, const Node& node) {
  const Node& q = g.node(node.parents[0]);
  const Node& v = g.node(node.parents[2]);
  return AttentionView{q.rows,
                       q.cols,
                       v.cols,
                       1.0 / std::sqrt(static_cast<double>(q.cols)),
                       value(fs, node.parents[0]),
                       value(fs, node.parents[1]),
                       value(fs, node.parents[2]),
                       fs.attention[node.id.index]};
}

}  // namespace

double activation_value(Activation fn, double z) {
  switch (fn) {
    case Activation::kReLU: return z > 0.0 ? z : 0.0;
    case Activation::kLeakyReLU: return z > 0.0 ? z : kLeakySlope * z;
    case Activation::kSoftplus: return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    case Activation::kSiLU: return z * sigmoid(z);
    case Activation::kGELU: return z * normal_cdf(z);
    case Activation::kTanh: return std::tanh(z);
  }
  return 0.0;
}

double activation_d1(Activation fn, double z) {
  switch (fn) {
    case Activation::kReLU: return z > 0.0 ? 1.0 : 0.0;
    case Activation::kLeakyReLU: return z > 0.0 ? 1.0 : (z < 0.0 ? kLeakySlope : 0.0);
    case Activation::kSoftplus: return sigmoid(z);
    case Activation::kSiLU: {
      const double s = sigmoid(z);
      return s * (1.0 + z * (1.0 - s));
    }
    case Activation::kGELU: return normal_cdf(z) + z * normal_pdf(z);
    case Activation::kTanh: {
      const double t = std::tanh(z);
      return 1.0 - t * t;
    }
  }
  return 0.0;
}

double activation_d2(Activation fn, double z) {
  switch (fn) {
    case Activation::kReLU:
    case Activation::kLeakyReLU: return 0.0;
    case Activation::kSoftplus: {
      const double s = sigmoid(z);
      return s * (1.0 - s);
    }
    case Activation::kSiLU: {
      const double s = sigmoid(z);
      return s * (1.0 - s) * (2.0 + z * (1.0 - 2.0 * s));
    }
    case Activation::kGELU: return normal_pdf(z) * (2.0 - z * z);
    case Activation::kTanh: {
      const double t = std::tanh(z);
      return -2.0 * t * (1.0 - t * t);
    }
  }
  return 0.0;
}

ForwardState forward(const Graph& g, std::span<const double> theta, const Sample& x,
                     const NodeVectors* offsets) {
  return forward(g, std::make_shared<const Vector>(theta.begin(), theta.end()), x, offsets);
}

namespace {

using ParentGetter = std::function<const Vector&(std::size_t)>;

Vector node_forward(const Graph& g, const Node& node, const ParentGetter& par,
                    std::span<const double> params, const Vector& target, std::size_t label,
                    Matrix* attention, Vector* probabilities) {
  Vector out(node.dim(), 0.0);
  switch (node.kind) {
    case OpKind::kInput:
      throw Error(ErrorCode::kInternal, "node_forward called on an input");
    case OpKind::kLinear: {
      const Vector& in = par(0);
      auto w = params;
      for (std::size_t r = 0; r < node.rows; ++r) {
        std::span<const double> xr(in.data() + r * node.in_cols, node.in_cols);
        for (std::size_t i = 0; i < node.cols; ++i) {
          double s = dot(w.subspan(i * node.in_cols, node.in_cols), xr);
          if (node.bias) s += w[node.cols * node.in_cols + i];
          out[r * node.cols + i] = s;
        }
      }
      break;
    }
    case OpKind::kActivation: {
      const Vector& in = par(0);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = activation_value(node.activation, in[i]);
      break;
    }
    case OpKind::kSumMerge:
      for (std::size_t k = 0; k < node.parents.size(); ++k) axpy(1.0, par(k), out);
      break;
    case OpKind::kConcatMerge: {
      std::size_t offset = 0;
      for (std::size_t k = 0; k < node.parents.size(); ++k) {
        const Node& p = g.node(node.parents[k]);
        for (std::size_t r = 0; r < node.rows; ++r) {
          for (std::size_t c = 0; c < p.cols; ++c) out[r * node.cols + offset + c] = par(k)[r * p.cols + c];
        }
        offset += p.cols;
      }
      break;
    }
    case OpKind::kMeanPoolRows: {
      const Node& p = g.node(node.parents[0]);
      for (std::size_t r = 0; r < p.rows; ++r) {
        for (std::size_t c = 0; c < p.cols; ++c) out[c] += par(0)[r * p.cols + c] / static_cast<double>(p.rows);
      }
      break;
    }
    case OpKind::kSoftmaxAttention: {
      const Node& qn = g.node(node.parents[0]);
      const std::size_t seq = qn.rows, dk = qn.cols, dv = node.cols;
      const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
      const Vector& q = par(0);
      const Vector& k = par(1);
      const Vector& v = par(2);
      Matrix a(seq, seq);
      for (std::size_t s = 0; s < seq; ++s) {
        std::span<const double> qs(q.data() + s * dk, dk);
        double zmax = -std::numeric_limits<double>::infinity();
        for (std::size_t t = 0; t < seq; ++t) {
          a(s, t) = scale * dot(qs, std::span<const double>(k.data() + t * dk, dk));
          zmax = std::max(zmax, a(s, t));
        }
        double total = 0.0;
        for (std::size_t t = 0; t < seq; ++t) {
          a(s, t) = std::exp(a(s, t) - zmax);
          total += a(s, t);
        }
        for (std::size_t t = 0; t < seq; ++t) a(s, t) /= total;
        for (std::size_t t = 0; t < seq; ++t) {
          axpy(a(s, t), std::span<const double>(v.data() + t * dv, dv),
               std::span<double>(out.data() + s * dv, dv));
        }
      }
      if (attention != nullptr) *attention = std::move(a);
      break;
    }
    case OpKind::kLossMse: {
      const Vector& f = par(0);
      if (target.size() != f.size()) {
        throw Error(ErrorCode::kDimensionMismatch, "target has length " + std::to_string(target.size()) +
                                                       ", prediction has " + std::to_string(f.size()));
      }
      double s = 0.0;
      for (std::size_t i = 0; i < f.size(); ++i) s += (f[i] - target[i]) * (f[i] - target[i]);
      out[0] = s / static_cast<double>(f.size());
      break;
    }
    case OpKind::kLossSoftmaxCe: {
      const Vector& f = par(0);
      if (label >= node.num_classes) {
        throw Error(ErrorCode::kInvalidArgument, "label " + std::to_string(label) + " out of range");
      }
      const double fmax = *std::max_element(f.begin(), f.end());
      double total = 0.0;
      Vector p(f.size());
      for (std::size_t i = 0; i < f.size(); ++i) {
        p[i] = std::exp(f[i] - fmax);
        total += p[i];
      }
      for (double& pi : p) pi /= total;
      out[0] = fmax + std::log(total) - f[label];
      if (probabilities != nullptr) *probabilities = std::move(p);
      break;
    }
  }
  return out;
}

}  // namespace

ForwardState forward(const Graph& g, std::shared_ptr<const Vector> theta, const Sample& x,
                     const NodeVectors* offsets) {
  if (theta->size() != g.param_count()) {
    throw Error(ErrorCode::kDimensionMismatch, "parameter vector has length " +
                                                   std::to_string(theta->size()) + ", graph needs " +
                                                   std::to_string(g.param_count()));
  }
  if (x.inputs.size() != g.inputs().size()) {
    throw Error(ErrorCode::kDimensionMismatch, "sample provides " + std::to_string(x.inputs.size()) +
                                                   " inputs, graph has " +
                                                   std::to_string(g.inputs().size()));
  }
  ForwardState fs;
  fs.theta = std::move(theta);
  fs.values.resize(g.size());
  fs.attention.resize(g.size());
  fs.target = x.target;
  fs.label = x.label;

  std::size_t next_input = 0;
  for (NodeId id : g.topological_order()) {
    const Node& node = g.node(id);
    Vector out;
    if (node.kind == OpKind::kInput) {
      // Inputs are always ready, so they are visited in insertion order.
      const Vector& in = x.inputs[next_input++];
      if (in.size() != node.dim()) {
        throw Error(ErrorCode::kDimensionMismatch, "input '" + node.name + "' expects " +
                                                       std::to_string(node.dim()) + " values, got " +
                                                       std::to_string(in.size()));
      }
      out = in;
    } else {
      auto par = [&](std::size_t k) -> const Vector& { return fs.values[node.parents[k].index]; };
      out = node_forward(g, node, par, fs.params(node), x.target, x.label, &fs.attention[id.index],
                         &fs.probabilities);
    }
    if (offsets != nullptr && id.index < offsets->size() && !(*offsets)[id.index].empty()) {
      axpy(1.0, (*offsets)[id.index], out);
    }
    for (double y : out) {
      if (!std::isfinite(y)) {
        throw Error(ErrorCode::kNonFiniteValue, "non-finite activation at node '" + node.name + "'");
      }
    }
    fs.values[id.index] = std::move(out);
  }
  fs.loss = fs.values[g.out().index][0];
  return fs;
}

Vector evaluate_node(const Graph& g, const ForwardState& fs, NodeId u,
                     const NodeVectors* parent_override, std::span<const double> params) {
  const Node& node = g.node(u);
  if (node.kind == OpKind::kInput) return fs.values[u.index];
  auto par = [&](std::size_t k) -> const Vector& {
    const std::size_t p = node.parents[k].index;
    if (parent_override != nullptr && p < parent_override->size() && !(*parent_override)[p].empty()) {
      return (*parent_override)[p];
    }
    return fs.values[p];
  };
  return node_forward(g, node, par, params.empty() ? fs.params(node) : params, fs.target, fs.label,
                      nullptr, nullptr);
}

BackwardState backward(const Graph& g, const ForwardState& fs) {
  BackwardState bs;
  bs.grads.resize(g.size());
  bs.grads[g.out().index] = {1.0};
  const auto& order = g.topological_order();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const Node& node = g.node(*it);
    Vector& delta = slot(bs.grads, g, *it);
    if (node.parents.empty()) continue;
    local_vjp(g, fs, *it, delta, bs.grads, {});
  }
  return bs;
}

Evaluation evaluate(const Graph& g, std::shared_ptr<const Vector> theta, const Sample& x) {
  Evaluation e;
  e.fs = forward(g, std::move(theta), x);
  e.bs = backward(g, e.fs);
  return e;
}

std::vector<Evaluation> evaluate_batch(const Graph& g, std::span<const double> theta,
                                       const Batch& batch) {
  auto shared = std::make_shared<const Vector>(theta.begin(), theta.end());
  std::vector<Evaluation> out;
  out.reserve(batch.size());
  for (const Sample& x : batch) out.push_back(evaluate(g, shared, x));
  return out;
}

Vector param_gradient(const Graph& g, const ForwardState& fs, const BackwardState& bs) {
  Vector grad(g.param_count(), 0.0);
  NodeVectors scratch(g.size());
  for (NodeId v : g.param_nodes()) {
    const Node& node = g.node(v);
    local_vjp(g, fs, v, bs.grads[v.index], scratch,
              std::span<double>(grad.data() + node.param_offset, node.param_count));
  }
  return grad;
}

double batch_loss(const Graph& g, std::span<const double> theta, const Batch& batch) {
  auto shared = std::make_shared<const Vector>(theta.begin(), theta.end());
  double total = 0.0;
  for (const Sample& x : batch) total += forward(g, shared, x).loss;
  return total / static_cast<double>(batch.size());
}

Vector batch_gradient(const Graph& g, std::span<const double> theta, const Batch& batch) {
  Vector grad(g.param_count(), 0.0);
  for (const Evaluation& e : evaluate_batch(g, theta, batch)) {
    axpy(1.0 / static_cast<double>(batch.size()), param_gradient(g, e.fs, e.bs), grad);
  }
  return grad;
}

Vector local_jvp(const Graph& g, const ForwardState& fs, NodeId u, const NodeVectors& tangents,
                 std::span<const double> param_tangent) {
  const Node& node = g.node(u);
  Vector out(node.dim(), 0.0);
  switch (node.kind) {
    case OpKind::kInput:
      break;
    case OpKind::kLinear: {
      auto w = fs.params(node);
      const std::size_t in = node.in_cols;
      if (const Vector* xd = tangent_of(tangents, node.parents[0])) {
        for (std::size_t r = 0; r < node.rows; ++r) {
          std::span<const double> xr(xd->data() + r * in, in);
          for (std::size_t i = 0; i < node.cols; ++i) out[r * node.cols + i] += dot(w.subspan(i * in, in), xr);
        }
      }
      if (!param_tangent.empty()) {
        const Vector& x = value(fs, node.parents[0]);
        for (std::size_t r = 0; r < node.rows; ++r) {
          std::span<const double> xr(x.data() + r * in, in);
          for (std::size_t i = 0; i < node.cols; ++i) {
            double s = dot(param_tangent.subspan(i * in, in), xr);
            if (node.bias) s += param_tangent[node.cols * in + i];
            out[r * node.cols + i] += s;
          }
        }
      }
      break;
    }
    case OpKind::kActivation:
      if (const Vector* xd = tangent_of(tangents, node.parents[0])) {
        const Vector& z = value(fs, node.parents[0]);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = activation_d1(node.activation, z[i]) * (*xd)[i];
      }
      break;
    case OpKind::kSumMerge:
      for (NodeId p : node.parents) {
        if (const Vector* xd = tangent_of(tangents, p)) axpy(1.0, *xd, out);
      }
      break;
    case OpKind::kConcatMerge: {
      std::size_t offset = 0;
      for (NodeId p : node.parents) {
        const Node& pn = g.node(p);
        if (const Vector* xd = tangent_of(tangents, p)) {
          for (std::size_t r = 0; r < node.rows; ++r) {
            for (std::size_t c = 0; c < pn.cols; ++c) out[r * node.cols + offset + c] = (*xd)[r * pn.cols + c];
          }
        }
        offset += pn.cols;
      }
      break;
    }
    case OpKind::kMeanPoolRows:
      if (const Vector* xd = tangent_of(tangents, node.parents[0])) {
        const Node& pn = g.node(node.parents[0]);
        for (std::size_t r = 0; r < pn.rows; ++r) {
          for (std::size_t c = 0; c < pn.cols; ++c) out[c] += (*xd)[r * pn.cols + c] / static_cast<double>(pn.rows);
        }
      }
      break;
    case OpKind::kSoftmaxAttention: {
      const AttentionView at = attention_view(g, fs, node);
      const Vector* qd = tangent_of(tangents, node.parents[0]);
      const Vector* kd = tangent_of(tangents, node.parents[1]);
      const Vector* vd = tangent_of(tangents, node.parents[2]);
      Vector zd(at.seq), ad(at.seq);
      for (std::size_t s = 0; s < at.seq; ++s) {
        std::span<double> os(out.data() + s * at.dv, at.dv);
        if (qd != nullptr || kd != nullptr) {
          for (std::size_t t = 0; t < at.seq; ++t) {
            double z = 0.0;
            if (qd != nullptr) z += dot(std::span<const double>(qd->data() + s * at.dk, at.dk), at.k.subspan(t * at.dk, at.dk));
            if (kd != nullptr) z += dot(at.q.subspan(s * at.dk, at.dk), std::span<const double>(kd->data() + t * at.dk, at.dk));
            zd[t] = at.scale * z;
          }
          softmax_jvp_row(at.a.row(s), zd, ad);
          for (std::size_t t = 0; t < at.seq; ++t) axpy(ad[t], at.v.subspan(t * at.dv, at.dv), os);
        }
        if (vd != nullptr) {
          for (std::size_t t = 0; t < at.seq; ++t) {
            axpy(at.a(s, t), std::span<const double>(vd->data() + t * at.dv, at.dv), os);
          }
        }
      }
      break;
    }
    case OpKind::kLossMse:
      if (const Vector* fd = tangent_of(tangents, node.parents[0])) {
        const Vector& f = value(fs, node.parents[0]);
        const double d = static_cast<double>(f.size());
        for (std::size_t i = 0; i < f.size(); ++i) out[0] += 2.0 / d * (f[i] - fs.target[i]) * (*fd)[i];
      }
      break;
    case OpKind::kLossSoftmaxCe:
      if (const Vector* fd = tangent_of(tangents, node.parents[0])) {
        out[0] = dot(fs.probabilities, *fd) - (*fd)[fs.label];
      }
      break;
  }
  return out;
}

void local_vjp(const Graph& g, const ForwardState& fs, NodeId u, std::span<const double> delta,
               NodeVectors& parent_accum, std::span<double> param_accum) {
  const Node& node = g.node(u);
  switch (node.kind) {
    case OpKind::kInput:
      break;
    case OpKind::kLinear: {
      auto w = fs.params(node);
      const std::size_t in = node.in_cols;
      Vector& dx = slot(parent_accum, g, node.parents[0]);
      for (std::size_t r = 0; r < node.rows; ++r) {
        std::span<double> dxr(dx.data() + r * in, in);
        for (std::size_t i = 0; i < node.cols; ++i) {
          const double di = delta[r * node.cols + i];
          if (di != 0.0) axpy(di, w.subspan(i * in, in), dxr);
        }
      }
      if (!param_accum.empty()) {
        const Vector& x = value(fs, node.parents[0]);
        for (std::size_t r = 0; r < node.rows; ++r) {
          std::span<const double> xr(x.data() + r * in, in);
          for (std::size_t i = 0; i < node.cols; ++i) {
            const double di = delta[r * node.cols + i];
            axpy(di, xr, param_accum.subspan(i * in, in));
            if (node.bias) param_accum[node.cols * in + i] += di;
          }
        }
      }
      break;
    }
    case OpKind::kActivation: {
      const Vector& z = value(fs, node.parents[0]);
      Vector& dx = slot(parent_accum, g, node.parents[0]);
      for (std::size_t i = 0; i < z.size(); ++i) dx[i] += activation_d1(node.activation, z[i]) * delta[i];
      break;
    }
    case OpKind::kSumMerge:
      for (NodeId p : node.parents) axpy(1.0, delta, slot(parent_accum, g, p));
      break;
    case OpKind::kConcatMerge: {
      std::size_t offset = 0;
      for (NodeId p : node.parents) {
        const Node& pn = g.node(p);
        Vector& dx = slot(parent_accum, g, p);
        for (std::size_t r = 0; r < node.rows; ++r) {
          for (std::size_t c = 0; c < pn.cols; ++c) dx[r * pn.cols + c] += delta[r * node.cols + offset + c];
        }
        offset += pn.cols;
      }
      break;
    }
    case OpKind::kMeanPoolRows: {
      const Node& pn = g.node(node.parents[0]);
      Vector& dx = slot(parent_accum, g, node.parents[0]);
      for (std::size_t r = 0; r < pn.rows; ++r) {
        for (std::size_t c = 0; c < pn.cols; ++c) dx[r * pn.cols + c] += delta[c] / static_cast<double>(pn.rows);
      }
      break;
    }
    case OpKind::kSoftmaxAttention: {
      const AttentionView at = attention_view(g, fs, node);
      Vector& dq = slot(parent_accum, g, node.parents[0]);
      Vector& dk = slot(parent_accum, g, node.parents[1]);
      Vector& dv = slot(parent_accum, g, node.parents[2]);
      Vector c(at.seq), gs(at.seq);
      for (std::size_t s = 0; s < at.seq; ++s) {
        std::span<const double> ds = delta.subspan(s * at.dv, at.dv);
        for (std::size_t t = 0; t < at.seq; ++t) {
          c[t] = dot(ds, at.v.subspan(t * at.dv, at.dv));
          axpy(at.a(s, t), ds, std::span<double>(dv.data() + t * at.dv, at.dv));
        }
        softmax_jvp_row(at.a.row(s), c, gs);
        for (std::size_t t = 0; t < at.seq; ++t) {
          axpy(at.scale * gs[t], at.k.subspan(t * at.dk, at.dk), std::span<double>(dq.data() + s * at.dk, at.dk));
          axpy(at.scale * gs[t], at.q.subspan(s * at.dk, at.dk), std::span<double>(dk.data() + t * at.dk, at.dk));
        }
      }
      break;
    }
    case OpKind::kLossMse: {
      const Vector& f = value(fs, node.parents[0]);
      Vector& dx = slot(parent_accum, g, node.parents[0]);
      const double d = static_cast<double>(f.size());
      for (std::size_t i = 0; i < f.size(); ++i) dx[i] += delta[0] * 2.0 / d * (f[i] - fs.target[i]);
      break;
    }
    case OpKind::kLossSoftmaxCe: {
      Vector& dx = slot(parent_accum, g, node.parents[0]);
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += delta[0] * fs.probabilities[i];
      dx[fs.label] -= delta[0];
      break;
    }
  }
}

void local_second(const Graph& g, const ForwardState& fs, NodeId u,
                  std::span<const double> weight, const NodeVectors& tangents,
                  std::span<const double> param_tangent, NodeVectors& parent_accum,
                  std::span<double> param_accum) {
  const Node& node = g.node(u);
  switch (node.kind) {
    case OpKind::kInput:
    case OpKind::kSumMerge:
    case OpKind::kConcatMerge:
    case OpKind::kMeanPoolRows:
      break;
    case OpKind::kLinear: {
      const std::size_t in = node.in_cols;
      if (!param_tangent.empty()) {
        Vector& dx = slot(parent_accum, g, node.parents[0]);
        for (std::size_t r = 0; r < node.rows; ++r) {
          std::span<double> dxr(dx.data() + r * in, in);
          for (std::size_t i = 0; i < node.cols; ++i) {
            axpy(weight[r * node.cols + i], param_tangent.subspan(i * in, in), dxr);
          }
        }
      }
      const Vector* xd = tangent_of(tangents, node.parents[0]);
      if (xd != nullptr && !param_accum.empty()) {
        for (std::size_t r = 0; r < node.rows; ++r) {
          std::span<const double> xr(xd->data() + r * in, in);
          for (std::size_t i = 0; i < node.cols; ++i) {
            axpy(weight[r * node.cols + i], xr, param_accum.subspan(i * in, in));
          }
        }
      }
      break;
    }
    case OpKind::kActivation:
      if (const Vector* xd = tangent_of(tangents, node.parents[0])) {
        const Vector& z = value(fs, node.parents[0]);
        Vector& dx = slot(parent_accum, g, node.parents[0]);
        for (std::size_t i = 0; i < z.size(); ++i) {
          dx[i] += weight[i] * activation_d2(node.activation, z[i]) * (*xd)[i];
        }
      }
      break;
    case OpKind::kSoftmaxAttention: {
      const AttentionView at = attention_view(g, fs, node);
      const Vector* qd = tangent_of(tangents, node.parents[0]);
      const Vector* kd = tangent_of(tangents, node.parents[1]);
      const Vector* vd = tangent_of(tangents, node.parents[2]);
      if (qd == nullptr && kd == nullptr && vd == nullptr) break;
      Vector& dq = slot(parent_accum, g, node.parents[0]);
      Vector& dk = slot(parent_accum, g, node.parents[1]);
      Vector& dv = slot(parent_accum, g, node.parents[2]);
      Vector c(at.seq), cd(at.seq, 0.0), zd(at.seq, 0.0), ad(at.seq, 0.0), gs(at.seq), gd(at.seq);
      for (std::size_t s = 0; s < at.seq; ++s) {
        std::span<const double> ws = weight.subspan(s * at.dv, at.dv);
        std::span<const double> as = at.a.row(s);
        for (std::size_t t = 0; t < at.seq; ++t) {
          c[t] = dot(ws, at.v.subspan(t * at.dv, at.dv));
          cd[t] = vd != nullptr ? dot(ws, std::span<const double>(vd->data() + t * at.dv, at.dv)) : 0.0;
          double z = 0.0;
          if (qd != nullptr) z += dot(std::span<const double>(qd->data() + s * at.dk, at.dk), at.k.subspan(t * at.dk, at.dk));
          if (kd != nullptr) z += dot(at.q.subspan(s * at.dk, at.dk), std::span<const double>(kd->data() + t * at.dk, at.dk));
          zd[t] = at.scale * z;
        }
        softmax_jvp_row(as, zd, ad);
        softmax_jvp_row(as, c, gs);
        // d/dt [a (x) (c - <a,c>)] along (a', c').
        const double ac = dot(as, c);
        const double adc = dot(ad, c);
        const double acd = dot(as, cd);
        for (std::size_t t = 0; t < at.seq; ++t) {
          gd[t] = ad[t] * (c[t] - ac) + as[t] * (cd[t] - adc - acd);
        }
        for (std::size_t t = 0; t < at.seq; ++t) {
          std::span<double> dqs(dq.data() + s * at.dk, at.dk);
          std::span<double> dkt(dk.data() + t * at.dk, at.dk);
          axpy(at.scale * gd[t], at.k.subspan(t * at.dk, at.dk), dqs);
          axpy(at.scale * gd[t], at.q.subspan(s * at.dk, at.dk), dkt);
          if (kd != nullptr) axpy(at.scale * gs[t], std::span<const double>(kd->data() + t * at.dk, at.dk), dqs);
          if (qd != nullptr) axpy(at.scale * gs[t], std::span<const double>(qd->data() + s * at.dk, at.dk), dkt);
          axpy(ad[t], ws, std::span<double>(dv.data() + t * at.dv, at.dv));
        }
      }
      break;
    }
    case OpKind::kLossMse:
      if (const Vector* fd = tangent_of(tangents, node.parents[0])) {
        Vector& dx = slot(parent_accum, g, node.parents[0]);
        axpy(weight[0] * 2.0 / static_cast<double>(dx.size()), *fd, dx);
      }
      break;
    case OpKind::kLossSoftmaxCe:
      if (const Vector* fd = tangent_of(tangents, node.parents[0])) {
        Vector& dx = slot(parent_accum, g, node.parents[0]);
        const Vector& p = fs.probabilities;
        const double pf = dot(p, *fd);
        for (std::size_t i = 0; i < p.size(); ++i) dx[i] += weight[0] * p[i] * ((*fd)[i] - pf);
      }
      break;
  }
}

bool has_input_curvature(const Graph& g, NodeId u) {
  switch (g.node(u).kind) {
    case OpKind::kActivation:
      return !is_piecewise_linear(g.node(u).activation);
    case OpKind::kSoftmaxAttention:
    case OpKind::kLossMse:
    case OpKind::kLossSoftmaxCe:
      return true;
    default:
      return false;
  }
}

Matrix jacobian_edge(const Graph& g, const ForwardState& fs, NodeId u, NodeId v) {
  require_parent(g, u, v);
  const Node& node = g.node(u);
  const Node& pn = g.node(v);
  Matrix d(node.dim(), pn.dim());
  switch (node.kind) {
    case OpKind::kLinear: {
      auto w = fs.params(node);
      for (std::size_t r = 0; r < node.rows; ++r) {
        for (std::size_t i = 0; i < node.cols; ++i) {
          for (std::size_t j = 0; j < node.in_cols; ++j) {
            d(r * node.cols + i, r * node.in_cols + j) = w[i * node.in_cols + j];
          }
        }
      }
      return d;
    }
    case OpKind::kActivation: {
      const Vector& z = value(fs, v);
      for (std::size_t i = 0; i < z.size(); ++i) d(i, i) = activation_d1(node.activation, z[i]);
      return d;
    }
    case OpKind::kSumMerge:
      return Matrix::identity(node.dim());
    case OpKind::kConcatMerge: {
      std::size_t offset = 0;
      for (NodeId p : node.parents) {
        if (p == v) break;
        offset += g.node(p).cols;
      }
      for (std::size_t r = 0; r < node.rows; ++r) {
        for (std::size_t c = 0; c < pn.cols; ++c) d(r * node.cols + offset + c, r * pn.cols + c) = 1.0;
      }
      return d;
    }
    case OpKind::kMeanPoolRows:
      for (std::size_t r = 0; r < pn.rows; ++r) {
        for (std::size_t c = 0; c < pn.cols; ++c) d(c, r * pn.cols + c) = 1.0 / static_cast<double>(pn.rows);
      }
      return d;
    default: {
      // Attention and loss nodes: columns from the analytic tangent map.
      NodeVectors t(g.size());
      for (std::size_t j = 0; j < pn.dim(); ++j) {
        t[v.index].assign(pn.dim(), 0.0);
        t[v.index][j] = 1.0;
        const Vector col = local_jvp(g, fs, u, t, {});
        for (std::size_t i = 0; i < col.size(); ++i) d(i, j) = col[i];
      }
      return d;
    }
  }
}

Matrix jacobian_param(const Graph& g, const ForwardState& fs, NodeId v) {
  require_params(g, v);
  const Node& node = g.node(v);
  const Vector& x = value(fs, node.parents[0]);
  Matrix d(node.dim(), node.param_count);
  for (std::size_t r = 0; r < node.rows; ++r) {
    for (std::size_t i = 0; i < node.cols; ++i) {
      const std::size_t row = r * node.cols + i;
      for (std::size_t j = 0; j < node.in_cols; ++j) d(row, i * node.in_cols + j) = x[r * node.in_cols + j];
      if (node.bias) d(row, node.cols * node.in_cols + i) = 1.0;
    }
  }
  return d;
}

Matrix contract_input(const Graph& g, const ForwardState& fs, NodeId u, NodeId v, NodeId w,
                      std::span<const double> weight) {
  require_parent(g, u, v);
  require_parent(g, u, w);
  const Node& node = g.node(u);
  const std::size_t dv = g.node(v).dim();
  const std::size_t dw = g.node(w).dim();
  Matrix m(dv, dw);
  switch (node.kind) {
    case OpKind::kActivation: {
      const Vector& z = value(fs, v);
      for (std::size_t i = 0; i < dv; ++i) m(i, i) = weight[i] * activation_d2(node.activation, z[i]);
      return m;
    }
    case OpKind::kLossMse:
    case OpKind::kLossSoftmaxCe:
      m = loss_hessian(g, fs);
      m *= weight[0];
      return m;
    case OpKind::kSoftmaxAttention: {
      NodeVectors t(g.size());
      for (std::size_t j = 0; j < dw; ++j) {
        t[w.index].assign(dw, 0.0);
        t[w.index][j] = 1.0;
        NodeVectors acc(g.size());
        local_second(g, fs, u, weight, t, {}, acc, {});
        const Vector& col = acc[v.index];
        if (col.empty()) continue;
        for (std::size_t i = 0; i < dv; ++i) m(i, j) = col[i];
      }
      return m;
    }
    default:
      return m;
  }
}

Matrix contract_input_param(const Graph& g, const ForwardState& /*fs*/, NodeId u, NodeId v,
                            std::span<const double> weight) {
  require_parent(g, u, v);
  require_params(g, u);
  const Node& node = g.node(u);
  Matrix m(g.node(v).dim(), node.param_count);
  // Only Linear nodes own parameters: d^2 y_{r,i} / (dx_{r,j} dW_{i,j}) = 1.
  for (std::size_t r = 0; r < node.rows; ++r) {
    for (std::size_t i = 0; i < node.cols; ++i) {
      const double wi = weight[r * node.cols + i];
      for (std::size_t j = 0; j < node.in_cols; ++j) m(r * node.in_cols + j, i * node.in_cols + j) += wi;
    }
  }
  return m;
}

Matrix contract_param(const Graph& g, const ForwardState& /*fs*/, NodeId u,
                      std::span<const double> /*weight*/) {
  require_params(g, u);
  return Matrix(g.node(u).param_count, g.node(u).param_count);
}

Matrix loss_hessian(const Graph& g, const ForwardState& fs) {
  const Node& loss = g.node(g.out());
  const std::size_t d = g.node(g.prediction()).dim();
  if (loss.kind == OpKind::kLossMse) {
    Matrix h = Matrix::identity(d);
    h *= 2.0 / static_cast<double>(d);
    return h;
  }
  const Vector& p = fs.probabilities;
  Matrix h = Matrix::diagonal(p);
  h.add_scaled(Matrix::outer(p, p), -1.0);
  return h;
}

Tensor3 tensor_input(const Graph& g, const ForwardState& fs, NodeId u, NodeId v) {
  return tensor_mixed(g, fs, u, v, v);
}

Tensor3 tensor_mixed(const Graph& g, const ForwardState& fs, NodeId u, NodeId v, NodeId w) {
  require_parent(g, u, v);
  require_parent(g, u, w);
  const std::size_t du = g.node(u).dim();
  Tensor3 t(du, g.node(v).dim(), g.node(w).dim());
  if (!has_input_curvature(g, u)) return t;
  Vector e(du, 0.0);
  for (std::size_t i = 0; i < du; ++i) {
    e[i] = 1.0;
    t.set_slice(i, contract_input(g, fs, u, v, w, e));
    e[i] = 0.0;
  }
  return t;
}

Tensor3 tensor_param(const Graph& g, const ForwardState& /*fs*/, NodeId v) {
  require_params(g, v);
  const Node& node = g.node(v);
  return Tensor3(node.dim(), node.param_count, node.param_count);
}

Tensor3 tensor_input_param(const Graph& g, const ForwardState& fs, NodeId u, NodeId v) {
  require_parent(g, u, v);
  require_params(g, u);
  const std::size_t du = g.node(u).dim();
  Tensor3 t(du, g.node(v).dim(), g.node(u).param_count);
  Vector e(du, 0.0);
  for (std::size_t i = 0; i < du; ++i) {
    e[i] = 1.0;
    t.set_slice(i, contract_input_param(g, fs, u, v, e));
    e[i] = 0.0;
  }
  return t;
}

}  // namespace hessdag
