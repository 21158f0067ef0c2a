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

#include "hessdag/oracle.hpp"

#include <cmath>
#include <string>

#include "hessdag/error.hpp"

namespace hessdag {
namespace {

void require_step(const FDConfig& cfg) {
  if (!(cfg.h > 0.0) || cfg.kink_margin < 0.0) {
    throw Error(ErrorCode::kInvalidArgument, "finite-difference step must be positive");
  }
}

}  // namespace

Vector fd_gradient(const ScalarFn& f, std::span<const double> x, FDConfig cfg) {
  require_step(cfg);
  Vector p(x.begin(), x.end());
  Vector grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    p[i] = x[i] + cfg.h;
    const double up = f(p);
    p[i] = x[i] - cfg.h;
    const double down = f(p);
    p[i] = x[i];
    grad[i] = (up - down) / (2.0 * cfg.h);
  }
  return grad;
}

Matrix fd_jacobian(const VectorFn& f, std::span<const double> x, FDConfig cfg) {
  require_step(cfg);
  Vector p(x.begin(), x.end());
  Matrix jac;
  for (std::size_t j = 0; j < x.size(); ++j) {
    p[j] = x[j] + cfg.h;
    const Vector up = f(p);
    p[j] = x[j] - cfg.h;
    const Vector down = f(p);
    p[j] = x[j];
    if (j == 0) jac = Matrix(up.size(), x.size());
    for (std::size_t i = 0; i < up.size(); ++i) jac(i, j) = (up[i] - down[i]) / (2.0 * cfg.h);
  }
  return jac;
}

Matrix fd_hessian(const ScalarFn& f, std::span<const double> x, FDConfig cfg) {
  require_step(cfg);
  const std::size_t n = x.size();
  const double h = cfg.h;
  Vector p(x.begin(), x.end());
  const double f0 = f(p);
  Matrix hess(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    p[i] = x[i] + h;
    const double up = f(p);
    p[i] = x[i] - h;
    const double down = f(p);
    p[i] = x[i];
    hess(i, i) = (up - 2.0 * f0 + down) / (h * h);
    for (std::size_t j = i + 1; j < n; ++j) {
      double acc = 0.0;
      for (int si : {1, -1}) {
        for (int sj : {1, -1}) {
          p[i] = x[i] + si * h;
          p[j] = x[j] + sj * h;
          acc += si * sj * f(p);
        }
      }
      p[i] = x[i];
      p[j] = x[j];
      hess(i, j) = hess(j, i) = acc / (4.0 * h * h);
    }
  }
  return hess;
}

Matrix fd_hessian_from_gradient(const VectorFn& grad, std::span<const double> x, FDConfig cfg) {
  return fd_jacobian(grad, x, cfg);
}

ScalarFn loss_function(const Graph& g, const Batch& batch) {
  return [&g, &batch](std::span<const double> theta) { return batch_loss(g, theta, batch); };
}

void check_kinks(const Graph& g, std::span<const double> theta, const Batch& batch, double margin) {
  auto shared = std::make_shared<const Vector>(theta.begin(), theta.end());
  for (const Sample& x : batch) {
    const ForwardState fs = forward(g, shared, x);
    for (const Node& node : g.nodes()) {
      if (node.kind != OpKind::kActivation || !is_piecewise_linear(node.activation)) continue;
      for (double z : fs.values[node.parents[0].index]) {
        if (std::abs(z) <= margin) {
          throw Error(ErrorCode::kKinkProximity,
                      "pre-activation " + std::to_string(z) + " within " + std::to_string(margin) +
                          " of the kink at node '" + node.name + "'");
        }
      }
    }
  }
}

bool is_kink_free(const Graph& g, std::span<const double> theta, const Batch& batch, double margin) {
  try {
    check_kinks(g, theta, batch, margin);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kKinkProximity) return false;
    throw;
  }
  return true;
}

Matrix fd_block(const Graph& g, std::span<const double> theta, const Batch& batch, NodeId v,
                NodeId w, FDConfig cfg) {
  require_step(cfg);
  check_kinks(g, theta, batch, cfg.kink_margin);
  auto shared = std::make_shared<const Vector>(theta.begin(), theta.end());
  const std::size_t dv = g.node(v).dim();
  const std::size_t dw = g.node(w).dim();
  const double h = cfg.h;
  NodeVectors offsets(g.size());
  auto loss_at = [&](std::size_t i, double a, std::size_t j, double b) {
    offsets[v.index].assign(dv, 0.0);
    offsets[w.index].assign(dw, 0.0);
    offsets[v.index][i] += a;
    offsets[w.index][j] += b;
    double total = 0.0;
    for (const Sample& x : batch) total += forward(g, shared, x, &offsets).loss;
    return total / static_cast<double>(batch.size());
  };
  Matrix block(dv, dw);
  const double f0 = loss_at(0, 0.0, 0, 0.0);
  for (std::size_t i = 0; i < dv; ++i) {
    for (std::size_t j = 0; j < dw; ++j) {
      if (v == w && i == j) {
        block(i, j) = (loss_at(i, h, j, 0.0) - 2.0 * f0 + loss_at(i, -h, j, 0.0)) / (h * h);
      } else {
        block(i, j) = (loss_at(i, h, j, h) - loss_at(i, h, j, -h) - loss_at(i, -h, j, h) +
                       loss_at(i, -h, j, -h)) /
                      (4.0 * h * h);
      }
    }
  }
  return block;
}

Matrix fd_param_hessian(const Graph& g, std::span<const double> theta, const Batch& batch,
                        FDConfig cfg) {
  check_kinks(g, theta, batch, cfg.kink_margin);
  return fd_hessian(loss_function(g, batch), theta, cfg);
}

}  // namespace hessdag
