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

#include "hessdag/decomposition.hpp"

#include <algorithm>
#include <cmath>

#include "hessdag/calculus.hpp"
#include "hessdag/error.hpp"

namespace hessdag {

Matrix gn_block_recursive(BatchHessian& h, NodeId v, NodeId w) {
  return h.input_block(v, w, Component::kGaussNewton);
}

Matrix gn_block_unrolled(BatchHessian& h, NodeId v, NodeId w) {
  const Graph& g = h.graph();
  const NodeId pred = g.prediction();
  Matrix acc(g.node(v).dim(), g.node(w).dim());
  for (std::size_t i = 0; i < h.batch_size(); ++i) {
    HessianEngine& e = h.engine(i);
    const Matrix& jv = e.total_jacobian(pred, v);
    const Matrix& jw = e.total_jacobian(pred, w);
    acc += transpose_times(jv, e.loss_hessian() * jw);
  }
  acc *= 1.0 / static_cast<double>(h.batch_size());
  return acc;
}

DecomposedBlock decompose(BatchHessian& h, NodeId v, NodeId w) {
  DecomposedBlock b;
  b.full = h.input_block(v, w, Component::kFull);
  b.gn = gn_block_recursive(h, v, w);
  b.tensor = b.full - b.gn;
  return b;
}

double gn_gap(const Matrix& gn, const Matrix& tensor, double eps) {
  return frobenius_norm(tensor) / (frobenius_norm(gn) + eps);
}

double gn_gap(const DecomposedBlock& b, double eps) { return gn_gap(b.gn, b.tensor, eps); }

namespace {

void require_square(const Matrix& h, const char* what) {
  if (h.rows() != h.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, std::string(what) + ": matrix is not square");
  }
}

}  // namespace

double negative_mass(const Matrix& h, double tol) {
  require_square(h, "negative_mass");
  double mass = 0.0;
  for (double lambda : sym_eigenvalues(symmetrize(h))) {
    if (lambda < -tol) mass -= lambda;
  }
  return mass;
}

std::vector<EscapeDirection> escape_directions(const Matrix& h, double tau) {
  require_square(h, "escape_directions");
  const SymEigen eig = sym_eigen(symmetrize(h));
  std::vector<EscapeDirection> out;
  // Values are descending, so walk from the most negative end.
  for (std::size_t k = eig.values.size(); k-- > 0;) {
    if (eig.values[k] >= -tau) break;
    out.push_back({eig.values[k], eig.vectors.col(k)});
  }
  return out;
}

NormBridge norm_bridge(BatchHessian& h, NodeId v, NodeId w) {
  const Graph& g = h.graph();
  NormBridge nb;
  const Matrix block = h.param_block(v, w);
  nb.lhs = frobenius_norm(block);
  Matrix sandwich(block.rows(), block.cols());
  const double inv = 1.0 / static_cast<double>(h.batch_size());
  // Per-sample bounds, averaged, so the inequality holds for batch means.
  for (std::size_t i = 0; i < h.batch_size(); ++i) {
    HessianEngine& e = h.engine(i);
    const Matrix dv = jacobian_param(g, e.forward_state(), v);
    const Matrix dw = jacobian_param(g, e.forward_state(), w);
    const Matrix hf = e.input_block(v, w);
    sandwich.add_scaled(transpose_times(dv, hf * dw), inv);
    nb.sandwich += inv * spectral_norm(dv) * spectral_norm(dw) * frobenius_norm(hf);
  }
  nb.residual = frobenius_norm(block - sandwich);
  return nb;
}

}  // namespace hessdag
