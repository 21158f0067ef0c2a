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

// Gauss-Newton / tensor split of input-Hessian blocks and negative-curvature
// summaries of assembled Hessians.

#ifndef HESSDAG_DECOMPOSITION_HPP_
#define HESSDAG_DECOMPOSITION_HPP_

#include <vector>

#include "hessdag/graph.hpp"
#include "hessdag/hessian.hpp"
#include "hessdag/linalg.hpp"

namespace hessdag {

struct DecomposedBlock {
  Matrix gn;
  Matrix tensor;
  Matrix full;
};

inline constexpr double kGapEps = 1e-12;

// GN recursion: base is the loss Hessian, tensor terms dropped.
Matrix gn_block_recursive(BatchHessian& h, NodeId v, NodeId w);
// D_{pred<-v}^T grad^2 l D_{pred<-w}, batch mean.
Matrix gn_block_unrolled(BatchHessian& h, NodeId v, NodeId w);
// full from the engine, gn from the GN recursion, tensor = full - gn.
DecomposedBlock decompose(BatchHessian& h, NodeId v, NodeId w);

double gn_gap(const Matrix& gn, const Matrix& tensor, double eps = kGapEps);
double gn_gap(const DecomposedBlock& b, double eps = kGapEps);

// Sum of |lambda| over eigenvalues below -tol of the symmetrized matrix.
double negative_mass(const Matrix& h, double tol = 0.0);

struct EscapeDirection {
  double eigenvalue;
  Vector direction;
};
// Eigenpairs with lambda < -tau, most negative first.
std::vector<EscapeDirection> escape_directions(const Matrix& h, double tau);

// Parametric-block norm bridge: ||H_theta||_F against
// the per-sample mean of ||D_v||_2 ||D_w||_2 ||H^f||_F plus ||R||_F, where R is the part of the
// parametric block not explained by the Jacobian sandwich.
struct NormBridge {
  double lhs = 0.0;
  double sandwich = 0.0;
  double residual = 0.0;
  double rhs() const { return sandwich + residual; }
};
NormBridge norm_bridge(BatchHessian& h, NodeId v, NodeId w);

}  // namespace hessdag

#endif  // HESSDAG_DECOMPOSITION_HPP_
