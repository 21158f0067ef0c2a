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

// Finite-difference ground truth for gradients, Jacobians and Hessians.

#ifndef HESSDAG_ORACLE_HPP_
#define HESSDAG_ORACLE_HPP_

#include <functional>
#include <span>

#include "hessdag/calculus.hpp"
#include "hessdag/graph.hpp"
#include "hessdag/linalg.hpp"

namespace hessdag {

enum class FDScheme { kCentral1st, kCentral2nd, kMixed4pt };

struct FDConfig {
  double h = 1e-4;
  FDScheme scheme = FDScheme::kMixed4pt;
  double kink_margin = 1e-3;
};

inline constexpr FDConfig kFirstOrderFD{1e-5, FDScheme::kCentral1st, 1e-3};
inline constexpr FDConfig kSecondOrderFD{1e-4, FDScheme::kMixed4pt, 1e-3};

using ScalarFn = std::function<double(std::span<const double>)>;
using VectorFn = std::function<Vector(std::span<const double>)>;

Vector fd_gradient(const ScalarFn& f, std::span<const double> x, FDConfig cfg = kFirstOrderFD);
// Central first differences of a vector function; column j is d f / d x_j.
Matrix fd_jacobian(const VectorFn& f, std::span<const double> x, FDConfig cfg = kFirstOrderFD);
// Function-value second differences: three-point on the diagonal, four-point
// mixed off the diagonal. Symmetric by construction.
Matrix fd_hessian(const ScalarFn& f, std::span<const double> x, FDConfig cfg = kSecondOrderFD);
// Central differences of a gradient function, not symmetrized.
Matrix fd_hessian_from_gradient(const VectorFn& grad, std::span<const double> x,
                                FDConfig cfg = kFirstOrderFD);

// theta -> batch-mean loss.
ScalarFn loss_function(const Graph& g, const Batch& batch);

// Throws kKinkProximity naming the first piecewise-linear activation node
// with a pre-activation within `margin` of zero.
void check_kinks(const Graph& g, std::span<const double> theta, const Batch& batch, double margin);
bool is_kink_free(const Graph& g, std::span<const double> theta, const Batch& batch, double margin);

// Batch-mean input Hessian block by perturbing additive offsets at v and w
// and re-running the forward pass.
Matrix fd_block(const Graph& g, std::span<const double> theta, const Batch& batch, NodeId v,
                NodeId w, FDConfig cfg = kSecondOrderFD);

// Kink-checked finite-difference Hessian of the batch-mean loss in theta.
Matrix fd_param_hessian(const Graph& g, std::span<const double> theta, const Batch& batch,
                        FDConfig cfg = kSecondOrderFD);

}  // namespace hessdag

#endif  // HESSDAG_ORACLE_HPP_
