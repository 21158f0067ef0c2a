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

// Memoized recursion for the input-Hessian blocks H^f_{v,w} of a DAG, their
// Gauss-Newton and tensor components, parametric blocks and dense assembly.

#ifndef HESSDAG_HESSIAN_HPP_
#define HESSDAG_HESSIAN_HPP_

#include <cstddef>
#include <map>
#include <memory>
#include <set>
#include <tuple>
#include <utility>
#include <vector>

#include "hessdag/calculus.hpp"
#include "hessdag/graph.hpp"
#include "hessdag/linalg.hpp"

namespace hessdag {

enum class Component { kFull, kGaussNewton, kTensor };

enum class Recursion {
  // Sum over child pairs plus tensor sources; boundary pairs one-sided.
  kCanonical,
  // H_{v,w} = sum_{u in Ch(v)} D_{u<-v}^T H_{u,w} + sources, for every pair.
  kOneSided,
};

struct EngineOptions {
  Recursion recursion = Recursion::kCanonical;
  bool memoize = true;
};

// Blocks for one sample. Holds references to the graph and states.
class HessianEngine {
 public:
  HessianEngine(const Graph& g, const ForwardState& fs, const BackwardState& bs,
                EngineOptions options = {});

  const Graph& graph() const { return g_; }
  const ForwardState& forward_state() const { return fs_; }
  const BackwardState& backward_state() const { return bs_; }

  // H^f_{v,w} (or one of its components), d_v x d_w.
  Matrix input_block(NodeId v, NodeId w, Component c = Component::kFull);
  // H_{theta_v, theta_w}, p_v x p_w. Empty matrix when either node has no
  // parameters.
  Matrix param_block(NodeId v, NodeId w, Component c = Component::kFull);

  const Matrix& edge_jacobian(NodeId u, NodeId v);
  // df_p / d(eps_w) where eps_w is an additive offset at w.
  const Matrix& total_jacobian(NodeId p, NodeId w);
  const Matrix& loss_hessian();

  // sum_{u in Ch(v)} sum_{p in Pa(u)} C_{u;v,p} J_{p<-w}, excluding the loss
  // node: the tensor-source term of the one-sided recursion.
  Matrix tensor_source(NodeId v, NodeId w);

  std::size_t computations(NodeId v, NodeId w, Component c) const;
  std::size_t cached_blocks() const { return cache_.size(); }
  bool idle() const { return in_progress_.empty(); }

 private:
  using Key = std::tuple<std::size_t, std::size_t, int>;

  Matrix compute(NodeId v, NodeId w, Component c);
  Matrix canonical(NodeId v, NodeId w, Component c);
  Matrix one_sided(NodeId v, NodeId w, Component c);
  Matrix zero(NodeId v, NodeId w) const;

  const Graph& g_;
  const ForwardState& fs_;
  const BackwardState& bs_;
  EngineOptions options_;
  std::map<Key, Matrix> cache_;
  std::set<Key> in_progress_;
  std::map<Key, std::size_t> counts_;
  std::map<std::pair<std::size_t, std::size_t>, Matrix> edges_;
  std::map<std::pair<std::size_t, std::size_t>, Matrix> totals_;
  std::map<Key, Matrix> contractions_;
  std::map<std::size_t, Matrix> param_jacobians_;
  std::unique_ptr<Matrix> loss_hessian_;

  const Matrix& contraction(NodeId u, NodeId v, NodeId p);
  const Matrix& param_jacobian(NodeId v);
};

// Batch-mean blocks over per-sample engines.
class BatchHessian {
 public:
  BatchHessian(const Graph& g, std::vector<Evaluation> evals, EngineOptions options = {});
  BatchHessian(const Graph& g, std::span<const double> theta, const Batch& batch,
               EngineOptions options = {});

  const Graph& graph() const { return g_; }
  std::size_t batch_size() const { return evals_.size(); }
  HessianEngine& engine(std::size_t i) { return *engines_[i]; }
  const std::vector<Evaluation>& evaluations() const { return evals_; }

  Matrix input_block(NodeId v, NodeId w, Component c = Component::kFull);
  Matrix param_block(NodeId v, NodeId w, Component c = Component::kFull);

 private:
  const Graph& g_;
  std::vector<Evaluation> evals_;
  std::vector<std::unique_ptr<HessianEngine>> engines_;
};

// (a + b^T) / 2 for a = H_{v,w}, b = H_{w,v}.
Matrix symmetrize_pair(const Matrix& hvw, const Matrix& hwv);

inline constexpr std::size_t kDefaultAssemblyCap = 5000;
inline constexpr std::size_t kHardAssemblyCap = 20000;

struct AssemblyOptions {
  std::size_t cap = kDefaultAssemblyCap;
  // Raises the cap to kHardAssemblyCap.
  bool allow_large = false;
  Component component = Component::kFull;
};

// Dense P x P batch-mean Hessian of the loss with respect to theta. Shared
// parameter groups receive the sum of all member pair blocks.
Matrix assemble_full_hessian(BatchHessian& batch, AssemblyOptions options = {});
Matrix assemble_full_hessian(const Graph& g, std::span<const double> theta, const Batch& batch,
                             AssemblyOptions options = {});

// Dense block matrix [H_{v,w}] over the given nodes (input space).
Matrix assemble_input_hessian(BatchHessian& batch, const std::vector<NodeId>& nodes,
                              Component c = Component::kFull);

// Pair-indexed collection of blocks.
class BlockMatrix {
 public:
  void set(NodeId v, NodeId w, Matrix m) { blocks_[{v.index, w.index}] = std::move(m); }
  const Matrix* find(NodeId v, NodeId w) const;
  const std::map<std::pair<std::size_t, std::size_t>, Matrix>& blocks() const { return blocks_; }
  std::size_t size() const { return blocks_.size(); }

 private:
  std::map<std::pair<std::size_t, std::size_t>, Matrix> blocks_;
};

}  // namespace hessdag

#endif  // HESSDAG_HESSIAN_HPP_
