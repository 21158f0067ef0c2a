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

// Typed DAG of node functions with parameter slots, validation, topological
// order and the structural queries used by the curvature theorems.

#ifndef HESSDAG_GRAPH_HPP_
#define HESSDAG_GRAPH_HPP_

#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hessdag/error.hpp"

namespace hessdag {

struct NodeId {
  std::size_t index = 0;
  friend auto operator<=>(const NodeId&, const NodeId&) = default;
};

enum class OpKind {
  kInput,
  kLinear,
  kActivation,
  kSumMerge,
  kConcatMerge,
  kMeanPoolRows,
  kSoftmaxAttention,
  kLossMse,
  kLossSoftmaxCe,
};

enum class Activation { kReLU, kLeakyReLU, kSoftplus, kSiLU, kGELU, kTanh };

constexpr double kLeakySlope = 0.01;

std::string_view op_kind_name(OpKind kind);
std::optional<OpKind> parse_op_kind(std::string_view name);
std::string_view activation_name(Activation fn);
std::optional<Activation> parse_activation(std::string_view name);
bool is_piecewise_linear(Activation fn);
bool is_loss(OpKind kind);

// Unvalidated node description. Shapes other than the Input shape are inferred.
struct NodeSpec {
  std::string name;
  OpKind kind = OpKind::kInput;
  std::vector<std::string> parents;
  std::size_t rows = 1;   // Input: sequence length
  std::size_t cols = 0;   // Input: feature dimension; Linear: output features
  bool bias = true;       // Linear
  Activation activation = Activation::kReLU;
  std::size_t num_classes = 0;  // LossSoftmaxCe
  bool measure = false;         // designated measurement point
};

// Builder and serializable description of a graph.
class GraphSpec {
 public:
  std::vector<NodeSpec> nodes;
  std::string out;
  std::map<std::string, std::vector<std::string>> sharing;

  const std::string& add(NodeSpec node);
  const std::string& input(std::string name, std::size_t dim, std::size_t rows = 1);
  const std::string& linear(std::string name, const std::string& parent, std::size_t out_dim,
                            bool bias = true);
  const std::string& activation(std::string name, const std::string& parent, Activation fn);
  const std::string& sum(std::string name, std::vector<std::string> parents);
  const std::string& concat(std::string name, std::vector<std::string> parents);
  const std::string& mean_pool(std::string name, const std::string& parent);
  const std::string& attention(std::string name, const std::string& q, const std::string& k,
                               const std::string& v);
  // Loss constructors also set `out`.
  const std::string& mse(std::string name, const std::string& parent);
  const std::string& softmax_ce(std::string name, const std::string& parent,
                                std::size_t num_classes);
  void share(const std::string& group, std::vector<std::string> members);
  void mark_measure(const std::string& name, bool on = true);
};

struct Node {
  NodeId id;
  std::string name;
  OpKind kind = OpKind::kInput;
  std::vector<NodeId> parents;
  std::vector<NodeId> children;
  std::size_t rows = 1;
  std::size_t cols = 0;
  std::size_t in_cols = 0;  // Linear input features
  bool bias = true;
  Activation activation = Activation::kReLU;
  std::size_t num_classes = 0;
  bool measure = false;
  std::size_t param_offset = 0;
  std::size_t param_count = 0;
  std::optional<std::string> param_group;

  std::size_t dim() const { return rows * cols; }
  bool has_params() const { return param_count > 0; }
};

struct ValidationResult {
  bool ok = true;
  ErrorCode code = ErrorCode::kInternal;
  std::string message;
};

// Reports the first violated invariant of `spec`.
ValidationResult validate(const GraphSpec& spec);

class Graph {
 public:
  // Validates and freezes the spec. Throws Error on the first violation.
  static Graph build(const GraphSpec& spec);

  const GraphSpec& spec() const { return spec_; }
  std::size_t size() const { return nodes_.size(); }
  const Node& node(NodeId id) const { return nodes_.at(id.index); }
  const std::vector<Node>& nodes() const { return nodes_; }
  NodeId find(std::string_view name) const;

  NodeId out() const { return out_; }
  // The node whose value enters the loss.
  NodeId prediction() const { return nodes_[out_.index].parents.front(); }
  const std::vector<NodeId>& inputs() const { return inputs_; }
  const std::vector<NodeId>& topological_order() const { return topo_; }

  std::size_t param_count() const { return param_count_; }
  std::vector<NodeId> param_nodes() const;
  // Non-input, non-loss nodes; restricted to measure-flagged nodes when any exist.
  std::vector<NodeId> measurement_nodes() const;

  bool is_ancestor_or_self(NodeId ancestor, NodeId node) const {
    return reach_[ancestor.index][node.index];
  }
  int depth(NodeId v) const { return depth_[v.index]; }

 private:
  GraphSpec spec_;
  std::vector<Node> nodes_;
  std::vector<NodeId> inputs_;
  std::vector<NodeId> topo_;
  std::vector<std::vector<bool>> reach_;
  std::vector<int> depth_;
  NodeId out_;
  std::size_t param_count_ = 0;
};

std::vector<NodeId> topological_order(const Graph& g);

inline constexpr std::size_t kUnreachable = std::numeric_limits<std::size_t>::max();

// Undirected BFS distance; kUnreachable when no path exists.
std::size_t graph_distance(const Graph& g, NodeId v, NodeId w);

// Desc(v) including v itself, ascending by index.
std::vector<NodeId> descendants(const Graph& g, NodeId v);
std::vector<NodeId> common_descendants(const Graph& g, NodeId v, NodeId w);

struct PathList {
  std::vector<std::vector<NodeId>> paths;
  bool overflow = false;
};

inline constexpr std::size_t kDefaultPathCap = 1'000'000;

// All directed v -> c paths in lexicographic order of node indices.
PathList enumerate_paths(const Graph& g, NodeId v, NodeId c,
                         std::size_t cap = kDefaultPathCap);

}  // namespace hessdag

template <>
struct std::hash<hessdag::NodeId> {
  std::size_t operator()(const hessdag::NodeId& id) const noexcept {
    return std::hash<std::size_t>{}(id.index);
  }
};

#endif  // HESSDAG_GRAPH_HPP_
