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

#include "hessdag/graph.hpp"

#include <algorithm>
#include <deque>
#include <functional>
#include <queue>
#include <set>
#include <unordered_map>

namespace hessdag {
namespace {

[[noreturn]] void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

std::string shape_str(std::size_t rows, std::size_t cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

}  // namespace

std::string_view op_kind_name(OpKind kind) {
  switch (kind) {
    case OpKind::kInput: return "input";
    case OpKind::kLinear: return "linear";
    case OpKind::kActivation: return "activation";
    case OpKind::kSumMerge: return "sum";
    case OpKind::kConcatMerge: return "concat";
    case OpKind::kMeanPoolRows: return "mean_pool_rows";
    case OpKind::kSoftmaxAttention: return "softmax_attention";
    case OpKind::kLossMse: return "loss_mse";
    case OpKind::kLossSoftmaxCe: return "loss_softmax_ce";
  }
  return "unknown";
}

std::optional<OpKind> parse_op_kind(std::string_view name) {
  for (OpKind k : {OpKind::kInput, OpKind::kLinear, OpKind::kActivation, OpKind::kSumMerge,
                   OpKind::kConcatMerge, OpKind::kMeanPoolRows, OpKind::kSoftmaxAttention,
                   OpKind::kLossMse, OpKind::kLossSoftmaxCe}) {
    if (op_kind_name(k) == name) return k;
  }
  return std::nullopt;
}

std::string_view activation_name(Activation fn) {
  switch (fn) {
    case Activation::kReLU: return "relu";
    case Activation::kLeakyReLU: return "leaky_relu";
    case Activation::kSoftplus: return "softplus";
    case Activation::kSiLU: return "silu";
    case Activation::kGELU: return "gelu";
    case Activation::kTanh: return "tanh";
  }
  return "unknown";
}

std::optional<Activation> parse_activation(std::string_view name) {
  for (Activation a : {Activation::kReLU, Activation::kLeakyReLU, Activation::kSoftplus,
                       Activation::kSiLU, Activation::kGELU, Activation::kTanh}) {
    if (activation_name(a) == name) return a;
  }
  return std::nullopt;
}

bool is_piecewise_linear(Activation fn) {
  return fn == Activation::kReLU || fn == Activation::kLeakyReLU;
}

bool is_loss(OpKind kind) { return kind == OpKind::kLossMse || kind == OpKind::kLossSoftmaxCe; }

const std::string& GraphSpec::add(NodeSpec node) {
  nodes.push_back(std::move(node));
  return nodes.back().name;
}

const std::string& GraphSpec::input(std::string name, std::size_t dim, std::size_t rows) {
  NodeSpec n;
  n.name = std::move(name);
  n.kind = OpKind::kInput;
  n.rows = rows;
  n.cols = dim;
  return add(std::move(n));
}

const std::string& GraphSpec::linear(std::string name, const std::string& parent,
                                     std::size_t out_dim, bool bias) {
  NodeSpec n;
  n.name = std::move(name);
  n.kind = OpKind::kLinear;
  n.parents = {parent};
  n.cols = out_dim;
  n.bias = bias;
  return add(std::move(n));
}

const std::string& GraphSpec::activation(std::string name, const std::string& parent,
                                         Activation fn) {
  NodeSpec n;
  n.name = std::move(name);
  n.kind = OpKind::kActivation;
  n.parents = {parent};
  n.activation = fn;
  return add(std::move(n));
}

const std::string& GraphSpec::sum(std::string name, std::vector<std::string> parents) {
  NodeSpec n;
  n.name = std::move(name);
  n.kind = OpKind::kSumMerge;
  n.parents = std::move(parents);
  return add(std::move(n));
}

const std::string& GraphSpec::concat(std::string name, std::vector<std::string> parents) {
  NodeSpec n;
  n.name = std::move(name);
  n.kind = OpKind::kConcatMerge;
  n.parents = std::move(parents);
  return add(std::move(n));
}

const std::string& GraphSpec::mean_pool(std::string name, const std::string& parent) {
  NodeSpec n;
  n.name = std::move(name);
  n.kind = OpKind::kMeanPoolRows;
  n.parents = {parent};
  return add(std::move(n));
}

const std::string& GraphSpec::attention(std::string name, const std::string& q,
                                        const std::string& k, const std::string& v) {
  NodeSpec n;
  n.name = std::move(name);
  n.kind = OpKind::kSoftmaxAttention;
  n.parents = {q, k, v};
  return add(std::move(n));
}

const std::string& GraphSpec::mse(std::string name, const std::string& parent) {
  NodeSpec n;
  n.name = std::move(name);
  n.kind = OpKind::kLossMse;
  n.parents = {parent};
  out = n.name;
  return add(std::move(n));
}

const std::string& GraphSpec::softmax_ce(std::string name, const std::string& parent,
                                         std::size_t num_classes) {
  NodeSpec n;
  n.name = std::move(name);
  n.kind = OpKind::kLossSoftmaxCe;
  n.parents = {parent};
  n.num_classes = num_classes;
  out = n.name;
  return add(std::move(n));
}

void GraphSpec::share(const std::string& group, std::vector<std::string> members) {
  sharing[group] = std::move(members);
}

void GraphSpec::mark_measure(const std::string& name, bool on) {
  for (auto& n : nodes) {
    if (n.name == name) {
      n.measure = on;
      return;
    }
  }
  fail(ErrorCode::kUnknownNode, "no node named '" + name + "'");
}

ValidationResult validate(const GraphSpec& spec) {
  try {
    Graph::build(spec);
  } catch (const Error& e) {
    return {false, e.code(), e.what()};
  }
  return {};
}

Graph Graph::build(const GraphSpec& spec) {
  Graph g;
  g.spec_ = spec;
  const std::size_t n = spec.nodes.size();
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < n; ++i) {
    const NodeSpec& s = spec.nodes[i];
    if (s.name.empty()) fail(ErrorCode::kInvalidArgument, "node " + std::to_string(i) + " has no id");
    if (!index.emplace(s.name, i).second) {
      fail(ErrorCode::kInvalidArgument, "duplicate node id '" + s.name + "'");
    }
  }

  g.nodes_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const NodeSpec& s = spec.nodes[i];
    Node& node = g.nodes_[i];
    node.id = NodeId{i};
    node.name = s.name;
    node.kind = s.kind;
    node.bias = s.bias;
    node.activation = s.activation;
    node.num_classes = s.num_classes;
    node.measure = s.measure;
    for (const std::string& p : s.parents) {
      auto it = index.find(p);
      if (it == index.end()) {
        fail(ErrorCode::kDanglingParent, "node '" + s.name + "' references unknown parent '" + p + "'");
      }
      if (it->second == i) fail(ErrorCode::kCycleDetected, "self-loop on node '" + s.name + "'");
      NodeId pid{it->second};
      if (std::find(node.parents.begin(), node.parents.end(), pid) != node.parents.end()) {
        fail(ErrorCode::kInvalidArgument, "node '" + s.name + "' lists parent '" + p + "' twice");
      }
      node.parents.push_back(pid);
    }
    if (s.kind == OpKind::kInput && !node.parents.empty()) {
      fail(ErrorCode::kInvalidArgument, "input node '" + s.name + "' cannot have parents");
    }
    if (s.kind != OpKind::kInput && node.parents.empty()) {
      fail(ErrorCode::kDanglingParent, "node '" + s.name + "' has no parents");
    }
  }
  for (const Node& node : g.nodes_) {
    for (NodeId p : node.parents) g.nodes_[p.index].children.push_back(node.id);
  }

  // Kahn's algorithm, smallest insertion index first.
  std::vector<std::size_t> indegree(n);
  for (std::size_t i = 0; i < n; ++i) indegree[i] = g.nodes_[i].parents.size();
  std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> ready;
  for (std::size_t i = 0; i < n; ++i) {
    if (indegree[i] == 0) ready.push(i);
  }
  while (!ready.empty()) {
    const std::size_t i = ready.top();
    ready.pop();
    g.topo_.push_back(NodeId{i});
    for (NodeId c : g.nodes_[i].children) {
      if (--indegree[c.index] == 0) ready.push(c.index);
    }
  }
  if (g.topo_.size() != n) {
    for (std::size_t i = 0; i < n; ++i) {
      if (indegree[i] > 0) fail(ErrorCode::kCycleDetected, "cycle through node '" + g.nodes_[i].name + "'");
    }
  }

  // Shapes in topological order.
  for (NodeId id : g.topo_) {
    Node& node = g.nodes_[id.index];
    const NodeSpec& s = spec.nodes[id.index];
    auto parent = [&](std::size_t k) -> const Node& { return g.nodes_[node.parents[k].index]; };
    auto require_parents = [&](std::size_t count) {
      if (node.parents.size() != count) {
        fail(ErrorCode::kInvalidArgument, "node '" + node.name + "' of kind " +
                                              std::string(op_kind_name(node.kind)) + " needs " +
                                              std::to_string(count) + " parent(s)");
      }
    };
    switch (node.kind) {
      case OpKind::kInput:
        if (s.rows == 0 || s.cols == 0) {
          fail(ErrorCode::kDimensionMismatch, "input '" + node.name + "' has an empty shape");
        }
        node.rows = s.rows;
        node.cols = s.cols;
        g.inputs_.push_back(id);
        break;
      case OpKind::kLinear:
        require_parents(1);
        if (s.cols == 0) fail(ErrorCode::kDimensionMismatch, "linear '" + node.name + "' has out=0");
        node.rows = parent(0).rows;
        node.in_cols = parent(0).cols;
        node.cols = s.cols;
        node.param_count = node.cols * node.in_cols + (node.bias ? node.cols : 0);
        break;
      case OpKind::kActivation:
        require_parents(1);
        node.rows = parent(0).rows;
        node.cols = parent(0).cols;
        break;
      case OpKind::kSumMerge:
        node.rows = parent(0).rows;
        node.cols = parent(0).cols;
        for (std::size_t k = 1; k < node.parents.size(); ++k) {
          if (parent(k).rows != node.rows || parent(k).cols != node.cols) {
            fail(ErrorCode::kDimensionMismatch,
                 "sum '" + node.name + "' merges shapes " + shape_str(node.rows, node.cols) +
                     " and " + shape_str(parent(k).rows, parent(k).cols));
          }
        }
        break;
      case OpKind::kConcatMerge:
        node.rows = parent(0).rows;
        node.cols = 0;
        for (std::size_t k = 0; k < node.parents.size(); ++k) {
          if (parent(k).rows != node.rows) {
            fail(ErrorCode::kDimensionMismatch, "concat '" + node.name + "' row counts differ");
          }
          node.cols += parent(k).cols;
        }
        break;
      case OpKind::kMeanPoolRows:
        require_parents(1);
        node.rows = 1;
        node.cols = parent(0).cols;
        break;
      case OpKind::kSoftmaxAttention: {
        require_parents(3);
        const Node& q = parent(0);
        const Node& k = parent(1);
        const Node& v = parent(2);
        if (q.rows != k.rows || q.rows != v.rows) {
          fail(ErrorCode::kDimensionMismatch, "attention '" + node.name + "' row counts differ");
        }
        if (q.cols != k.cols) {
          fail(ErrorCode::kDimensionMismatch, "attention '" + node.name + "' has Q/K widths " +
                                                  std::to_string(q.cols) + " and " +
                                                  std::to_string(k.cols));
        }
        node.rows = q.rows;
        node.cols = v.cols;
        break;
      }
      case OpKind::kLossMse:
        require_parents(1);
        node.rows = 1;
        node.cols = 1;
        break;
      case OpKind::kLossSoftmaxCe:
        require_parents(1);
        if (s.num_classes < 2 || parent(0).dim() != s.num_classes) {
          fail(ErrorCode::kDimensionMismatch,
               "softmax cross-entropy '" + node.name + "' expects " + std::to_string(s.num_classes) +
                   " logits, parent provides " + std::to_string(parent(0).dim()));
        }
        node.rows = 1;
        node.cols = 1;
        break;
    }
  }

  std::vector<NodeId> losses;
  for (const Node& node : g.nodes_) {
    if (is_loss(node.kind)) losses.push_back(node.id);
  }
  if (losses.empty()) fail(ErrorCode::kMissingOutput, "graph has no loss node");
  if (losses.size() > 1) {
    fail(ErrorCode::kMultipleOutputs, "graph has " + std::to_string(losses.size()) + " loss nodes");
  }
  g.out_ = losses.front();
  if (!spec.out.empty() && spec.out != g.nodes_[g.out_.index].name) {
    auto it = index.find(spec.out);
    if (it == index.end()) fail(ErrorCode::kUnknownNode, "out names unknown node '" + spec.out + "'");
    fail(ErrorCode::kInvalidArgument, "out '" + spec.out + "' is not the loss node");
  }
  for (const Node& node : g.nodes_) {
    if (node.id == g.out_) {
      if (!node.children.empty()) {
        fail(ErrorCode::kInvalidArgument, "loss node '" + node.name + "' cannot feed other nodes");
      }
    } else if (node.children.empty()) {
      fail(ErrorCode::kMultipleOutputs, "node '" + node.name + "' has no consumer besides the loss path");
    }
  }

  // Parameter slots; shared groups occupy one slice.
  std::unordered_map<std::string, std::string> group_of;
  for (const auto& [group, members] : spec.sharing) {
    if (members.empty()) fail(ErrorCode::kInvalidArgument, "sharing group '" + group + "' is empty");
    const Node* first = nullptr;
    for (const std::string& m : members) {
      auto it = index.find(m);
      if (it == index.end()) fail(ErrorCode::kUnknownNode, "sharing group '" + group + "' names unknown node '" + m + "'");
      const Node& node = g.nodes_[it->second];
      if (node.kind != OpKind::kLinear) {
        fail(ErrorCode::kInvalidArgument, "sharing group '" + group + "' contains non-linear node '" + m + "'");
      }
      if (!group_of.emplace(m, group).second) {
        fail(ErrorCode::kInvalidArgument, "node '" + m + "' belongs to two sharing groups");
      }
      if (first != nullptr && (first->in_cols != node.in_cols || first->cols != node.cols ||
                               first->bias != node.bias)) {
        fail(ErrorCode::kDimensionMismatch, "sharing group '" + group + "' mixes parameter shapes");
      }
      first = &node;
    }
  }
  std::unordered_map<std::string, std::size_t> group_offset;
  for (Node& node : g.nodes_) {
    if (!node.has_params()) continue;
    auto git = group_of.find(node.name);
    if (git != group_of.end()) {
      node.param_group = git->second;
      auto [it, inserted] = group_offset.emplace(git->second, g.param_count_);
      node.param_offset = it->second;
      if (inserted) g.param_count_ += node.param_count;
    } else {
      node.param_offset = g.param_count_;
      g.param_count_ += node.param_count;
    }
  }

  g.reach_.assign(n, std::vector<bool>(n, false));
  for (auto it = g.topo_.rbegin(); it != g.topo_.rend(); ++it) {
    const std::size_t v = it->index;
    g.reach_[v][v] = true;
    for (NodeId c : g.nodes_[v].children) {
      for (std::size_t k = 0; k < n; ++k) {
        if (g.reach_[c.index][k]) g.reach_[v][k] = true;
      }
    }
  }
  g.depth_.assign(n, 0);
  for (NodeId id : g.topo_) {
    for (NodeId p : g.nodes_[id.index].parents) {
      g.depth_[id.index] = std::max(g.depth_[id.index], g.depth_[p.index] + 1);
    }
  }
  return g;
}

NodeId Graph::find(std::string_view name) const {
  for (const Node& node : nodes_) {
    if (node.name == name) return node.id;
  }
  throw Error(ErrorCode::kUnknownNode, "no node named '" + std::string(name) + "'");
}

std::vector<NodeId> Graph::param_nodes() const {
  std::vector<NodeId> out;
  for (const Node& node : nodes_) {
    if (node.has_params()) out.push_back(node.id);
  }
  return out;
}

std::vector<NodeId> Graph::measurement_nodes() const {
  std::vector<NodeId> flagged;
  std::vector<NodeId> eligible;
  for (const Node& node : nodes_) {
    if (node.kind == OpKind::kInput || is_loss(node.kind)) continue;
    eligible.push_back(node.id);
    if (node.measure) flagged.push_back(node.id);
  }
  return flagged.empty() ? eligible : flagged;
}

std::vector<NodeId> topological_order(const Graph& g) { return g.topological_order(); }

std::size_t graph_distance(const Graph& g, NodeId v, NodeId w) {
  if (v.index >= g.size() || w.index >= g.size()) {
    throw Error(ErrorCode::kUnknownNode, "graph_distance: node out of range");
  }
  std::vector<std::size_t> dist(g.size(), kUnreachable);
  std::deque<NodeId> queue{v};
  dist[v.index] = 0;
  while (!queue.empty()) {
    const NodeId a = queue.front();
    queue.pop_front();
    if (a == w) return dist[a.index];
    auto visit = [&](NodeId b) {
      if (dist[b.index] == kUnreachable) {
        dist[b.index] = dist[a.index] + 1;
        queue.push_back(b);
      }
    };
    for (NodeId b : g.node(a).parents) visit(b);
    for (NodeId b : g.node(a).children) visit(b);
  }
  return dist[w.index];
}

std::vector<NodeId> descendants(const Graph& g, NodeId v) {
  std::vector<NodeId> out;
  for (std::size_t k = 0; k < g.size(); ++k) {
    if (g.is_ancestor_or_self(v, NodeId{k})) out.push_back(NodeId{k});
  }
  return out;
}

std::vector<NodeId> common_descendants(const Graph& g, NodeId v, NodeId w) {
  std::vector<NodeId> out;
  for (std::size_t k = 0; k < g.size(); ++k) {
    if (g.is_ancestor_or_self(v, NodeId{k}) && g.is_ancestor_or_self(w, NodeId{k})) {
      out.push_back(NodeId{k});
    }
  }
  return out;
}

PathList enumerate_paths(const Graph& g, NodeId v, NodeId c, std::size_t cap) {
  PathList result;
  if (!g.is_ancestor_or_self(v, c)) return result;
  std::vector<NodeId> path{v};
  std::function<bool(NodeId)> walk = [&](NodeId a) -> bool {
    if (a == c) {
      if (result.paths.size() >= cap) {
        result.overflow = true;
        return false;
      }
      result.paths.push_back(path);
      return true;
    }
    std::vector<NodeId> next = g.node(a).children;
    std::sort(next.begin(), next.end());
    for (NodeId b : next) {
      if (!g.is_ancestor_or_self(b, c)) continue;
      path.push_back(b);
      const bool keep_going = walk(b);
      path.pop_back();
      if (!keep_going) return false;
    }
    return true;
  };
  walk(v);
  return result;
}

}  // namespace hessdag
