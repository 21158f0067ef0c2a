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

#include "hessdag/io.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "json.hpp"

namespace hessdag {
namespace {

using nlohmann::ordered_json;

[[noreturn]] void config_error(const std::string& what) {
  throw Error(ErrorCode::kConfigError, what);
}

ordered_json node_to_json(const NodeSpec& n) {
  ordered_json j;
  j["id"] = n.name;
  j["kind"] = std::string(op_kind_name(n.kind));
  j["parents"] = n.parents;
  switch (n.kind) {
    case OpKind::kInput:
      j["dim"] = n.cols;
      j["rows"] = n.rows;
      break;
    case OpKind::kLinear:
      j["out"] = n.cols;
      j["bias"] = n.bias;
      break;
    case OpKind::kActivation:
      j["fn"] = std::string(activation_name(n.activation));
      break;
    case OpKind::kLossSoftmaxCe:
      j["classes"] = n.num_classes;
      break;
    default:
      break;
  }
  if (n.measure) j["measure"] = true;
  return j;
}

template <typename T>
T field(const ordered_json& j, const char* key, const std::string& node) {
  if (!j.contains(key)) config_error("node '" + node + "': missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    config_error("node '" + node + "': field '" + key + "' has the wrong type");
  }
}

template <typename T>
T field_or(const ordered_json& j, const char* key, const std::string& node, T fallback) {
  return j.contains(key) ? field<T>(j, key, node) : fallback;
}

NodeSpec node_from_json(const ordered_json& j) {
  if (!j.is_object()) config_error("node entry is not an object");
  NodeSpec n;
  n.name = field<std::string>(j, "id", "?");
  const auto kind_name = field<std::string>(j, "kind", n.name);
  const auto kind = parse_op_kind(kind_name);
  if (!kind) config_error("node '" + n.name + "': unknown kind '" + kind_name + "'");
  n.kind = *kind;
  n.parents = field_or<std::vector<std::string>>(j, "parents", n.name, {});
  switch (n.kind) {
    case OpKind::kInput:
      n.cols = field<std::size_t>(j, "dim", n.name);
      n.rows = field_or<std::size_t>(j, "rows", n.name, 1);
      break;
    case OpKind::kLinear:
      n.cols = field<std::size_t>(j, "out", n.name);
      n.bias = field_or<bool>(j, "bias", n.name, true);
      break;
    case OpKind::kActivation: {
      const auto fn = field<std::string>(j, "fn", n.name);
      const auto act = parse_activation(fn);
      if (!act) config_error("node '" + n.name + "': unknown activation '" + fn + "'");
      n.activation = *act;
      break;
    }
    case OpKind::kLossSoftmaxCe:
      n.num_classes = field<std::size_t>(j, "classes", n.name);
      break;
    default:
      break;
  }
  n.measure = field_or<bool>(j, "measure", n.name, false);
  return n;
}

ordered_json spec_to_json(const GraphSpec& spec) {
  ordered_json j;
  j["nodes"] = ordered_json::array();
  for (const auto& n : spec.nodes) j["nodes"].push_back(node_to_json(n));
  j["out"] = spec.out;
  j["sharing"] = ordered_json::object();
  for (const auto& [group, members] : spec.sharing) j["sharing"][group] = members;
  return j;
}

std::string write_row(std::span<const double> row) {
  std::string line;
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (i) line += ',';
    line += format_double(row[i]);
  }
  return line;
}

void write_provenance(std::ostream& os, const CsvProvenance& prov) {
  os << "# metric=" << prov.metric << " graph=" << prov.graph_hash << " seed=" << prov.seed
     << " checkpoint=" << prov.checkpoint << '\n';
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  return os;
}

}  // namespace

std::string graph_to_json(const GraphSpec& spec, int indent) {
  return spec_to_json(spec).dump(indent) + (indent >= 0 ? "\n" : "");
}

GraphSpec graph_from_json(std::string_view text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    config_error(std::string("malformed graph JSON: ") + e.what());
  }
  if (!j.is_object()) config_error("graph JSON must be an object");
  if (!j.contains("nodes") || !j["nodes"].is_array()) config_error("graph JSON needs a 'nodes' array");
  GraphSpec spec;
  for (const auto& n : j["nodes"]) spec.nodes.push_back(node_from_json(n));
  spec.out = field_or<std::string>(j, "out", "graph", "");
  if (j.contains("sharing")) {
    if (!j["sharing"].is_object()) config_error("'sharing' must map group names to node lists");
    for (const auto& [group, members] : j["sharing"].items()) {
      spec.sharing[group] = field<std::vector<std::string>>(j["sharing"], group.c_str(), "sharing");
    }
  }
  return spec;
}

GraphSpec load_graph(const std::filesystem::path& path) { return graph_from_json(read_text(path)); }

void save_graph(const GraphSpec& spec, const std::filesystem::path& path) {
  write_text(path, graph_to_json(spec));
}

std::string text_hash(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) out[static_cast<std::size_t>(i)] = kHex[h & 0xf];
  return out;
}

std::string graph_hash(const GraphSpec& spec) { return text_hash(graph_to_json(spec, -1)); }

std::string format_double(double x) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

void write_block_csv(std::ostream& os, const Matrix& m) {
  os << m.rows() << ',' << m.cols() << '\n';
  for (std::size_t i = 0; i < m.rows(); ++i) os << write_row(m.row(i)) << '\n';
}

void write_block_csv(const std::filesystem::path& path, const Matrix& m) {
  auto os = open_out(path);
  write_block_csv(os, m);
}

Matrix read_block_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw Error(ErrorCode::kIoError, "block CSV: missing header");
  std::size_t rows = 0, cols = 0;
  char comma = 0;
  std::istringstream header(line);
  if (!(header >> rows >> comma >> cols) || comma != ',') {
    throw Error(ErrorCode::kIoError, "block CSV: bad header '" + line + "'");
  }
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    if (!std::getline(is, line)) throw Error(ErrorCode::kIoError, "block CSV: truncated");
    const char* p = line.data();
    const char* end = line.data() + line.size();
    for (std::size_t j = 0; j < cols; ++j) {
      const auto res = std::from_chars(p, end, m(i, j));
      if (res.ec != std::errc()) throw Error(ErrorCode::kIoError, "block CSV: bad value in row " + std::to_string(i));
      p = res.ptr;
      if (j + 1 < cols) {
        if (p == end || *p != ',') throw Error(ErrorCode::kIoError, "block CSV: short row " + std::to_string(i));
        ++p;
      }
    }
    if (p != end) throw Error(ErrorCode::kIoError, "block CSV: long row " + std::to_string(i));
  }
  return m;
}

Matrix read_block_csv(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::kIoError, "cannot read " + path.string());
  return read_block_csv(is);
}

std::string blocks_to_json(const Graph& g, const BlockMatrix& blocks) {
  ordered_json j = ordered_json::object();
  for (const auto& [key, m] : blocks.blocks()) {
    const auto name = g.node(NodeId{key.first}).name + "," + g.node(NodeId{key.second}).name;
    ordered_json rows = ordered_json::array();
    for (std::size_t i = 0; i < m.rows(); ++i) {
      rows.push_back(std::vector<double>(m.row(i).begin(), m.row(i).end()));
    }
    j[name] = {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(rows)}};
  }
  return j.dump(2) + "\n";
}

std::string decomposed_to_json(const DecomposedBlock& b, bool dense) {
  ordered_json j;
  j["gn_norm"] = frobenius_norm(b.gn);
  j["tensor_norm"] = frobenius_norm(b.tensor);
  j["full_norm"] = frobenius_norm(b.full);
  j["gn_gap"] = gn_gap(b);
  if (dense) {
    const auto pack = [](const Matrix& m) {
      ordered_json rows = ordered_json::array();
      for (std::size_t i = 0; i < m.rows(); ++i) {
        rows.push_back(std::vector<double>(m.row(i).begin(), m.row(i).end()));
      }
      return rows;
    };
    j["gn"] = pack(b.gn);
    j["tensor"] = pack(b.tensor);
    j["full"] = pack(b.full);
  }
  return j.dump(2) + "\n";
}

void write_metrics_csv(std::ostream& os, const Graph& g, const std::vector<PairMetrics>& metrics,
                       const CsvProvenance& prov) {
  write_provenance(os, prov);
  os << "pair_v,pair_w,dist,resonance,coupling,stable_rank,d_eff,gn_gap,flags\n";
  for (const auto& m : metrics) {
    os << g.node(m.v).name << ',' << g.node(m.w).name << ',' << m.dist << ','
       << format_double(m.resonance) << ',' << format_double(m.coupling) << ','
       << format_double(m.stable_rank) << ',' << format_double(m.d_eff) << ','
       << format_double(m.gn_gap) << ',' << flag_string(m.flags) << '\n';
  }
}

void write_profile_csv(std::ostream& os, const DistanceProfile& profile, const CsvProvenance& prov) {
  write_provenance(os, prov);
  os << "dist,mean,std,count\n";
  for (const auto& r : profile.rows) {
    os << r.dist << ',' << format_double(r.mean) << ',' << format_double(r.std) << ',' << r.count
       << '\n';
  }
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  auto os = open_out(path);
  os << text;
  if (!os) throw Error(ErrorCode::kIoError, "write failed: " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::kIoError, "cannot read " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace hessdag
