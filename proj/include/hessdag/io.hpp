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

// File formats: graph-spec JSON, block CSV/JSON, metrics and profile CSV.

#ifndef HESSDAG_IO_HPP_
#define HESSDAG_IO_HPP_

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "hessdag/decomposition.hpp"
#include "hessdag/diagnostics.hpp"
#include "hessdag/graph.hpp"
#include "hessdag/hessian.hpp"
#include "hessdag/linalg.hpp"

namespace hessdag {

// {"nodes": [{"id", "kind", "parents", ...}], "out", "sharing"}. Unknown
// kinds, missing fields and malformed JSON raise kConfigError.
std::string graph_to_json(const GraphSpec& spec, int indent = 2);
GraphSpec graph_from_json(std::string_view text);
GraphSpec load_graph(const std::filesystem::path& path);
void save_graph(const GraphSpec& spec, const std::filesystem::path& path);

// Stable 16-hex-digit FNV-1a hash of the canonical JSON form.
std::string graph_hash(const GraphSpec& spec);
std::string text_hash(std::string_view text);

// Shortest round-trip decimal form.
std::string format_double(double x);

// "rows,cols" then one line per row.
void write_block_csv(std::ostream& os, const Matrix& m);
void write_block_csv(const std::filesystem::path& path, const Matrix& m);
Matrix read_block_csv(std::istream& is);
Matrix read_block_csv(const std::filesystem::path& path);

// {"v,w": {"rows", "cols", "data": [[...]]}} keyed by node names.
std::string blocks_to_json(const Graph& g, const BlockMatrix& blocks);

// Norms and gap, plus the dense gn/tensor/full payloads when `dense`.
std::string decomposed_to_json(const DecomposedBlock& b, bool dense = false);

struct CsvProvenance {
  std::string metric;
  std::string graph_hash;
  std::uint64_t seed = 0;
  std::string checkpoint;
};

// First line: "# metric=... graph=... seed=... checkpoint=...".
void write_metrics_csv(std::ostream& os, const Graph& g, const std::vector<PairMetrics>& metrics,
                       const CsvProvenance& prov);
void write_profile_csv(std::ostream& os, const DistanceProfile& profile, const CsvProvenance& prov);

void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

}  // namespace hessdag

#endif  // HESSDAG_IO_HPP_
