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

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <sstream>

#include "test_support.hpp"

namespace hessdag {
namespace {

using testing::attention_spec;
using testing::chain_spec;
using testing::diamond_spec;
using testing::random_batch;
using testing::random_theta;

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "hessdag_test_io" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

GraphSpec mixed_spec() {
  GraphSpec s;
  s.input("x", 3, 2);
  s.linear("a", "x", 4);
  s.activation("b", "a", Activation::kSiLU);
  s.linear("c", "x", 4);
  s.linear("c2", "x", 2, false);
  s.sum("d", {"b", "c"});
  s.concat("d2", {"d", "c2"});
  s.mean_pool("p", "d2");
  s.linear("e", "p", 3);
  s.softmax_ce("loss", "e", 3);
  s.share("tied", {"a", "c"});
  s.mark_measure("b");
  return s;
}

void expect_same_spec(const GraphSpec& a, const GraphSpec& b) {
  ASSERT_EQ(a.nodes.size(), b.nodes.size());
  for (std::size_t i = 0; i < a.nodes.size(); ++i) {
    const auto& x = a.nodes[i];
    const auto& y = b.nodes[i];
    EXPECT_EQ(x.name, y.name);
    EXPECT_EQ(x.kind, y.kind);
    EXPECT_EQ(x.parents, y.parents);
    EXPECT_EQ(x.cols, y.cols);
    EXPECT_EQ(x.measure, y.measure);
    if (x.kind == OpKind::kInput) EXPECT_EQ(x.rows, y.rows);
    if (x.kind == OpKind::kLinear) EXPECT_EQ(x.bias, y.bias);
    if (x.kind == OpKind::kActivation) EXPECT_EQ(x.activation, y.activation);
    if (x.kind == OpKind::kLossSoftmaxCe) EXPECT_EQ(x.num_classes, y.num_classes);
  }
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(a.sharing, b.sharing);
}

TEST(GraphJson, RoundTripPreservesEveryField) {
  for (const auto& spec : {mixed_spec(), chain_spec(3, 4, Activation::kGELU), attention_spec(3, 4),
                           diamond_spec(3, Activation::kReLU, true)}) {
    const auto text = graph_to_json(spec);
    const auto back = graph_from_json(text);
    expect_same_spec(spec, back);
    EXPECT_EQ(graph_to_json(back), text);
    EXPECT_NO_THROW(Graph::build(back));
  }
}

TEST(GraphJson, FileRoundTrip) {
  const auto dir = scratch("file");
  const auto spec = mixed_spec();
  save_graph(spec, dir / "g.json");
  expect_same_spec(spec, load_graph(dir / "g.json"));
}

TEST(GraphJson, HashIsStableAndSensitive) {
  const auto a = chain_spec(3, 4, Activation::kGELU);
  EXPECT_EQ(graph_hash(a), graph_hash(graph_from_json(graph_to_json(a))));
  EXPECT_EQ(graph_hash(a).size(), 16u);
  auto b = a;
  b.nodes[1].cols += 1;
  EXPECT_NE(graph_hash(a), graph_hash(b));
  EXPECT_EQ(text_hash(""), "cbf29ce484222325");
  EXPECT_EQ(text_hash("a"), "af63dc4c8601ec8c");
}

TEST(GraphJson, DefaultsApplyForOptionalFields) {
  const auto spec = graph_from_json(R"({"nodes":[
    {"id":"x","kind":"input","dim":2},
    {"id":"h","kind":"linear","parents":["x"],"out":1},
    {"id":"L","kind":"loss_mse","parents":["h"]}],"out":"L"})");
  EXPECT_EQ(spec.nodes[0].rows, 1u);
  EXPECT_TRUE(spec.nodes[1].bias);
  EXPECT_TRUE(spec.sharing.empty());
  EXPECT_NO_THROW(Graph::build(spec));
}

TEST(GraphJson, MalformedInputRaisesConfigError) {
  const char* bad[] = {
      "{",
      "[]",
      R"({"out":"L"})",
      R"({"nodes":[{"kind":"input","dim":2}]})",
      R"({"nodes":[{"id":"x","kind":"conv","dim":2}]})",
      R"({"nodes":[{"id":"x","kind":"input"}]})",
      R"({"nodes":[{"id":"x","kind":"input","dim":"two"}]})",
      R"({"nodes":[{"id":"a","kind":"activation","parents":["x"],"fn":"swish"}]})",
      R"({"nodes":[],"sharing":[1,2]})",
  };
  for (const char* text : bad) {
    try {
      graph_from_json(text);
      ADD_FAILURE() << "accepted: " << text;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kConfigError) << text;
    }
  }
}

TEST(GraphJson, MissingFileIsIoError) {
  try {
    load_graph("/nonexistent/hessdag/graph.json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kIoError);
  }
}

TEST(BlockCsv, RoundTripIsExact) {
  Matrix m = testing::random_matrix(3, 5, 7);
  m(0, 0) = 1.0 / 3.0;
  m(1, 1) = -0.0;
  m(2, 4) = 1e-300;
  std::stringstream ss;
  write_block_csv(ss, m);
  const auto text = ss.str();
  EXPECT_EQ(text.substr(0, 4), "3,5\n");
  const auto back = read_block_csv(ss);
  EXPECT_EQ(back, m);
}

TEST(BlockCsv, EmptyBlockRoundTrips) {
  std::stringstream ss;
  write_block_csv(ss, Matrix(0, 4));
  EXPECT_EQ(ss.str(), "0,4\n");
  const auto back = read_block_csv(ss);
  EXPECT_EQ(back.rows(), 0u);
  EXPECT_EQ(back.cols(), 4u);
}

TEST(BlockCsv, MalformedInputIsIoError) {
  for (const char* text : {"", "2;2\n", "2,2\n1,2\n", "1,2\n1\n", "1,2\n1,2,3\n", "1,1\nabc\n"}) {
    std::stringstream ss(text);
    EXPECT_THROW(read_block_csv(ss), Error) << text;
  }
}

TEST(BlockCsv, FileExportOfEngineBlock) {
  const auto g = Graph::build(chain_spec(2, 3, Activation::kTanh));
  const auto theta = random_theta(g, 1);
  BatchHessian h(g, theta, random_batch(g, 2, 2));
  const auto v = g.find("h0");
  const auto block = h.input_block(v, v);
  const auto dir = scratch("blocks");
  write_block_csv(dir / "h0_h0.csv", block);
  EXPECT_EQ(read_block_csv(dir / "h0_h0.csv"), block);
}

TEST(BlockJson, KeysAreNodeNames) {
  const auto g = Graph::build(chain_spec(2, 2, Activation::kTanh));
  BlockMatrix blocks;
  blocks.set(g.find("h0"), g.find("a1"), Matrix::from_rows({{1, 2}, {3, 4}}));
  const auto text = blocks_to_json(g, blocks);
  EXPECT_NE(text.find("\"h0,a1\""), std::string::npos);
  EXPECT_NE(text.find("\"rows\": 2"), std::string::npos);
  EXPECT_NE(text.find("4.0"), std::string::npos);
}

TEST(DecomposedJson, NormsAndOptionalPayload) {
  DecomposedBlock b{Matrix::from_rows({{3, 0}, {0, 4}}), Matrix::from_rows({{0, 1}, {1, 0}}),
                    Matrix::from_rows({{3, 1}, {1, 4}})};
  const auto brief = decomposed_to_json(b);
  EXPECT_NE(brief.find("\"gn_norm\": 5.0"), std::string::npos);
  EXPECT_EQ(brief.find("\"full\":"), std::string::npos);
  const auto dense = decomposed_to_json(b, true);
  EXPECT_NE(dense.find("\"tensor\":"), std::string::npos);
}

TEST(FormatDouble, ShortestRoundTrip) {
  EXPECT_EQ(format_double(0.1), "0.1");
  EXPECT_EQ(format_double(1e-300), "1e-300");
  const double x = 0.1 + 0.2;
  EXPECT_EQ(std::stod(format_double(x)), x);
  EXPECT_EQ(format_double(std::numeric_limits<double>::infinity()), "inf");
}

TEST(MetricsCsv, HeaderColumnsAndRows) {
  const auto g = Graph::build(chain_spec(3, 3, Activation::kGELU));
  BatchHessian h(g, random_theta(g, 3), random_batch(g, 2, 4));
  const auto nodes = g.measurement_nodes();
  const auto metrics = pair_metrics(h, nodes);
  CsvProvenance prov{"all", graph_hash(g.spec()), 42, "init"};
  std::ostringstream os;
  write_metrics_csv(os, g, metrics, prov);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "# metric=all graph=" + prov.graph_hash + " seed=42 checkpoint=init");
  std::getline(is, line);
  EXPECT_EQ(line, "pair_v,pair_w,dist,resonance,coupling,stable_rank,d_eff,gn_gap,flags");
  std::size_t rows = 0;
  while (std::getline(is, line)) {
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 8) << line;
    ++rows;
  }
  EXPECT_EQ(rows, metrics.size());
  EXPECT_EQ(rows, nodes.size() * (nodes.size() + 1) / 2);
}

TEST(ProfileCsv, HeaderAndRows) {
  DistanceProfile p;
  p.metric = MetricKind::kResonance;
  p.rows = {{0, 2.0, 0.5, 3}, {1, 0.25, 0.0, 2}};
  std::ostringstream os;
  write_profile_csv(os, p, {"resonance", "abcd", 7, "final"});
  EXPECT_EQ(os.str(),
            "# metric=resonance graph=abcd seed=7 checkpoint=final\n"
            "dist,mean,std,count\n0,2,0.5,3\n1,0.25,0,2\n");
}

}  // namespace
}  // namespace hessdag
