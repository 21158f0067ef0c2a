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
// hessdag command-line tool.

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "hessdag/decomposition.hpp"
#include "hessdag/diagnostics.hpp"
#include "hessdag/error.hpp"
#include "hessdag/experiments.hpp"
#include "hessdag/hessian.hpp"
#include "hessdag/hvp.hpp"
#include "hessdag/io.hpp"
#include "hessdag/rng.hpp"

namespace fs = std::filesystem;
using namespace hessdag;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;
constexpr const char* kOutputRootEnv = "HESSDAG_OUTPUT_ROOT";

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kKinkProximity:
    case ErrorCode::kNonFiniteValue:
    case ErrorCode::kDiverged:
    case ErrorCode::kInsufficientData:
    case ErrorCode::kInternal:
      return kExitNumerical;
    default:
      return kExitConfig;
  }
}

// Relative paths are placed under $HESSDAG_OUTPUT_ROOT when it is set.
fs::path output_path(const fs::path& p) {
  const char* root = std::getenv(kOutputRootEnv);
  if (root == nullptr || *root == '\0' || p.is_absolute()) return p;
  return fs::path(root) / p;
}

struct PointOptions {
  std::string graph;
  std::uint64_t seed = 0;
  std::size_t batch = 8;
  std::string init = "xavier";
  std::string theta;
};

void add_point_options(CLI::App* cmd, PointOptions& o) {
  cmd->add_option("graph", o.graph, "Graph spec JSON")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "Seed for parameters and the synthetic batch");
  cmd->add_option("--batch", o.batch, "Synthetic batch size")->check(CLI::Range(1, 4096));
  cmd->add_option("--init", o.init, "Parameter init when --theta is absent")
      ->check(CLI::IsMember({"he", "xavier", "uniform"}));
  cmd->add_option("--theta", o.theta, "Parameter vector as a block CSV (1 x p or p x 1)")
      ->check(CLI::ExistingFile);
}

struct Point {
  Graph graph;
  Vector theta;
  Batch batch;
};

// N(0, 1) inputs, uniform labels and N(0, 1) regression targets.
Batch synthetic_batch(const Graph& g, std::size_t n, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x5eed));
  const Node& loss = g.node(g.out());
  const std::size_t pred_dim = g.node(g.prediction()).dim();
  Batch batch(n);
  for (auto& s : batch) {
    for (NodeId in : g.inputs()) s.inputs.push_back(rng.normal_vector(g.node(in).dim()));
    if (loss.kind == OpKind::kLossSoftmaxCe) {
      s.label = static_cast<std::size_t>(rng.uniform() * static_cast<double>(loss.num_classes)) %
                loss.num_classes;
    } else {
      s.target = rng.normal_vector(pred_dim);
    }
  }
  return batch;
}

Point load_point(const PointOptions& o) {
  Point p{Graph::build(load_graph(o.graph)), {}, {}};
  if (!o.theta.empty()) {
    const Matrix m = read_block_csv(fs::path(o.theta));
    p.theta.assign(m.data().begin(), m.data().end());
    if (p.theta.size() != p.graph.param_count()) {
      throw Error(ErrorCode::kDimensionMismatch,
                  "theta has " + std::to_string(p.theta.size()) + " entries, graph needs " +
                      std::to_string(p.graph.param_count()));
    }
  } else {
    const InitScheme scheme = o.init == "he"        ? InitScheme::kHe
                              : o.init == "uniform" ? InitScheme::kUniform
                                                    : InitScheme::kXavier;
    p.theta = init_params(p.graph, scheme, o.seed);
  }
  p.batch = synthetic_batch(p.graph, o.batch, o.seed);
  return p;
}

// "a:b,c:d" -> pairs of node ids.
std::vector<std::pair<NodeId, NodeId>> parse_pairs(const Graph& g, const std::string& text) {
  std::vector<std::pair<NodeId, NodeId>> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) {
      throw Error(ErrorCode::kConfigError, "pair '" + item + "' is not of the form v:w");
    }
    out.emplace_back(g.find(item.substr(0, colon)), g.find(item.substr(colon + 1)));
  }
  if (out.empty()) throw Error(ErrorCode::kConfigError, "no pairs given");
  return out;
}

std::vector<std::pair<NodeId, NodeId>> default_pairs(const Graph& g) {
  const auto nodes = g.measurement_nodes();
  std::vector<std::pair<NodeId, NodeId>> out;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    for (std::size_t j = i; j < nodes.size(); ++j) out.emplace_back(nodes[i], nodes[j]);
  }
  return out;
}

Component parse_component(const std::string& s) {
  if (s == "gn") return Component::kGaussNewton;
  if (s == "tensor") return Component::kTensor;
  return Component::kFull;
}

std::string safe_name(std::string s) {
  for (char& c : s) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-') c = '_';
  }
  return s;
}

int run_validate(const std::string& path) {
  const auto spec = load_graph(path);
  const auto result = validate(spec);
  if (!result.ok) {
    std::cerr << "invalid: " << error_code_name(result.code) << ": " << result.message << "\n";
    return kExitConfig;
  }
  const auto g = Graph::build(spec);
  std::cout << "ok nodes=" << g.size() << " params=" << g.param_count()
            << " measured=" << g.measurement_nodes().size() << " hash=" << graph_hash(spec)
            << "\n";
  return kExitOk;
}

int run_blocks(const PointOptions& po, const std::string& pairs, const std::string& component,
               const fs::path& out) {
  const auto p = load_point(po);
  const auto list = pairs.empty() ? default_pairs(p.graph) : parse_pairs(p.graph, pairs);
  const Component c = parse_component(component);
  BatchHessian h(p.graph, p.theta, p.batch);
  BlockMatrix blocks;
  const fs::path dir = output_path(out);
  fs::create_directories(dir);
  for (const auto& [v, w] : list) {
    Matrix m = h.input_block(v, w, c);
    write_block_csv(dir / (safe_name(p.graph.node(v).name) + "__" +
                           safe_name(p.graph.node(w).name) + ".csv"),
                    m);
    blocks.set(v, w, std::move(m));
  }
  write_text(dir / "blocks.json", blocks_to_json(p.graph, blocks));
  std::cout << "wrote " << list.size() << " blocks to " << dir.string() << "\n";
  return kExitOk;
}

int run_decompose(const PointOptions& po, const std::string& pair, bool dense,
                  const std::string& out) {
  const auto p = load_point(po);
  const auto list = parse_pairs(p.graph, pair);
  BatchHessian h(p.graph, p.theta, p.batch);
  const auto block = decompose(h, list.front().first, list.front().second);
  const std::string json = decomposed_to_json(block, dense);
  if (out.empty()) {
    std::cout << json;
  } else {
    write_text(output_path(out), json);
  }
  return kExitOk;
}

int run_metrics(const PointOptions& po, const fs::path& out, bool per_sample_rank) {
  const auto p = load_point(po);
  BatchHessian h(p.graph, p.theta, p.batch);
  MetricOptions opts;
  opts.per_sample_rank = per_sample_rank;
  const auto metrics = pair_metrics(h, p.graph.measurement_nodes(), opts);
  const fs::path dir = output_path(out);
  fs::create_directories(dir);
  CsvProvenance prov{"pairs", graph_hash(p.graph.spec()), po.seed, "cli"};
  {
    std::ostringstream os;
    write_metrics_csv(os, p.graph, metrics, prov);
    write_text(dir / "metrics.csv", os.str());
  }
  for (auto kind : {MetricKind::kResonance, MetricKind::kCoupling, MetricKind::kStableRank,
                    MetricKind::kDEff, MetricKind::kGnGap}) {
    prov.metric = metric_name(kind);
    std::ostringstream os;
    write_profile_csv(os, distance_profile(metrics, kind), prov);
    write_text(dir / (std::string("profile_") + metric_name(kind) + ".csv"), os.str());
  }
  std::cout << "wrote metrics for " << metrics.size() << " pairs to " << dir.string() << "\n";
  return kExitOk;
}

int run_hvp_bench(const PointOptions& po, std::size_t reps, std::size_t probes) {
  const auto p = load_point(po);
  const auto evals = evaluate_batch(p.graph, p.theta, p.batch);
  ProbeStream stream(mix_seed(po.seed, 0xb3c4));
  std::vector<double> ms;
  Vector sink;
  for (std::size_t k = 0; k < reps; ++k) {
    const Vector r = stream.probe(k, p.graph.param_count());
    const auto t0 = std::chrono::steady_clock::now();
    sink = param_hvp(p.graph, evals, r);
    ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                     .count());
  }
  std::sort(ms.begin(), ms.end());
  std::cout << "params=" << p.graph.param_count() << " batch=" << p.batch.size()
            << " hvp_median_ms=" << format_double(ms[ms.size() / 2])
            << " hvp_min_ms=" << format_double(ms.front()) << "\n";
  for (NodeId v : p.graph.measurement_nodes()) {
    const double gap = stochastic_gn_gap(p.graph, evals, v, v, probes, stream);
    const auto sr = stochastic_stable_rank(p.graph, evals, v, v, probes, kDefaultPowerIters, stream);
    std::cout << p.graph.node(v).name << " gn_gap~" << format_double(gap) << " stable_rank~"
              << format_double(sr.value) << (sr.degenerate ? " (degenerate)" : "") << "\n";
  }
  return kExitOk;
}

int run_experiment_cmd(const std::string& path, const std::string& out_dir,
                       const std::vector<std::uint64_t>& seeds) {
  auto cfg = load_config(path);
  if (!out_dir.empty()) cfg.output_dir = out_dir;
  if (!seeds.empty()) cfg.seeds = seeds;
  cfg.output_dir = output_path(cfg.output_dir);
  validate_config(cfg);
  const auto results = run_experiment(cfg);
  bool all_ok = true;
  for (const auto& r : results) {
    std::cout << "seed " << r.seed << (r.ok ? " ok" : " failed: " + r.failure) << " ("
              << format_double(r.wall_ms) << " ms)\n";
    all_ok = all_ok && r.ok;
  }
  const fs::path dir = cfg.output_dir / std::string(experiment_name(cfg.id));
  const auto report = emit_report(dir);
  std::cout << "report: " << (dir / "report.json").string() << " (" << report.summary.size()
            << " entries)\n";
  return all_ok ? kExitOk : kExitNumerical;
}

int run_report(const std::string& dir) {
  const auto report = emit_report(dir);
  std::cout << "experiment " << report.experiment << ": " << report.present_seeds.size() << " of "
            << report.expected_seeds.size() << " seeds present";
  if (!report.missing_seeds.empty()) {
    std::cout << ", missing";
    for (auto s : report.missing_seeds) std::cout << ' ' << s;
  }
  if (!report.failed_seeds.empty()) {
    std::cout << ", failed";
    for (auto s : report.failed_seeds) std::cout << ' ' << s;
  }
  std::cout << "\n";
  for (const auto& e : report.summary) {
    std::cout << e.variant << ' ' << e.checkpoint << ' ' << e.key << " = " << format_double(e.mean)
              << " +- " << format_double(e.std) << " (n=" << e.count << ")\n";
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Exact and stochastic inter-layer Hessian diagnostics for DAG networks"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "hessdag 0.1.0");

  std::string validate_path;
  auto* validate_cmd = app.add_subcommand("validate", "Check a graph spec");
  validate_cmd->add_option("graph", validate_path, "Graph spec JSON")
      ->required()
      ->check(CLI::ExistingFile);

  PointOptions blocks_po;
  std::string blocks_pairs, blocks_component = "full", blocks_out = "blocks";
  auto* blocks_cmd = app.add_subcommand("blocks", "Write input-Hessian blocks as CSV and JSON");
  add_point_options(blocks_cmd, blocks_po);
  blocks_cmd->add_option("--pairs", blocks_pairs, "v:w[,v:w...]; default all measured pairs");
  blocks_cmd->add_option("--component", blocks_component, "full, gn or tensor")
      ->check(CLI::IsMember({"full", "gn", "tensor"}));
  blocks_cmd->add_option("--out", blocks_out, "Output directory");

  PointOptions dec_po;
  std::string dec_pair, dec_out;
  bool dec_dense = false;
  auto* dec_cmd = app.add_subcommand("decompose", "GN / tensor split of one block");
  add_point_options(dec_cmd, dec_po);
  dec_cmd->add_option("--pair", dec_pair, "v:w")->required();
  dec_cmd->add_flag("--dense", dec_dense, "Include dense matrices");
  dec_cmd->add_option("--out", dec_out, "Output JSON file; stdout when absent");

  PointOptions met_po;
  std::string met_out = "metrics";
  bool met_per_sample = false;
  auto* met_cmd = app.add_subcommand("metrics", "Pair metrics and distance profiles");
  add_point_options(met_cmd, met_po);
  met_cmd->add_option("--out", met_out, "Output directory");
  met_cmd->add_flag("--per-sample-rank", met_per_sample, "Rank metrics per sample, then averaged");

  PointOptions hvp_po;
  std::size_t hvp_reps = 10, hvp_probes = 100;
  auto* hvp_cmd = app.add_subcommand("hvp-bench", "Time parametric HVPs and run the estimators");
  add_point_options(hvp_cmd, hvp_po);
  hvp_cmd->add_option("--reps", hvp_reps, "Timed HVPs")->check(CLI::Range(1, 100000));
  hvp_cmd->add_option("--probes", hvp_probes, "Probes per estimate")->check(CLI::Range(1, 100000));

  std::string exp_config, exp_out;
  std::vector<std::uint64_t> exp_seeds;
  auto* exp_cmd = app.add_subcommand("experiment", "Run an experiment config and aggregate it");
  exp_cmd->add_option("config", exp_config, "Experiment config JSON")
      ->required()
      ->check(CLI::ExistingFile);
  exp_cmd->add_option("--output-dir", exp_out, "Override the config output directory");
  exp_cmd->add_option("--seeds", exp_seeds, "Override the config seeds");

  std::string report_dir;
  auto* report_cmd = app.add_subcommand("report", "Aggregate seed results of an experiment");
  report_cmd->add_option("dir", report_dir, "Experiment directory")
      ->required()
      ->check(CLI::ExistingDirectory);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*validate_cmd) return run_validate(validate_path);
    if (*blocks_cmd) return run_blocks(blocks_po, blocks_pairs, blocks_component, blocks_out);
    if (*dec_cmd) return run_decompose(dec_po, dec_pair, dec_dense, dec_out);
    if (*met_cmd) return run_metrics(met_po, met_out, met_per_sample);
    if (*hvp_cmd) return run_hvp_bench(hvp_po, hvp_reps, hvp_probes);
    if (*exp_cmd) return run_experiment_cmd(exp_config, exp_out, exp_seeds);
    if (*report_cmd) return run_report(report_dir);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  }
  return kExitConfig;
}
