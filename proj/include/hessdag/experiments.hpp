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

// Desk-scale experiment harness: synthetic tasks, architecture templates,
// SGD training with checkpoints, diagnostics output and seed aggregation.

#ifndef HESSDAG_EXPERIMENTS_HPP_
#define HESSDAG_EXPERIMENTS_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hessdag/calculus.hpp"
#include "hessdag/graph.hpp"
#include "hessdag/linalg.hpp"

namespace hessdag {

inline constexpr std::size_t kMaxWidth = 64;
inline constexpr std::size_t kMaxDepth = 16;
inline constexpr std::size_t kMaxParams = 50000;

enum class ExperimentId {
  kDecay,
  kBottleneck,
  kGnGapActivations,
  kDiamond,
  kToyAttention,
  kOracleSuite,
};

std::string_view experiment_name(ExperimentId id);
std::optional<ExperimentId> parse_experiment(std::string_view name);

struct TrainingConfig {
  std::size_t epochs = 10;
  double lr = 0.01;
  double momentum = 0.9;
  double clip_norm = 1.0;
  std::size_t batch_size = 32;
};

struct ExperimentConfig {
  ExperimentId id = ExperimentId::kDecay;
  std::vector<std::uint64_t> seeds{42, 43, 44, 45, 46};
  std::size_t depth = 8;
  std::size_t width = 16;
  // decay: "plain", "spectral", "residual"
  std::vector<std::string> archs{"spectral", "residual"};
  std::vector<std::size_t> bottlenecks{2, 4, 8, 16};
  // Empty selects the experiment's default list.
  std::vector<Activation> activations;
  // diamond: "sum", "cat"
  std::vector<std::string> merges{"sum", "cat"};
  std::size_t branch_depth = 1;
  std::size_t classes = 10;
  std::size_t input_dim = 16;
  std::size_t seq_len = 8;
  std::size_t train_samples = 256;
  std::size_t eval_samples = 16;
  std::uint64_t task_seed = 0;
  TrainingConfig training;
  std::size_t probes = 100;
  std::size_t power_iters = 50;
  std::size_t threads = 1;
  std::filesystem::path output_dir = "results";
};

// Missing keys keep their defaults; unknown keys and cap violations raise
// kConfigError.
ExperimentConfig parse_config(std::string_view json);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const ExperimentConfig& cfg);
std::string config_hash(const ExperimentConfig& cfg);
void validate_config(const ExperimentConfig& cfg);

enum class TaskKind { kGaussianClassification, kTeacherRegression };

struct SyntheticTask {
  TaskKind kind = TaskKind::kGaussianClassification;
  std::uint64_t seed = 0;
  std::size_t input_dim = 0;
  std::size_t seq_len = 1;
  std::size_t classes = 0;
  Batch train;
  Batch eval;
};

// K unit-variance clusters with N(0, I) centers.
SyntheticTask gaussian_clusters(std::size_t n_train, std::size_t n_eval, std::size_t dim,
                                std::size_t classes, std::uint64_t seed);
// y = mean_s tanh(x_s W_t) w_r + noise, W_t and w_r ~ N(0, 1/d) drawn from
// `teacher_seed`, noise variance 0.01, targets standardized on the training split.
SyntheticTask teacher_regression(std::size_t n_train, std::size_t n_eval, std::size_t seq,
                                 std::size_t dim, std::uint64_t teacher_seed,
                                 std::uint64_t data_seed);

// Templates. Measured nodes are flagged with `measure`.
GraphSpec mlp_chain(std::size_t depth, std::size_t width, std::size_t in, std::size_t classes,
                    Activation fn);
// Pre-activation residual stream: r_{b+1} = r_b + W2 s(W1 s(r_b)), one skip
// every two layers.
GraphSpec residual_chain(std::size_t depth, std::size_t width, std::size_t in,
                         std::size_t classes, Activation fn);
// Single narrow Linear of width d_u at position depth / 2.
GraphSpec bottleneck_mlp(std::size_t depth, std::size_t width, std::size_t bottleneck,
                         std::size_t in, std::size_t classes, Activation fn);
// Stem, two branches of `branch_depth` Linear+act blocks, merge by sum or by
// Concat -> Linear -> act, Linear head.
GraphSpec diamond_mlp(std::size_t width, std::size_t branch_depth, const std::string& merge,
                      std::size_t in, std::size_t classes, Activation fn);
GraphSpec toy_attention(std::size_t seq, std::size_t dim);
GraphSpec toy_relu_mlp(std::size_t seq, std::size_t dim);

// kUniform: U(-1/sqrt(fan_in), 1/sqrt(fan_in)), the common framework default.
enum class InitScheme { kHe, kXavier, kUniform };

InitScheme init_scheme_for(Activation fn);
// Weights ~ N(0, gain / fan_in) with gain 2 (He) or 1 (Xavier), or kUniform;
// zero biases.
Vector init_params(const Graph& g, InitScheme scheme, std::uint64_t seed);
// W <- W * (target / ||W||_2) for every Linear weight matrix.
void spectral_rescale(const Graph& g, Vector& theta, double target);
void scale_node_weights(const Graph& g, Vector& theta, NodeId v, double s);

struct Checkpoint {
  std::string tag;  // init, mid, final
  std::size_t epoch = 0;
  Vector theta;
};

struct TrainResult {
  std::vector<Checkpoint> checkpoints;
  std::vector<double> epoch_loss;  // index 0 is the initial loss
  bool diverged = false;
  std::size_t diverged_epoch = 0;
};

// SGD with momentum and global-norm clipping; mid checkpoint at ceil(epochs/2).
// A non-finite loss stops training and is reported, not thrown.
TrainResult train_sgd(const Graph& g, const Batch& data, Vector theta, const TrainingConfig& hyper,
                      std::uint64_t seed);

// Variant of an experiment: graph, init and the pairs of interest.
struct Variant {
  std::string name;
  GraphSpec spec;
  InitScheme init = InitScheme::kHe;
  bool spectral = false;
  double branch_scale = 1.0;  // residual branch output scaling at init
  TaskKind task = TaskKind::kGaussianClassification;
  std::vector<std::pair<std::string, std::string>> focus_pairs;
};

std::vector<Variant> experiment_variants(const ExperimentConfig& cfg);

// Summary row: (variant, checkpoint, key) -> value.
struct SummaryRow {
  std::string variant;
  std::string checkpoint;
  std::string key;
  double value = 0.0;
};

struct SeedResult {
  std::uint64_t seed = 0;
  bool ok = true;
  std::string failure;
  std::vector<SummaryRow> summary;
  double wall_ms = 0.0;
};

// Per seed: build, train, evaluate at checkpoints and write
// <output>/<experiment>/seed_<s>/{summary.csv, manifest.json, <variant>/...}.
std::vector<SeedResult> run_experiment(const ExperimentConfig& cfg);
SeedResult run_seed(const ExperimentConfig& cfg, std::uint64_t seed);

struct ReportEntry {
  std::string variant;
  std::string checkpoint;
  std::string key;
  double mean = 0.0;
  double std = 0.0;
  std::size_t count = 0;
};

struct Report {
  std::string experiment;
  std::vector<std::uint64_t> expected_seeds;
  std::vector<std::uint64_t> present_seeds;
  std::vector<std::uint64_t> missing_seeds;
  std::vector<std::uint64_t> failed_seeds;
  std::vector<ReportEntry> summary;
  std::vector<ReportEntry> profiles;  // key = "<metric>@<dist>"
};

// Aggregates one experiment directory and writes report.json,
// report_summary.csv and report_profiles.csv into it. Throws
// kInsufficientData when no seed results are present.
Report emit_report(const std::filesystem::path& dir);

const ReportEntry* find_entry(const std::vector<ReportEntry>& entries, std::string_view variant,
                              std::string_view checkpoint, std::string_view key);

}  // namespace hessdag

#endif  // HESSDAG_EXPERIMENTS_HPP_
