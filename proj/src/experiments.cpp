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

#include "hessdag/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <future>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "hessdag/decomposition.hpp"
#include "hessdag/diagnostics.hpp"
#include "hessdag/hessian.hpp"
#include "hessdag/hvp.hpp"
#include "hessdag/io.hpp"
#include "hessdag/oracle.hpp"
#include "hessdag/rng.hpp"
#include "json.hpp"

#ifndef HESSDAG_VERSION
#define HESSDAG_VERSION "unknown"
#endif

namespace hessdag {
namespace {

// rho_max is averaged over the leading samples of the eval batch.
constexpr std::size_t kRhoSamples = 8;

using nlohmann::ordered_json;
namespace fs = std::filesystem;

// Gaps below this are roundoff of an exactly vanishing tensor part.
constexpr double kGapNoiseFloor = 1e-10;
constexpr double kRatioFloor = 1e-300;

// a / b with an exactly vanishing denominator mapped to +inf.
double ratio(double a, double b) {
  return b > 0.0 ? a / b : (a > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
}

[[noreturn]] void config_error(const std::string& what) {
  throw Error(ErrorCode::kConfigError, what);
}

const std::vector<Activation> kAllActivations{Activation::kReLU, Activation::kLeakyReLU,
                                              Activation::kSoftplus, Activation::kSiLU,
                                              Activation::kGELU};

std::vector<Activation> activations_or(const ExperimentConfig& cfg,
                                       std::vector<Activation> fallback) {
  return cfg.activations.empty() ? fallback : cfg.activations;
}

std::string act_name(Activation fn) { return std::string(activation_name(fn)); }

// ---------------------------------------------------------------- config

template <typename T>
T get(const ordered_json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    config_error(std::string("config field '") + key + "' has the wrong type");
  }
}

ordered_json training_json(const TrainingConfig& t) {
  return {{"epochs", t.epochs},
          {"lr", t.lr},
          {"momentum", t.momentum},
          {"clip_norm", t.clip_norm},
          {"batch_size", t.batch_size}};
}

// ---------------------------------------------------------------- data

Sample blank_sample(std::size_t input_dim) {
  Sample s;
  s.inputs.push_back(Vector(input_dim));
  return s;
}

// N(0,1) inputs, N(0,1) targets and uniform labels for any graph.
Batch random_samples(const Graph& g, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  const Node& loss = g.node(g.out());
  const Node& pred = g.node(g.prediction());
  Batch batch(n);
  for (auto& s : batch) {
    for (NodeId in : g.inputs()) s.inputs.push_back(rng.normal_vector(g.node(in).dim()));
    s.target = rng.normal_vector(pred.dim());
    if (loss.kind == OpKind::kLossSoftmaxCe) s.label = rng.index(loss.num_classes);
  }
  return batch;
}

// ---------------------------------------------------------------- params

std::size_t weight_count(const Node& n) { return n.cols * n.in_cols; }

Matrix weight_matrix(const Node& n, std::span<const double> theta) {
  Matrix w(n.cols, n.in_cols);
  std::copy_n(theta.begin() + static_cast<std::ptrdiff_t>(n.param_offset), weight_count(n),
              w.data().begin());
  return w;
}

// ---------------------------------------------------------------- csv

void write_summary_csv(const fs::path& path, const std::vector<SummaryRow>& rows) {
  std::ostringstream os;
  os << "variant,checkpoint,key,value\n";
  for (const auto& r : rows) {
    os << r.variant << ',' << r.checkpoint << ',' << r.key << ',' << format_double(r.value) << '\n';
  }
  write_text(path, os.str());
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

double parse_number(const std::string& s) {
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  if (s == "nan" || s == "-nan") return std::numeric_limits<double>::quiet_NaN();
  try {
    return std::stod(s);
  } catch (const std::exception&) {
    throw Error(ErrorCode::kIoError, "not a number: '" + s + "'");
  }
}

// ---------------------------------------------------------------- checkpoint diagnostics

struct Context {
  const ExperimentConfig& cfg;
  const Variant& variant;
  const Graph& g;
  std::uint64_t seed;
  fs::path dir;
  std::vector<SummaryRow>* rows;

  void add(const std::string& ckpt, const std::string& key, double value) const {
    rows->push_back({variant.name, ckpt, key, value});
  }
};

double mean_of(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

double sigma2_sq_mean(const Graph& g, const std::vector<Evaluation>& evals) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& ev : evals) {
    for (const Node& n : g.nodes()) {
      if (n.kind != OpKind::kActivation) continue;
      for (double z : ev.fs.values[n.parents[0].index]) {
        const double d2 = activation_d2(n.activation, z);
        sum += d2 * d2;
        ++count;
      }
    }
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

bool crosses(const Graph& g, NodeId bneck, NodeId v, NodeId w) {
  return v != bneck && w != bneck && g.is_ancestor_or_self(v, bneck) &&
         g.is_ancestor_or_self(bneck, w);
}

void bottleneck_rows(const Context& ctx, const std::string& ckpt, BatchHessian& h,
                     const std::vector<PairMetrics>& metrics) {
  const Graph& g = ctx.g;
  const NodeId bneck = g.find("bneck");
  const std::size_t du = g.node(bneck).dim();
  std::vector<double> ranks;
  double tail = 0.0;
  double max_rank = 0.0;
  for (const auto& m : metrics) {
    if (!crosses(g, bneck, m.v, m.w)) continue;
    ranks.push_back(m.stable_rank);
    max_rank = std::max(max_rank, m.stable_rank);
    for (std::size_t i = 0; i < h.batch_size(); ++i) {
      const auto sv = singular_values(h.engine(i).input_block(m.v, m.w, Component::kGaussNewton));
      if (sv.empty() || sv[0] == 0.0) continue;
      for (std::size_t k = du; k < sv.size(); ++k) tail = std::max(tail, sv[k] / sv[0]);
    }
  }
  ctx.add(ckpt, "d_far", mean_of(ranks));
  ctx.add(ckpt, "d_far_max", max_rank);
  ctx.add(ckpt, "gn_tail_ratio", tail);
  ctx.add(ckpt, "rank_bound",
          static_cast<double>(std::min(du, ctx.cfg.classes - 1)));
}

double focus_gap(BatchHessian& h, const Graph& g, const std::pair<std::string, std::string>& p) {
  return gn_gap(decompose(h, g.find(p.first), g.find(p.second)));
}

void evaluate_checkpoint(const Context& ctx, const Checkpoint& ck, const Batch& eval) {
  const Graph& g = ctx.g;
  auto evals = evaluate_batch(g, ck.theta, eval);
  BatchHessian h(g, evals);
  const auto nodes = g.measurement_nodes();
  MetricOptions opts;
  opts.per_sample_rank = false;
  const auto metrics = pair_metrics(h, nodes, opts);

  const fs::path vdir = ctx.dir / ctx.variant.name;
  const std::string ghash = graph_hash(g.spec());
  {
    std::ostringstream os;
    write_metrics_csv(os, g, metrics, {"all", ghash, ctx.seed, ck.tag});
    write_text(vdir / (ck.tag + "_metrics.csv"), os.str());
  }
  DistanceProfile resonance_profile;
  for (MetricKind kind : {MetricKind::kResonance, MetricKind::kCoupling, MetricKind::kStableRank,
                          MetricKind::kGnGap}) {
    const auto profile = distance_profile(metrics, kind);
    if (kind == MetricKind::kResonance) resonance_profile = profile;
    std::ostringstream os;
    write_profile_csv(os, profile, {metric_name(kind), ghash, ctx.seed, ck.tag});
    write_text(vdir / (ck.tag + "_profile_" + metric_name(kind) + ".csv"), os.str());
  }

  const std::string& tag = ck.tag;
  ctx.add(tag, "loss", batch_loss(g, ck.theta, eval));
  std::vector<double> rhos, gaps;
  const std::size_t rho_samples = std::min<std::size_t>(h.batch_size(), kRhoSamples);
  for (std::size_t i = 0; i < rho_samples; ++i) rhos.push_back(rho_max(h.engine(i)));
  for (const auto& m : metrics) {
    if ((m.flags & kFlagGapDegenerate) == 0) gaps.push_back(m.gn_gap);
  }
  ctx.add(tag, "rho_max", mean_of(rhos));
  ctx.add(tag, "gap_mean", mean_of(gaps));
  for (std::size_t k = 0; k < ctx.variant.focus_pairs.size(); ++k) {
    ctx.add(tag, "gap_focus" + (k ? std::to_string(k) : std::string()),
            focus_gap(h, g, ctx.variant.focus_pairs[k]));
  }

  switch (ctx.cfg.id) {
    case ExperimentId::kDecay: {
      double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
      for (const auto& r : resonance_profile.rows) {
        lo = std::min(lo, r.mean);
        hi = std::max(hi, r.mean);
      }
      ctx.add(tag, "resonance_ratio", lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity());
      if (resonance_profile.rows.size() >= 3) {
        const auto fit = decay_fit(resonance_profile);
        ctx.add(tag, "decay_slope", fit.slope);
        ctx.add(tag, "decay_r2", fit.r_squared_defined ? fit.r_squared : 0.0);
      }
      break;
    }
    case ExperimentId::kBottleneck:
      bottleneck_rows(ctx, tag, h, metrics);
      break;
    case ExperimentId::kGnGapActivations: {
      ctx.add(tag, "sigma2_sq", sigma2_sq_mean(g, evals));
      const auto& p = ctx.variant.focus_pairs.front();
      ProbeStream stream(mix_seed(ctx.seed, 11));
      ctx.add(tag, "gap_stochastic",
              stochastic_gn_gap(g, evals, g.find(p.first), g.find(p.second), ctx.cfg.probes, stream));
      break;
    }
    default:
      break;
  }
}

// ---------------------------------------------------------------- oracle suite

struct OracleCase {
  std::string name;
  GraphSpec spec;
};

std::vector<OracleCase> oracle_cases() {
  GraphSpec skip = residual_chain(2, 4, 3, 2, Activation::kTanh);
  return {
      {"chain2_tanh", mlp_chain(2, 4, 3, 2, Activation::kTanh)},
      {"chain3_gelu", mlp_chain(3, 4, 3, 3, Activation::kGELU)},
      {"chain4_silu", mlp_chain(4, 3, 2, 2, Activation::kSiLU)},
      {"chain3_softplus", mlp_chain(3, 5, 3, 2, Activation::kSoftplus)},
      {"chain2_gelu_w6", mlp_chain(2, 6, 4, 3, Activation::kGELU)},
      {"diamond_sum_silu", diamond_mlp(4, 1, "sum", 3, 2, Activation::kSiLU)},
      {"diamond_cat_gelu", diamond_mlp(3, 1, "cat", 3, 2, Activation::kGELU)},
      {"skip_tanh", std::move(skip)},
      {"attention_3x3", toy_attention(3, 3)},
      {"attention_4x2", toy_attention(4, 2)},
  };
}

void oracle_case(const OracleCase& oc, std::uint64_t seed, std::vector<SummaryRow>& rows) {
  const Graph g = Graph::build(oc.spec);
  const Vector theta = init_params(g, InitScheme::kXavier, seed);
  const Batch batch = random_samples(g, 3, mix_seed(seed, 5));
  auto add = [&](const std::string& key, double v) { rows.push_back({oc.name, "init", key, v}); };

  const Matrix exact = assemble_full_hessian(g, theta, batch);
  const Matrix fd = fd_param_hessian(g, theta, batch);
  add("params", static_cast<double>(g.param_count()));
  add("fd_rel_err", frobenius_norm(exact - fd) / std::max(frobenius_norm(fd), kRatioFloor));

  BatchHessian h(g, theta, batch);
  const auto nodes = g.measurement_nodes();
  double gn_err = 0.0, split_err = 0.0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    for (std::size_t j = i; j < nodes.size(); ++j) {
      const Matrix rec = gn_block_recursive(h, nodes[i], nodes[j]);
      const Matrix unr = gn_block_unrolled(h, nodes[i], nodes[j]);
      const double scale = std::max(frobenius_norm(unr), kRatioFloor);
      gn_err = std::max(gn_err, frobenius_norm(rec - unr) / scale);
      const Matrix full = h.input_block(nodes[i], nodes[j]);
      const Matrix tensor = h.input_block(nodes[i], nodes[j], Component::kTensor);
      split_err = std::max(split_err, frobenius_norm(full - (rec + tensor)) /
                                          std::max(frobenius_norm(full), kRatioFloor));
    }
  }
  add("gn_unrolled_err", gn_err);
  add("decomposition_err", split_err);
  const Matrix gn = assemble_input_hessian(h, nodes, Component::kGaussNewton);
  const auto eig = sym_eigenvalues(gn);
  const double min_eig = eig.empty() ? 0.0 : *std::min_element(eig.begin(), eig.end());
  add("gn_min_eig_ratio", min_eig / std::max(frobenius_norm(gn), kRatioFloor));
}

// ---------------------------------------------------------------- report helpers

struct Accum {
  std::vector<double> values;
};

ReportEntry summarize(const std::string& variant, const std::string& ckpt, const std::string& key,
                      const std::vector<double>& xs) {
  ReportEntry e{variant, ckpt, key, 0.0, 0.0, xs.size()};
  e.mean = mean_of(xs);
  // Identical values (including repeated infinities) have zero spread.
  const bool constant = std::all_of(xs.begin(), xs.end(), [&](double x) { return x == xs.front(); });
  if (xs.size() > 1 && !constant) {
    double ss = 0.0;
    for (double x : xs) ss += (x - e.mean) * (x - e.mean);
    e.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return e;
}

ordered_json entries_json(const std::vector<ReportEntry>& entries) {
  ordered_json arr = ordered_json::array();
  for (const auto& e : entries) {
    arr.push_back({{"variant", e.variant},
                   {"checkpoint", e.checkpoint},
                   {"key", e.key},
                   {"mean", std::isfinite(e.mean) ? ordered_json(e.mean) : ordered_json(format_double(e.mean))},
                   {"std", std::isfinite(e.std) ? ordered_json(e.std) : ordered_json(format_double(e.std))},
                   {"count", e.count}});
  }
  return arr;
}

}  // namespace

// ---------------------------------------------------------------- names

std::string_view experiment_name(ExperimentId id) {
  switch (id) {
    case ExperimentId::kDecay: return "decay";
    case ExperimentId::kBottleneck: return "bottleneck";
    case ExperimentId::kGnGapActivations: return "gngap-activations";
    case ExperimentId::kDiamond: return "diamond";
    case ExperimentId::kToyAttention: return "toy-attention";
    case ExperimentId::kOracleSuite: return "oracle-suite";
  }
  return "unknown";
}

std::optional<ExperimentId> parse_experiment(std::string_view name) {
  for (auto id : {ExperimentId::kDecay, ExperimentId::kBottleneck, ExperimentId::kGnGapActivations,
                  ExperimentId::kDiamond, ExperimentId::kToyAttention, ExperimentId::kOracleSuite}) {
    if (experiment_name(id) == name) return id;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------- config

ExperimentConfig parse_config(std::string_view text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    config_error(std::string("malformed config JSON: ") + e.what());
  }
  if (!j.is_object()) config_error("config must be a JSON object");
  static const std::set<std::string> known{
      "experiment", "seeds",        "depth",         "width",        "archs",
      "bottlenecks", "activations", "merges",        "branch_depth", "classes",
      "input_dim",  "seq_len",      "train_samples", "eval_samples", "task_seed",
      "training",   "probes",       "power_iters",   "threads",      "output_dir"};
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) config_error("unknown config field '" + key + "'");
  }
  ExperimentConfig cfg;
  if (!j.contains("experiment")) config_error("config needs an 'experiment' id");
  const auto id_name = get<std::string>(j, "experiment");
  const auto id = parse_experiment(id_name);
  if (!id) config_error("unknown experiment '" + id_name + "'");
  cfg.id = *id;
  if (j.contains("seeds")) cfg.seeds = get<std::vector<std::uint64_t>>(j, "seeds");
  if (j.contains("depth")) cfg.depth = get<std::size_t>(j, "depth");
  if (j.contains("width")) cfg.width = get<std::size_t>(j, "width");
  if (j.contains("archs")) cfg.archs = get<std::vector<std::string>>(j, "archs");
  if (j.contains("bottlenecks")) cfg.bottlenecks = get<std::vector<std::size_t>>(j, "bottlenecks");
  if (j.contains("activations")) {
    cfg.activations.clear();
    for (const auto& name : get<std::vector<std::string>>(j, "activations")) {
      const auto fn = parse_activation(name);
      if (!fn) config_error("unknown activation '" + name + "'");
      cfg.activations.push_back(*fn);
    }
  }
  if (j.contains("merges")) cfg.merges = get<std::vector<std::string>>(j, "merges");
  if (j.contains("branch_depth")) cfg.branch_depth = get<std::size_t>(j, "branch_depth");
  if (j.contains("classes")) cfg.classes = get<std::size_t>(j, "classes");
  if (j.contains("input_dim")) cfg.input_dim = get<std::size_t>(j, "input_dim");
  if (j.contains("seq_len")) cfg.seq_len = get<std::size_t>(j, "seq_len");
  if (j.contains("train_samples")) cfg.train_samples = get<std::size_t>(j, "train_samples");
  if (j.contains("eval_samples")) cfg.eval_samples = get<std::size_t>(j, "eval_samples");
  if (j.contains("task_seed")) cfg.task_seed = get<std::uint64_t>(j, "task_seed");
  if (j.contains("training")) {
    const auto& t = j["training"];
    if (!t.is_object()) config_error("'training' must be an object");
    for (const auto& [key, _] : t.items()) {
      if (key != "epochs" && key != "lr" && key != "momentum" && key != "clip_norm" &&
          key != "batch_size") {
        config_error("unknown training field '" + key + "'");
      }
    }
    if (t.contains("epochs")) cfg.training.epochs = get<std::size_t>(t, "epochs");
    if (t.contains("lr")) cfg.training.lr = get<double>(t, "lr");
    if (t.contains("momentum")) cfg.training.momentum = get<double>(t, "momentum");
    if (t.contains("clip_norm")) cfg.training.clip_norm = get<double>(t, "clip_norm");
    if (t.contains("batch_size")) cfg.training.batch_size = get<std::size_t>(t, "batch_size");
  }
  if (j.contains("probes")) cfg.probes = get<std::size_t>(j, "probes");
  if (j.contains("power_iters")) cfg.power_iters = get<std::size_t>(j, "power_iters");
  if (j.contains("threads")) cfg.threads = get<std::size_t>(j, "threads");
  if (j.contains("output_dir")) cfg.output_dir = get<std::string>(j, "output_dir");
  validate_config(cfg);
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) { return parse_config(read_text(path)); }

std::string config_to_json(const ExperimentConfig& cfg) {
  ordered_json j;
  j["experiment"] = std::string(experiment_name(cfg.id));
  j["seeds"] = cfg.seeds;
  j["depth"] = cfg.depth;
  j["width"] = cfg.width;
  j["archs"] = cfg.archs;
  j["bottlenecks"] = cfg.bottlenecks;
  j["activations"] = ordered_json::array();
  for (auto fn : cfg.activations) j["activations"].push_back(act_name(fn));
  j["merges"] = cfg.merges;
  j["branch_depth"] = cfg.branch_depth;
  j["classes"] = cfg.classes;
  j["input_dim"] = cfg.input_dim;
  j["seq_len"] = cfg.seq_len;
  j["train_samples"] = cfg.train_samples;
  j["eval_samples"] = cfg.eval_samples;
  j["task_seed"] = cfg.task_seed;
  j["training"] = training_json(cfg.training);
  j["probes"] = cfg.probes;
  j["power_iters"] = cfg.power_iters;
  j["threads"] = cfg.threads;
  j["output_dir"] = cfg.output_dir.string();
  return j.dump(2) + "\n";
}

std::string config_hash(const ExperimentConfig& cfg) {
  auto copy = cfg;
  copy.output_dir.clear();
  copy.threads = 1;
  return text_hash(config_to_json(copy));
}

void validate_config(const ExperimentConfig& cfg) {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) config_error(what);
  };
  require(!cfg.seeds.empty(), "at least one seed is required");
  require(std::set(cfg.seeds.begin(), cfg.seeds.end()).size() == cfg.seeds.size(),
          "seeds must be distinct");
  require(cfg.depth >= 1 && cfg.depth <= kMaxDepth,
          "depth must be in [1, " + std::to_string(kMaxDepth) + "]");
  require(cfg.width >= 1 && cfg.width <= kMaxWidth,
          "width must be in [1, " + std::to_string(kMaxWidth) + "]");
  require(cfg.input_dim >= 1 && cfg.input_dim <= kMaxWidth,
          "input_dim must be in [1, " + std::to_string(kMaxWidth) + "]");
  require(cfg.seq_len >= 1 && cfg.seq_len <= kMaxWidth, "seq_len must be in [1, 64]");
  require(cfg.classes >= 2 && cfg.classes <= kMaxWidth, "classes must be in [2, 64]");
  require(cfg.branch_depth >= 1 && 2 * cfg.branch_depth + 2 <= kMaxDepth,
          "branch_depth out of range");
  require(cfg.train_samples >= 1 && cfg.eval_samples >= 1, "sample counts must be positive");
  require(cfg.training.lr >= 0.0 && std::isfinite(cfg.training.lr), "lr must be finite and >= 0");
  require(cfg.training.momentum >= 0.0 && cfg.training.momentum < 1.0,
          "momentum must be in [0, 1)");
  require(cfg.training.clip_norm > 0.0, "clip_norm must be positive");
  require(cfg.training.batch_size >= 1, "batch_size must be positive");
  require(cfg.probes >= 1 && cfg.power_iters >= 1, "probes and power_iters must be positive");
  require(cfg.threads >= 1, "threads must be positive");
  for (const auto& a : cfg.archs) {
    require(a == "plain" || a == "spectral" || a == "residual", "unknown arch '" + a + "'");
  }
  for (const auto& m : cfg.merges) require(m == "sum" || m == "cat", "unknown merge '" + m + "'");
  if (cfg.id == ExperimentId::kDecay) {
    require(!cfg.archs.empty(), "decay needs at least one arch");
    for (const auto& a : cfg.archs) {
      if (a == "residual") require(cfg.depth >= 2 && cfg.depth % 2 == 0, "residual depth must be even");
    }
  }
  if (cfg.id == ExperimentId::kBottleneck) {
    require(cfg.depth >= 3, "bottleneck depth must be at least 3");
    require(!cfg.bottlenecks.empty(), "bottleneck needs widths");
    for (auto du : cfg.bottlenecks) {
      require(du >= 1 && du <= cfg.width, "bottleneck widths must be in [1, width]");
    }
  }
  for (const auto& v : experiment_variants(cfg)) {
    const auto g = Graph::build(v.spec);
    require(g.param_count() <= kMaxParams,
            "variant '" + v.name + "' has " + std::to_string(g.param_count()) +
                " parameters; cap is " + std::to_string(kMaxParams));
  }
}

// ---------------------------------------------------------------- tasks

SyntheticTask gaussian_clusters(std::size_t n_train, std::size_t n_eval, std::size_t dim,
                                std::size_t classes, std::uint64_t seed) {
  if (classes < 2 || dim == 0) throw Error(ErrorCode::kInvalidArgument, "gaussian_clusters: bad sizes");
  SyntheticTask task;
  task.kind = TaskKind::kGaussianClassification;
  task.seed = seed;
  task.input_dim = dim;
  task.classes = classes;
  Rng centers_rng(mix_seed(seed, 1));
  std::vector<Vector> centers;
  for (std::size_t k = 0; k < classes; ++k) centers.push_back(centers_rng.normal_vector(dim));
  auto draw = [&](std::size_t n, std::uint64_t stream) {
    Rng rng(mix_seed(seed, stream));
    Batch out;
    for (std::size_t i = 0; i < n; ++i) {
      Sample s = blank_sample(dim);
      s.label = rng.index(classes);
      for (std::size_t c = 0; c < dim; ++c) s.inputs[0][c] = centers[s.label][c] + rng.normal();
      out.push_back(std::move(s));
    }
    return out;
  };
  task.train = draw(n_train, 2);
  task.eval = draw(n_eval, 3);
  return task;
}

SyntheticTask teacher_regression(std::size_t n_train, std::size_t n_eval, std::size_t seq,
                                 std::size_t dim, std::uint64_t teacher_seed,
                                 std::uint64_t data_seed) {
  if (seq == 0 || dim == 0 || n_train == 0) {
    throw Error(ErrorCode::kInvalidArgument, "teacher_regression: bad sizes");
  }
  SyntheticTask task;
  task.kind = TaskKind::kTeacherRegression;
  task.seed = data_seed;
  task.input_dim = dim;
  task.seq_len = seq;
  Rng teacher(mix_seed(teacher_seed, 1));
  const double sd = 1.0 / std::sqrt(static_cast<double>(dim));
  Matrix wt(dim, dim);
  for (double& x : wt.data()) x = sd * teacher.normal();
  const Vector wr = teacher.normal_vector(dim, sd);
  auto draw = [&](std::size_t n, std::uint64_t stream) {
    Rng rng(mix_seed(data_seed, stream));
    Batch out;
    for (std::size_t i = 0; i < n; ++i) {
      Sample s = blank_sample(seq * dim);
      s.inputs[0] = rng.normal_vector(seq * dim);
      double y = 0.0;
      for (std::size_t r = 0; r < seq; ++r) {
        const std::span<const double> xr(s.inputs[0].data() + r * dim, dim);
        const Vector h = matvec_t(wt, xr);
        for (std::size_t c = 0; c < dim; ++c) y += std::tanh(h[c]) * wr[c];
      }
      y = y / static_cast<double>(seq) + 0.1 * rng.normal();
      s.target = {y};
      out.push_back(std::move(s));
    }
    return out;
  };
  task.train = draw(n_train, 2);
  task.eval = draw(n_eval, 3);
  double mean = 0.0;
  for (const auto& s : task.train) mean += s.target[0];
  mean /= static_cast<double>(task.train.size());
  double var = 0.0;
  for (const auto& s : task.train) var += (s.target[0] - mean) * (s.target[0] - mean);
  const double sdev = std::sqrt(var / static_cast<double>(task.train.size()));
  const double inv = sdev > 0.0 ? 1.0 / sdev : 1.0;
  for (auto* b : {&task.train, &task.eval}) {
    for (auto& s : *b) s.target[0] = (s.target[0] - mean) * inv;
  }
  return task;
}

// ---------------------------------------------------------------- templates

GraphSpec mlp_chain(std::size_t depth, std::size_t width, std::size_t in, std::size_t classes,
                    Activation fn) {
  GraphSpec s;
  std::string prev = s.input("x", in);
  for (std::size_t i = 0; i < depth; ++i) {
    prev = s.linear("h" + std::to_string(i), prev, width);
    prev = s.activation("a" + std::to_string(i), prev, fn);
    s.mark_measure(prev);
  }
  s.linear("head", prev, classes);
  s.softmax_ce("loss", "head", classes);
  return s;
}

GraphSpec residual_chain(std::size_t depth, std::size_t width, std::size_t in,
                         std::size_t classes, Activation fn) {
  if (depth < 2 || depth % 2 != 0) {
    throw Error(ErrorCode::kInvalidArgument, "residual_chain: depth must be even and >= 2");
  }
  GraphSpec s;
  s.input("x", in);
  std::string stream = s.linear("r0", "x", width);
  s.mark_measure(stream);
  for (std::size_t b = 0; b < depth / 2; ++b) {
    const std::string p = "b" + std::to_string(b) + "_";
    s.activation(p + "s1", stream, fn);
    s.linear(p + "l1", p + "s1", width);
    s.activation(p + "s2", p + "l1", fn);
    s.linear(p + "l2", p + "s2", width);
    stream = s.sum("r" + std::to_string(b + 1), {stream, p + "l2"});
    s.mark_measure(stream);
  }
  s.activation("s_out", stream, fn);
  s.linear("head", "s_out", classes);
  s.softmax_ce("loss", "head", classes);
  return s;
}

GraphSpec bottleneck_mlp(std::size_t depth, std::size_t width, std::size_t bottleneck,
                         std::size_t in, std::size_t classes, Activation fn) {
  if (depth < 3) throw Error(ErrorCode::kInvalidArgument, "bottleneck_mlp: depth must be >= 3");
  GraphSpec s;
  std::string prev = s.input("x", in);
  for (std::size_t i = 0; i < depth; ++i) {
    const bool narrow = i == depth / 2;
    prev = s.linear("h" + std::to_string(i), prev, narrow ? bottleneck : width);
    prev = s.activation(narrow ? std::string("bneck") : "a" + std::to_string(i), prev, fn);
    s.mark_measure(prev);
  }
  s.linear("head", prev, classes);
  s.softmax_ce("loss", "head", classes);
  return s;
}

GraphSpec diamond_mlp(std::size_t width, std::size_t branch_depth, const std::string& merge,
                      std::size_t in, std::size_t classes, Activation fn) {
  if (branch_depth == 0 || (merge != "sum" && merge != "cat")) {
    throw Error(ErrorCode::kInvalidArgument, "diamond_mlp: bad branch depth or merge");
  }
  GraphSpec s;
  s.input("x", in);
  s.linear("stem", "x", width);
  s.activation("s", "stem", fn);
  s.mark_measure("s");
  std::string last[2];
  for (int side = 0; side < 2; ++side) {
    const std::string tag = side == 0 ? "a" : "b";
    std::string prev = "s";
    for (std::size_t i = 0; i < branch_depth; ++i) {
      prev = s.linear("l" + tag + std::to_string(i), prev, width);
      prev = s.activation(tag + std::to_string(i), prev, fn);
      s.mark_measure(prev);
    }
    last[side] = prev;
  }
  if (merge == "sum") {
    s.sum("m", {last[0], last[1]});
  } else {
    s.concat("cat", {last[0], last[1]});
    s.linear("mix", "cat", width);
    s.activation("m", "mix", fn);
  }
  s.mark_measure("m");
  s.linear("head", "m", classes);
  s.softmax_ce("loss", "head", classes);
  return s;
}

GraphSpec toy_attention(std::size_t seq, std::size_t dim) {
  GraphSpec s;
  s.input("x", dim, seq);
  for (const char* n : {"q", "k", "v"}) {
    s.linear(n, "x", dim, false);
    s.mark_measure(n);
  }
  s.attention("att", "q", "k", "v");
  s.mark_measure("att");
  s.mean_pool("pool", "att");
  s.linear("head", "pool", 1);
  s.mse("loss", "head");
  return s;
}

GraphSpec toy_relu_mlp(std::size_t seq, std::size_t dim) {
  GraphSpec s;
  std::string prev = s.input("x", dim, seq);
  for (int i = 0; i < 3; ++i) {
    prev = s.linear("l" + std::to_string(i), prev, dim);
    prev = s.activation("r" + std::to_string(i), prev, Activation::kReLU);
    s.mark_measure(prev);
  }
  s.mean_pool("pool", prev);
  s.linear("head", "pool", 1);
  s.mse("loss", "head");
  return s;
}

// ---------------------------------------------------------------- init

InitScheme init_scheme_for(Activation fn) {
  return is_piecewise_linear(fn) ? InitScheme::kHe : InitScheme::kXavier;
}

Vector init_params(const Graph& g, InitScheme scheme, std::uint64_t seed) {
  Vector theta(g.param_count(), 0.0);
  const double gain = scheme == InitScheme::kHe ? 2.0 : 1.0;
  std::set<std::size_t> done;
  for (NodeId v : g.param_nodes()) {
    const Node& n = g.node(v);
    if (n.kind != OpKind::kLinear || !done.insert(n.param_offset).second) continue;
    Rng rng(mix_seed(seed, n.param_offset));
    const double sd = std::sqrt(gain / static_cast<double>(n.in_cols));
    const double bound = 1.0 / std::sqrt(static_cast<double>(n.in_cols));
    for (std::size_t k = 0; k < weight_count(n); ++k) {
      theta[n.param_offset + k] =
          scheme == InitScheme::kUniform ? bound * (2.0 * rng.uniform() - 1.0) : sd * rng.normal();
    }
  }
  return theta;
}

void scale_node_weights(const Graph& g, Vector& theta, NodeId v, double s) {
  const Node& n = g.node(v);
  if (n.kind != OpKind::kLinear) throw Error(ErrorCode::kInvalidArgument, "not a Linear node");
  for (std::size_t k = 0; k < weight_count(n); ++k) theta[n.param_offset + k] *= s;
}

void spectral_rescale(const Graph& g, Vector& theta, double target) {
  std::set<std::size_t> done;
  for (NodeId v : g.param_nodes()) {
    const Node& n = g.node(v);
    if (n.kind != OpKind::kLinear || !done.insert(n.param_offset).second) continue;
    const double s = spectral_norm(weight_matrix(n, theta));
    if (s > 0.0) scale_node_weights(g, theta, v, target / s);
  }
}

// ---------------------------------------------------------------- training

TrainResult train_sgd(const Graph& g, const Batch& data, Vector theta, const TrainingConfig& hyper,
                      std::uint64_t seed) {
  if (data.empty()) throw Error(ErrorCode::kInvalidArgument, "train_sgd: empty data");
  TrainResult out;
  const double loss0 = batch_loss(g, theta, data);
  if (!std::isfinite(loss0)) throw Error(ErrorCode::kNonFiniteValue, "train_sgd: initial loss is not finite");
  out.epoch_loss.push_back(loss0);
  out.checkpoints.push_back({"init", 0, theta});
  const std::size_t mid = (hyper.epochs + 1) / 2;
  if (hyper.epochs == 0) out.checkpoints.push_back({"mid", 0, theta});

  Rng rng(mix_seed(seed, 7));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Vector velocity(theta.size(), 0.0);
  for (std::size_t epoch = 1; epoch <= hyper.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    for (std::size_t start = 0; start < order.size(); start += hyper.batch_size) {
      const std::size_t stop = std::min(order.size(), start + hyper.batch_size);
      Batch mb;
      for (std::size_t k = start; k < stop; ++k) mb.push_back(data[order[k]]);
      Vector grad = batch_gradient(g, theta, mb);
      const double gn = norm2(grad);
      if (!std::isfinite(gn)) {
        out.epoch_loss.push_back(std::numeric_limits<double>::infinity());
        out.diverged = true;
        out.diverged_epoch = epoch;
        return out;
      }
      if (gn > hyper.clip_norm) {
        for (double& x : grad) x *= hyper.clip_norm / gn;
      }
      for (std::size_t k = 0; k < theta.size(); ++k) {
        velocity[k] = hyper.momentum * velocity[k] + grad[k];
        theta[k] -= hyper.lr * velocity[k];
      }
    }
    const double loss = batch_loss(g, theta, data);
    out.epoch_loss.push_back(loss);
    if (!std::isfinite(loss)) {
      out.diverged = true;
      out.diverged_epoch = epoch;
      return out;
    }
    if (epoch == mid) out.checkpoints.push_back({"mid", epoch, theta});
  }
  out.checkpoints.push_back({"final", hyper.epochs, theta});
  return out;
}

// ---------------------------------------------------------------- variants

std::vector<Variant> experiment_variants(const ExperimentConfig& cfg) {
  std::vector<Variant> out;
  const std::size_t in = cfg.input_dim, K = cfg.classes, W = cfg.width, L = cfg.depth;
  switch (cfg.id) {
    case ExperimentId::kDecay: {
      const Activation fn = activations_or(cfg, {Activation::kReLU}).front();
      for (const auto& arch : cfg.archs) {
        Variant v;
        v.name = arch + "_L" + std::to_string(L);
        v.init = init_scheme_for(fn);
        if (arch == "residual") {
          v.spec = residual_chain(L, W, in, K, fn);
          v.branch_scale = 1.0 / std::sqrt(static_cast<double>(L));
        } else {
          v.spec = mlp_chain(L, W, in, K, fn);
          v.spectral = arch == "spectral";
        }
        out.push_back(std::move(v));
      }
      break;
    }
    case ExperimentId::kBottleneck: {
      const Activation fn = activations_or(cfg, {Activation::kReLU}).front();
      for (auto du : cfg.bottlenecks) {
        Variant v;
        v.name = "du" + std::to_string(du);
        v.spec = bottleneck_mlp(L, W, du, in, K, fn);
        v.init = init_scheme_for(fn);
        out.push_back(std::move(v));
      }
      break;
    }
    case ExperimentId::kGnGapActivations:
      for (auto fn : activations_or(cfg, kAllActivations)) {
        Variant v;
        v.name = act_name(fn);
        v.spec = mlp_chain(L, W, in, K, fn);
        v.init = init_scheme_for(fn);
        v.focus_pairs = {{"a0", "a1"}};
        if (L < 2) v.focus_pairs = {{"a0", "a0"}};
        out.push_back(std::move(v));
      }
      break;
    case ExperimentId::kDiamond: {
      const auto k = std::to_string(cfg.branch_depth - 1);
      for (const auto& merge : cfg.merges) {
        for (auto fn : activations_or(cfg, {Activation::kReLU, Activation::kSiLU})) {
          Variant v;
          v.name = merge + "_" + act_name(fn);
          v.spec = diamond_mlp(W, cfg.branch_depth, merge, in, K, fn);
          v.init = init_scheme_for(fn);
          v.focus_pairs = {{"a" + k, "b" + k}};
          out.push_back(std::move(v));
        }
      }
      break;
    }
    case ExperimentId::kToyAttention: {
      Variant att;
      att.name = "attention";
      att.spec = toy_attention(cfg.seq_len, in);
      att.init = InitScheme::kUniform;
      att.task = TaskKind::kTeacherRegression;
      att.focus_pairs = {{"q", "k"}};
      out.push_back(std::move(att));
      Variant mlp;
      mlp.name = "relu_mlp";
      mlp.spec = toy_relu_mlp(cfg.seq_len, in);
      mlp.init = InitScheme::kUniform;
      mlp.task = TaskKind::kTeacherRegression;
      mlp.focus_pairs = {{"r0", "r1"}};
      out.push_back(std::move(mlp));
      break;
    }
    case ExperimentId::kOracleSuite:
      for (auto& oc : oracle_cases()) {
        Variant v;
        v.name = oc.name;
        v.spec = std::move(oc.spec);
        v.init = InitScheme::kXavier;
        out.push_back(std::move(v));
      }
      break;
  }
  return out;
}

// ---------------------------------------------------------------- runs

SeedResult run_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  SeedResult result;
  result.seed = seed;
  const fs::path dir = cfg.output_dir / std::string(experiment_name(cfg.id)) /
                       ("seed_" + std::to_string(seed));
  fs::remove_all(dir);
  fs::create_directories(dir);

  try {
    if (cfg.id == ExperimentId::kOracleSuite) {
      for (const auto& oc : oracle_cases()) oracle_case(oc, seed, result.summary);
    } else {
      std::optional<SyntheticTask> cls, reg;
      for (const auto& variant : experiment_variants(cfg)) {
        const SyntheticTask* task = nullptr;
        if (variant.task == TaskKind::kGaussianClassification) {
          if (!cls) {
            cls = gaussian_clusters(cfg.train_samples, cfg.eval_samples, cfg.input_dim, cfg.classes,
                                    cfg.task_seed);
          }
          task = &*cls;
        } else {
          if (!reg) {
            reg = teacher_regression(cfg.train_samples, cfg.eval_samples, cfg.seq_len,
                                     cfg.input_dim, cfg.task_seed, mix_seed(cfg.task_seed, 100));
          }
          task = &*reg;
        }
        const Graph g = Graph::build(variant.spec);
        Vector theta = init_params(g, variant.init, seed);
        if (variant.spectral) spectral_rescale(g, theta, 0.9);
        if (variant.branch_scale != 1.0) {
          for (const Node& n : g.nodes()) {
            if (n.name.size() > 3 && n.name.ends_with("_l2")) {
              scale_node_weights(g, theta, n.id, variant.branch_scale);
            }
          }
        }
        const TrainResult tr = train_sgd(g, task->train, theta, cfg.training, seed);
        {
          std::ostringstream os;
          os << "epoch,loss\n";
          for (std::size_t e = 0; e < tr.epoch_loss.size(); ++e) {
            os << e << ',' << format_double(tr.epoch_loss[e]) << '\n';
          }
          write_text(dir / variant.name / "train.csv", os.str());
        }
        if (tr.diverged) {
          result.ok = false;
          result.failure = "variant '" + variant.name + "' diverged at epoch " +
                           std::to_string(tr.diverged_epoch);
          result.summary.push_back({variant.name, "-", "failure_epoch",
                                    static_cast<double>(tr.diverged_epoch)});
          break;
        }
        Context ctx{cfg, variant, g, seed, dir, &result.summary};
        for (const auto& ck : tr.checkpoints) {
          ctx.add(ck.tag, "train_loss", tr.epoch_loss[ck.epoch]);
          evaluate_checkpoint(ctx, ck, task->eval);
        }
      }
    }
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kConfigError) throw;
    result.ok = false;
    result.failure = e.what();
  }

  if (result.ok) {
    // Cross-variant rows.
    auto value = [&](const std::string& variant, const std::string& ckpt, const std::string& key) {
      for (const auto& r : result.summary) {
        if (r.variant == variant && r.checkpoint == ckpt && r.key == key) return r.value;
      }
      throw Error(ErrorCode::kInternal, "missing summary value " + variant + "/" + ckpt + "/" + key);
    };
    const auto variants = cfg.id == ExperimentId::kOracleSuite ? std::vector<Variant>{}
                                                                : experiment_variants(cfg);
    for (const char* ckpt : {"init", "mid", "final"}) {
      if (cfg.id == ExperimentId::kGnGapActivations && variants.size() >= 2) {
        std::vector<double> gaps, s2;
        for (const auto& v : variants) {
          const double gap = value(v.name, ckpt, "gap_mean");
          gaps.push_back(gap < kGapNoiseFloor ? 0.0 : gap);
          s2.push_back(value(v.name, ckpt, "sigma2_sq"));
        }
        result.summary.push_back({"all", ckpt, "spearman", spearman(gaps, s2)});
      }
      if (cfg.id == ExperimentId::kDiamond) {
        double smooth_cat = -1.0, others = 0.0;
        for (const auto& v : variants) {
          const double gap = value(v.name, ckpt, "gap_focus");
          if (v.name.starts_with("cat_") && !is_piecewise_linear(*parse_activation(v.name.substr(4)))) {
            smooth_cat = std::max(smooth_cat, gap);
          } else {
            others = std::max(others, gap);
          }
        }
        if (smooth_cat >= 0.0) {
          result.summary.push_back({"all", ckpt, "separation_orders",
                                    std::log10(ratio(smooth_cat, others))});
        }
      }
      if (cfg.id == ExperimentId::kToyAttention) {
        result.summary.push_back({"all", ckpt, "gap_ratio",
                                  ratio(value("attention", ckpt, "gap_focus"),
                                        value("relu_mlp", ckpt, "gap_focus"))});
      }
    }
  }

  write_summary_csv(dir / "summary.csv", result.summary);
  result.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  ordered_json manifest;
  manifest["config_hash"] = config_hash(cfg);
  manifest["seed"] = seed;
  manifest["versions"] = {{"hessdag", HESSDAG_VERSION}, {"compiler", __VERSION__},
                          {"cxx", static_cast<long>(__cplusplus)}};
  manifest["wall_ms"] = std::llround(result.wall_ms);
  manifest["status"] = result.ok ? "ok" : "failed";
  if (!result.ok) manifest["failure"] = result.failure;
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  return result;
}

std::vector<SeedResult> run_experiment(const ExperimentConfig& cfg) {
  validate_config(cfg);
  const fs::path root = cfg.output_dir / std::string(experiment_name(cfg.id));
  fs::create_directories(root);
  write_text(root / "config.json", config_to_json(cfg));
  std::vector<SeedResult> results(cfg.seeds.size());
  if (cfg.threads <= 1) {
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i) results[i] = run_seed(cfg, cfg.seeds[i]);
    return results;
  }
  for (std::size_t start = 0; start < cfg.seeds.size(); start += cfg.threads) {
    std::vector<std::future<SeedResult>> jobs;
    const std::size_t stop = std::min(cfg.seeds.size(), start + cfg.threads);
    for (std::size_t i = start; i < stop; ++i) {
      jobs.push_back(std::async(std::launch::async, run_seed, std::cref(cfg), cfg.seeds[i]));
    }
    for (std::size_t i = start; i < stop; ++i) results[i] = jobs[i - start].get();
  }
  return results;
}

// ---------------------------------------------------------------- report

Report emit_report(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::kIoError, "not a directory: " + dir.string());
  Report rep;
  rep.experiment = dir.filename().string();
  std::map<std::uint64_t, fs::path> seed_dirs;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (!entry.is_directory() || !name.starts_with("seed_")) continue;
    if (!fs::exists(entry.path() / "manifest.json")) continue;
    try {
      seed_dirs[std::stoull(name.substr(5))] = entry.path();
    } catch (const std::exception&) {
      continue;
    }
  }
  if (fs::exists(dir / "config.json")) {
    const auto cfg = ordered_json::parse(read_text(dir / "config.json"));
    rep.experiment = cfg.value("experiment", rep.experiment);
    rep.expected_seeds = cfg.value("seeds", std::vector<std::uint64_t>{});
  } else {
    for (const auto& [s, _] : seed_dirs) rep.expected_seeds.push_back(s);
  }
  if (seed_dirs.empty()) {
    throw Error(ErrorCode::kInsufficientData, "empty summary: no seed results in " + dir.string());
  }

  using Key = std::tuple<std::string, std::string, std::string>;
  std::map<Key, std::vector<double>> summary, profiles;
  for (const auto& [seed, sdir] : seed_dirs) {
    rep.present_seeds.push_back(seed);
    const auto manifest = ordered_json::parse(read_text(sdir / "manifest.json"));
    if (manifest.value("status", std::string("failed")) != "ok") {
      rep.failed_seeds.push_back(seed);
      continue;
    }
    std::istringstream is(read_text(sdir / "summary.csv"));
    std::string line;
    std::getline(is, line);
    while (std::getline(is, line)) {
      const auto f = split(line, ',');
      if (f.size() != 4) throw Error(ErrorCode::kIoError, "bad summary row in " + sdir.string());
      summary[{f[0], f[1], f[2]}].push_back(parse_number(f[3]));
    }
    for (const auto& ventry : fs::directory_iterator(sdir)) {
      if (!ventry.is_directory()) continue;
      for (const auto& pentry : fs::directory_iterator(ventry.path())) {
        const auto fname = pentry.path().filename().string();
        const auto pos = fname.find("_profile_");
        if (pos == std::string::npos) continue;
        const std::string ckpt = fname.substr(0, pos);
        const std::string metric = fname.substr(pos + 9, fname.size() - pos - 9 - 4);
        std::istringstream ps(read_text(pentry.path()));
        std::getline(ps, line);
        std::getline(ps, line);
        while (std::getline(ps, line)) {
          const auto f = split(line, ',');
          if (f.size() != 4) throw Error(ErrorCode::kIoError, "bad profile row in " + fname);
          profiles[{ventry.path().filename().string(), ckpt, metric + "@" + f[0]}].push_back(
              parse_number(f[1]));
        }
      }
    }
  }
  for (auto s : rep.expected_seeds) {
    if (!seed_dirs.contains(s)) rep.missing_seeds.push_back(s);
  }
  for (const auto& [k, xs] : summary) {
    rep.summary.push_back(summarize(std::get<0>(k), std::get<1>(k), std::get<2>(k), xs));
  }
  for (const auto& [k, xs] : profiles) {
    rep.profiles.push_back(summarize(std::get<0>(k), std::get<1>(k), std::get<2>(k), xs));
  }

  ordered_json j;
  j["experiment"] = rep.experiment;
  j["expected_seeds"] = rep.expected_seeds;
  j["present_seeds"] = rep.present_seeds;
  j["missing_seeds"] = rep.missing_seeds;
  j["failed_seeds"] = rep.failed_seeds;
  j["complete"] = rep.missing_seeds.empty() && rep.failed_seeds.empty();
  j["summary"] = entries_json(rep.summary);
  write_text(dir / "report.json", j.dump(2) + "\n");

  std::ostringstream sc;
  sc << "variant,checkpoint,key,mean,std,count\n";
  for (const auto& e : rep.summary) {
    sc << e.variant << ',' << e.checkpoint << ',' << e.key << ',' << format_double(e.mean) << ','
       << format_double(e.std) << ',' << e.count << '\n';
  }
  write_text(dir / "report_summary.csv", sc.str());
  std::ostringstream pc;
  pc << "variant,checkpoint,metric,dist,mean,std,count\n";
  for (const auto& e : rep.profiles) {
    const auto at = e.key.find('@');
    pc << e.variant << ',' << e.checkpoint << ',' << e.key.substr(0, at) << ','
       << e.key.substr(at + 1) << ',' << format_double(e.mean) << ',' << format_double(e.std)
       << ',' << e.count << '\n';
  }
  write_text(dir / "report_profiles.csv", pc.str());
  return rep;
}

const ReportEntry* find_entry(const std::vector<ReportEntry>& entries, std::string_view variant,
                              std::string_view checkpoint, std::string_view key) {
  for (const auto& e : entries) {
    if (e.variant == variant && e.checkpoint == checkpoint && e.key == key) return &e;
  }
  return nullptr;
}

}  // namespace hessdag
