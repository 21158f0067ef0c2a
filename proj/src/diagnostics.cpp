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

#include "hessdag/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "hessdag/decomposition.hpp"
#include "hessdag/error.hpp"

namespace hessdag {

std::string flag_string(unsigned flags) {
  std::string out;
  auto add = [&](unsigned bit, const char* name) {
    if ((flags & bit) == 0) return;
    if (!out.empty()) out += '|';
    out += name;
  };
  add(kFlagCouplingDegenerate, "coupling-degenerate");
  add(kFlagRankDegenerate, "rank-degenerate");
  add(kFlagGapDegenerate, "gap-degenerate");
  return out;
}

double resonance(const Matrix& block) { return frobenius_norm(block); }

Coupling coupling(double r_vw, double r_vv, double r_ww, bool clamp) {
  if (!(r_vv > 0.0) || !(r_ww > 0.0)) return {0.0, true};
  double c = r_vw / std::sqrt(r_vv * r_ww);
  if (clamp) c = std::min(c, 1.0);
  return {c, false};
}

RankMetrics rank_metrics(const Matrix& block, double rank_tol) {
  RankMetrics m;
  const Vector s = singular_values(block);
  if (s.empty() || !(s.front() > 0.0)) {
    m.degenerate = true;
    return m;
  }
  double frob_sq = 0.0, nuclear = 0.0;
  for (double x : s) {
    frob_sq += x * x;
    nuclear += x;
    if (x > rank_tol * s.front()) ++m.rank;
  }
  m.stable_rank = frob_sq / (s.front() * s.front());
  m.d_eff = nuclear / s.front();
  return m;
}

std::vector<PairMetrics> pair_metrics(BatchHessian& h, const std::vector<NodeId>& nodes,
                                      const MetricOptions& options) {
  const Graph& g = h.graph();
  const Component c = options.component;
  std::vector<double> diag(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) diag[i] = resonance(h.input_block(nodes[i], nodes[i], c));
  std::vector<PairMetrics> out;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    for (std::size_t j = i; j < nodes.size(); ++j) {
      PairMetrics m;
      m.v = nodes[i];
      m.w = nodes[j];
      m.dist = graph_distance(g, m.v, m.w);
      const DecomposedBlock d = decompose(h, m.v, m.w);
      const Matrix block = c == Component::kFull ? d.full : c == Component::kGaussNewton ? d.gn : d.tensor;
      m.resonance = resonance(block);
      const Coupling cp = i == j && diag[i] > 0.0 ? Coupling{1.0, false}
                                                 : coupling(m.resonance, diag[i], diag[j], options.clamp_coupling);
      m.coupling = cp.value;
      if (cp.degenerate) m.flags |= kFlagCouplingDegenerate;
      if (options.per_sample_rank) {
        std::size_t used = 0;
        for (std::size_t n = 0; n < h.batch_size(); ++n) {
          const RankMetrics rm = rank_metrics(h.engine(n).input_block(m.v, m.w, c));
          if (rm.degenerate) continue;
          m.stable_rank += rm.stable_rank;
          m.d_eff += rm.d_eff;
          ++used;
        }
        if (used == 0) {
          m.flags |= kFlagRankDegenerate;
        } else {
          m.stable_rank /= static_cast<double>(used);
          m.d_eff /= static_cast<double>(used);
        }
      } else {
        const RankMetrics rm = rank_metrics(block);
        m.stable_rank = rm.stable_rank;
        m.d_eff = rm.d_eff;
        if (rm.degenerate) m.flags |= kFlagRankDegenerate;
      }
      if (frobenius_norm(d.gn) == 0.0) m.flags |= kFlagGapDegenerate;
      m.gn_gap = gn_gap(d);
      out.push_back(m);
    }
  }
  return out;
}

const char* metric_name(MetricKind k) {
  switch (k) {
    case MetricKind::kResonance: return "resonance";
    case MetricKind::kCoupling: return "coupling";
    case MetricKind::kStableRank: return "stable_rank";
    case MetricKind::kDEff: return "d_eff";
    case MetricKind::kGnGap: return "gn_gap";
  }
  return "unknown";
}

double metric_value(const PairMetrics& m, MetricKind k) {
  switch (k) {
    case MetricKind::kResonance: return m.resonance;
    case MetricKind::kCoupling: return m.coupling;
    case MetricKind::kStableRank: return m.stable_rank;
    case MetricKind::kDEff: return m.d_eff;
    case MetricKind::kGnGap: return m.gn_gap;
  }
  return 0.0;
}

namespace {

bool excluded(const PairMetrics& m, MetricKind k) {
  switch (k) {
    case MetricKind::kCoupling: return (m.flags & kFlagCouplingDegenerate) != 0;
    case MetricKind::kStableRank:
    case MetricKind::kDEff: return (m.flags & kFlagRankDegenerate) != 0;
    default: return false;
  }
}

}  // namespace

DistanceProfile distance_profile(const std::vector<PairMetrics>& metrics, MetricKind kind) {
  DistanceProfile p;
  p.metric = kind;
  std::map<std::size_t, std::vector<double>> bins;
  for (const PairMetrics& m : metrics) {
    if (m.dist == kUnreachable || excluded(m, kind)) continue;
    bins[m.dist].push_back(metric_value(m, kind));
  }
  for (const auto& [dist, values] : bins) {
    ProfileRow row;
    row.dist = dist;
    row.count = values.size();
    double s = 0.0;
    for (double x : values) s += x;
    row.mean = s / static_cast<double>(values.size());
    double var = 0.0;
    for (double x : values) var += (x - row.mean) * (x - row.mean);
    row.std = std::sqrt(var / static_cast<double>(values.size()));
    p.rows.push_back(row);
  }
  return p;
}

LinearFit linear_fit(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(ErrorCode::kDimensionMismatch, "linear_fit: length mismatch");
  const std::size_t n = x.size();
  if (n < 2) throw Error(ErrorCode::kInsufficientData, "linear_fit: need at least two points");
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0) throw Error(ErrorCode::kInsufficientData, "linear_fit: x has no spread");
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  if (syy > 0.0) {
    double ss_res = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = y[i] - (f.intercept + f.slope * x[i]);
      ss_res += r * r;
    }
    f.r_squared = std::clamp(1.0 - ss_res / syy, 0.0, 1.0);
    f.r_squared_defined = true;
  }
  return f;
}

DecayFit decay_fit(const DistanceProfile& profile, std::size_t min_dist) {
  Vector x, y;
  for (const ProfileRow& row : profile.rows) {
    if (row.count == 0 || row.dist < min_dist || !(row.mean > 0.0)) continue;
    x.push_back(static_cast<double>(row.dist));
    y.push_back(std::log(row.mean));
  }
  if (x.size() < 2) throw Error(ErrorCode::kInsufficientData, "decay_fit: need at least two distances");
  const LinearFit lf = linear_fit(x, y);
  DecayFit f;
  f.slope = -lf.slope;
  f.intercept = lf.intercept;
  f.points = x.size();
  f.r_squared_defined = lf.r_squared_defined && x.size() >= 3;
  f.r_squared = f.r_squared_defined ? lf.r_squared : 0.0;
  return f;
}

namespace {

Vector ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  Vector r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(ErrorCode::kDimensionMismatch, "spearman: length mismatch");
  if (x.size() < 2) throw Error(ErrorCode::kInsufficientData, "spearman: need at least two points");
  const Vector rx = ranks(x), ry = ranks(y);
  const double m = 0.5 * static_cast<double>(x.size() + 1);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - m) * (ry[i] - m);
    sxx += (rx[i] - m) * (rx[i] - m);
    syy += (ry[i] - m) * (ry[i] - m);
  }
  if (sxx == 0.0 || syy == 0.0) throw Error(ErrorCode::kInsufficientData, "spearman: constant input");
  return sxy / std::sqrt(sxx * syy);
}

double rho_max(HessianEngine& e) {
  const Graph& g = e.graph();
  double rho = 0.0;
  for (const Node& u : g.nodes()) {
    if (u.id == g.out()) continue;
    for (NodeId v : u.parents) rho = std::max(rho, spectral_norm(e.edge_jacobian(u.id, v)));
  }
  return rho;
}

std::size_t max_out_degree(const Graph& g) {
  std::size_t s = 0;
  for (const Node& n : g.nodes()) {
    if (n.id == g.out()) continue;
    std::size_t deg = 0;
    for (NodeId c : n.children) deg += c == g.out() ? 0 : 1;
    s = std::max(s, deg);
  }
  return s;
}

void require_chain(const Graph& g, const std::vector<NodeId>& chain) {
  if (chain.empty()) throw Error(ErrorCode::kNotAChain, "empty chain");
  for (std::size_t k = 0; k + 1 < chain.size(); ++k) {
    const Node& n = g.node(chain[k]);
    if (n.children.size() != 1 || n.children.front() != chain[k + 1]) {
      throw Error(ErrorCode::kNotAChain, "node '" + n.name + "' does not have '" + g.node(chain[k + 1]).name +
                                             "' as its only child");
    }
  }
}

Matrix chain_product(HessianEngine& e, const std::vector<NodeId>& chain, std::size_t i,
                     std::size_t j) {
  if (i > j || j >= chain.size()) throw Error(ErrorCode::kInvalidArgument, "chain_product: need i <= j < length");
  require_chain(e.graph(), chain);
  Matrix p = Matrix::identity(e.graph().node(chain[i]).dim());
  for (std::size_t k = i; k < j; ++k) p = e.edge_jacobian(chain[k + 1], chain[k]) * p;
  return p;
}

double lyapunov_exponent(HessianEngine& e, const std::vector<NodeId>& chain, std::size_t i,
                         std::size_t m) {
  if (m == 0) throw Error(ErrorCode::kInvalidArgument, "lyapunov_exponent: span must be positive");
  return std::log(spectral_norm(chain_product(e, chain, i, i + m))) / static_cast<double>(m);
}

BoundCheck resonance_bound_check(BatchHessian& h, const std::vector<NodeId>& chain,
                                 std::size_t i, std::size_t j) {
  require_chain(h.graph(), chain);
  if (i > j || j >= chain.size()) throw Error(ErrorCode::kInvalidArgument, "resonance_bound_check: need i <= j");
  BoundCheck b;
  b.lhs = resonance(h.input_block(chain[i], chain[j]));
  for (std::size_t n = 0; n < h.batch_size(); ++n) {
    HessianEngine& e = h.engine(n);
    b.rhs += frobenius_norm(e.input_block(chain[j], chain[j])) * spectral_norm(chain_product(e, chain, i, j));
  }
  b.rhs /= static_cast<double>(h.batch_size());
  b.ok = b.lhs <= b.rhs * (1.0 + 1e-8);
  return b;
}

InteractionRadius interaction_radius(double c, double s_rho, double eps, double min_diag) {
  if (!(eps > 0.0) || c < 0.0) throw Error(ErrorCode::kInvalidArgument, "interaction_radius: bad arguments");
  InteractionRadius r;
  if (s_rho >= 1.0) {
    r.no_decay = true;
    return r;
  }
  const double target = eps * min_diag;
  if (c < target) return r;
  if (s_rho <= 0.0) {
    r.k = 1;
    return r;
  }
  double k = std::ceil(std::log(target / c) / std::log(s_rho));
  k = std::max(k, 0.0);
  // Settle rounding at the boundary against the strict inequality.
  while (c * std::pow(s_rho, k) >= target) k += 1.0;
  while (k > 0.0 && c * std::pow(s_rho, k - 1.0) < target) k -= 1.0;
  r.k = static_cast<std::size_t>(k);
  return r;
}

InteractionRadius interaction_radius(BatchHessian& h, double eps) {
  const Graph& g = h.graph();
  const double c = frobenius_norm(h.input_block(g.prediction(), g.prediction()));
  double rho = 0.0;
  for (std::size_t n = 0; n < h.batch_size(); ++n) rho = std::max(rho, rho_max(h.engine(n)));
  double min_diag = std::numeric_limits<double>::infinity();
  for (NodeId v : g.measurement_nodes()) min_diag = std::min(min_diag, frobenius_norm(h.input_block(v, v)));
  return interaction_radius(c, static_cast<double>(max_out_degree(g)) * rho, eps, min_diag);
}

namespace {

Matrix path_jacobian(HessianEngine& e, const std::vector<NodeId>& path) {
  Matrix p = Matrix::identity(e.graph().node(path.front()).dim());
  for (std::size_t k = 0; k + 1 < path.size(); ++k) p = e.edge_jacobian(path[k + 1], path[k]) * p;
  return p;
}

}  // namespace

PathDecomposition path_decomposition_gn(BatchHessian& h, NodeId v, NodeId w, std::size_t cap) {
  const Graph& g = h.graph();
  const NodeId pred = g.prediction();
  PathDecomposition out;
  out.total = Matrix(g.node(v).dim(), g.node(w).dim());
  const PathList pv = enumerate_paths(g, v, pred, cap);
  const PathList pw = enumerate_paths(g, w, pred, cap);
  if (pv.overflow || pw.overflow || pv.paths.size() * pw.paths.size() > cap) {
    out.overflow = true;
    return out;
  }
  const double inv = 1.0 / static_cast<double>(h.batch_size());
  for (const auto& a : pv.paths) {
    for (const auto& b : pw.paths) {
      PathContribution t{pred, a, b, Matrix(g.node(v).dim(), g.node(w).dim())};
      for (std::size_t n = 0; n < h.batch_size(); ++n) {
        HessianEngine& e = h.engine(n);
        t.contribution.add_scaled(transpose_times(path_jacobian(e, a), e.loss_hessian() * path_jacobian(e, b)), inv);
      }
      out.total += t.contribution;
      out.terms.push_back(std::move(t));
    }
  }
  const Matrix gn = gn_block_unrolled(h, v, w);
  const double scale = frobenius_norm(gn);
  out.residual = frobenius_norm(out.total - gn) / (scale > 0.0 ? scale : 1.0);
  return out;
}

SkipStep optimal_skip_step(std::size_t layers, std::size_t budget) {
  if (budget == 0) throw Error(ErrorCode::kInvalidArgument, "optimal_skip_step: skip budget must be positive");
  if (layers == 0) throw Error(ErrorCode::kInvalidArgument, "optimal_skip_step: need at least one layer");
  SkipStep s{layers / budget, false};
  if (s.k == 0) s = {1, true};
  return s;
}

LowRankBlock low_rank_block(const Matrix& block, std::size_t r) {
  LowRankBlock out;
  out.factors = truncated_svd(block, r);
  out.error = frobenius_norm(block - reconstruct(out.factors));
  const Vector s = singular_values(block);
  double tail = 0.0;
  for (std::size_t i = r; i < s.size(); ++i) tail += s[i] * s[i];
  out.tail_error = std::sqrt(tail);
  return out;
}

}  // namespace hessdag
