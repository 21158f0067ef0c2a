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
// Python bindings: graphs, exact blocks, decomposition, metrics, HVPs,
// stochastic estimators and the experiment runner.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "hessdag/decomposition.hpp"
#include "hessdag/diagnostics.hpp"
#include "hessdag/error.hpp"
#include "hessdag/experiments.hpp"
#include "hessdag/hessian.hpp"
#include "hessdag/hvp.hpp"
#include "hessdag/io.hpp"
#include "hessdag/oracle.hpp"
#include "hessdag/rng.hpp"

namespace py = pybind11;
using namespace hessdag;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

py::array_t<double> to_numpy(const Matrix& m) {
  py::array_t<double> out(std::vector<py::ssize_t>{static_cast<py::ssize_t>(m.rows()),
                                                static_cast<py::ssize_t>(m.cols())});
  std::copy(m.data().begin(), m.data().end(), out.mutable_data());
  return out;
}

py::array_t<double> to_numpy(const Vector& v) {
  py::array_t<double> out(std::vector<py::ssize_t>{static_cast<py::ssize_t>(v.size())});
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

Vector to_vector(const Array& a) {
  return Vector(a.data(), a.data() + a.size());
}

Component parse_component(const std::string& s) {
  if (s == "full") return Component::kFull;
  if (s == "gn") return Component::kGaussNewton;
  if (s == "tensor") return Component::kTensor;
  throw Error(ErrorCode::kInvalidArgument, "component must be full, gn or tensor");
}

InitScheme parse_scheme(const std::string& s) {
  if (s == "he") return InitScheme::kHe;
  if (s == "xavier") return InitScheme::kXavier;
  if (s == "uniform") return InitScheme::kUniform;
  throw Error(ErrorCode::kInvalidArgument, "init must be he, xavier or uniform");
}

struct PyGraph {
  std::shared_ptr<const Graph> g;
};

PyGraph make_graph(const GraphSpec& spec) { return {std::make_shared<const Graph>(Graph::build(spec))}; }

// inputs: one (n, rows*cols) array per Input node; targets (n, d) for MSE or
// labels (n,) for cross-entropy.
Batch make_batch(const Graph& g, const std::vector<Array>& inputs, const std::optional<Array>& targets,
                 const std::optional<py::array_t<std::int64_t>>& labels) {
  if (inputs.size() != g.inputs().size()) {
    throw Error(ErrorCode::kDimensionMismatch, "expected " + std::to_string(g.inputs().size()) +
                                                   " input arrays");
  }
  const std::size_t n = inputs.empty() ? 0 : static_cast<std::size_t>(inputs[0].shape(0));
  Batch batch(n);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const auto& a = inputs[k];
    const std::size_t dim = g.node(g.inputs()[k]).dim();
    if (a.ndim() != 2 || static_cast<std::size_t>(a.shape(0)) != n ||
        static_cast<std::size_t>(a.shape(1)) != dim) {
      throw Error(ErrorCode::kDimensionMismatch,
                  "input " + std::to_string(k) + " must have shape (n, " + std::to_string(dim) + ")");
    }
    for (std::size_t i = 0; i < n; ++i) batch[i].inputs.emplace_back(a.data(i, 0), a.data(i, 0) + dim);
  }
  const Node& loss = g.node(g.out());
  if (loss.kind == OpKind::kLossSoftmaxCe) {
    if (!labels || static_cast<std::size_t>(labels->size()) != n) {
      throw Error(ErrorCode::kInvalidArgument, "cross-entropy graphs need n labels");
    }
    for (std::size_t i = 0; i < n; ++i) {
      const auto l = labels->at(static_cast<py::ssize_t>(i));
      if (l < 0 || static_cast<std::size_t>(l) >= loss.num_classes) {
        throw Error(ErrorCode::kInvalidArgument, "label out of range");
      }
      batch[i].label = static_cast<std::size_t>(l);
    }
  } else {
    const std::size_t d = g.node(g.prediction()).dim();
    if (!targets || targets->ndim() != 2 || static_cast<std::size_t>(targets->shape(0)) != n ||
        static_cast<std::size_t>(targets->shape(1)) != d) {
      throw Error(ErrorCode::kDimensionMismatch, "MSE graphs need targets of shape (n, " +
                                                     std::to_string(d) + ")");
    }
    for (std::size_t i = 0; i < n; ++i) batch[i].target.assign(targets->data(i, 0), targets->data(i, 0) + d);
  }
  return batch;
}

class PyHessian {
 public:
  PyHessian(const PyGraph& g, const Array& theta, Batch batch)
      : g_(g.g), theta_(to_vector(theta)), batch_(std::move(batch)) {
    if (theta_.size() != g_->param_count()) {
      throw Error(ErrorCode::kDimensionMismatch, "theta has wrong length");
    }
    h_ = std::make_unique<BatchHessian>(*g_, theta_, batch_);
  }

  NodeId id(const std::string& name) const { return g_->find(name); }
  const Graph& graph() const { return *g_; }
  BatchHessian& h() { return *h_; }
  const Vector& theta() const { return theta_; }
  const Batch& batch() const { return batch_; }

 private:
  std::shared_ptr<const Graph> g_;
  Vector theta_;
  Batch batch_;
  std::unique_ptr<BatchHessian> h_;
};

py::dict metrics_dict(const Graph& g, const PairMetrics& m) {
  py::dict d;
  d["v"] = g.node(m.v).name;
  d["w"] = g.node(m.w).name;
  d["dist"] = m.dist;
  d["resonance"] = m.resonance;
  d["coupling"] = m.coupling;
  d["stable_rank"] = m.stable_rank;
  d["d_eff"] = m.d_eff;
  d["gn_gap"] = m.gn_gap;
  d["flags"] = m.flags;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Exact and stochastic inter-layer Hessian diagnostics for DAG networks";

  static py::exception<Error> error(m, "HessdagError", PyExc_ValueError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object exc = error;
      py::object inst = exc(e.what());
      inst.attr("code") = std::string(error_code_name(e.code()));
      PyErr_SetObject(error.ptr(), inst.ptr());
    }
  });

  py::class_<PyGraph>(m, "Graph")
      .def_static("from_json", [](const std::string& text) { return make_graph(graph_from_json(text)); },
                  py::arg("text"))
      .def_static("load", [](const std::filesystem::path& p) { return make_graph(load_graph(p)); },
                  py::arg("path"))
      .def_static("template",
                  [](const std::string& kind, std::size_t depth, std::size_t width, std::size_t in,
                     std::size_t classes, const std::string& fn) {
                    const auto act = parse_activation(fn);
                    if (!act) throw Error(ErrorCode::kInvalidArgument, "unknown activation " + fn);
                    if (kind == "chain") return make_graph(mlp_chain(depth, width, in, classes, *act));
                    if (kind == "residual") return make_graph(residual_chain(depth, width, in, classes, *act));
                    if (kind == "diamond_sum") return make_graph(diamond_mlp(width, depth, "sum", in, classes, *act));
                    if (kind == "diamond_cat") return make_graph(diamond_mlp(width, depth, "cat", in, classes, *act));
                    throw Error(ErrorCode::kInvalidArgument, "unknown template " + kind);
                  },
                  py::arg("kind"), py::arg("depth"), py::arg("width"), py::arg("input_dim"),
                  py::arg("classes"), py::arg("activation") = "relu")
      .def("to_json", [](const PyGraph& g) { return graph_to_json(g.g->spec()); })
      .def_property_readonly("hash", [](const PyGraph& g) { return graph_hash(g.g->spec()); })
      .def_property_readonly("param_count", [](const PyGraph& g) { return g.g->param_count(); })
      .def_property_readonly("nodes", [](const PyGraph& g) {
        std::vector<std::string> out;
        for (const auto& n : g.g->nodes()) out.push_back(n.name);
        return out;
      })
      .def_property_readonly("measurement_nodes", [](const PyGraph& g) {
        std::vector<std::string> out;
        for (NodeId id : g.g->measurement_nodes()) out.push_back(g.g->node(id).name);
        return out;
      })
      .def("dim", [](const PyGraph& g, const std::string& n) { return g.g->node(g.g->find(n)).dim(); })
      .def("distance", [](const PyGraph& g, const std::string& a, const std::string& b) {
        return graph_distance(*g.g, g.g->find(a), g.g->find(b));
      })
      .def("init_params",
           [](const PyGraph& g, const std::string& scheme, std::uint64_t seed) {
             return to_numpy(init_params(*g.g, parse_scheme(scheme), seed));
           },
           py::arg("scheme") = "xavier", py::arg("seed") = 0)
      .def("loss",
           [](const PyGraph& g, const Array& theta, const std::vector<Array>& inputs,
              std::optional<Array> targets, std::optional<py::array_t<std::int64_t>> labels) {
             return batch_loss(*g.g, to_vector(theta), make_batch(*g.g, inputs, targets, labels));
           },
           py::arg("theta"), py::arg("inputs"), py::arg("targets") = py::none(),
           py::arg("labels") = py::none());

  py::class_<PyHessian>(m, "Hessian")
      .def(py::init([](const PyGraph& g, const Array& theta, const std::vector<Array>& inputs,
                       std::optional<Array> targets, std::optional<py::array_t<std::int64_t>> labels) {
             return std::make_unique<PyHessian>(g, theta, make_batch(*g.g, inputs, targets, labels));
           }),
           py::arg("graph"), py::arg("theta"), py::arg("inputs"), py::arg("targets") = py::none(),
           py::arg("labels") = py::none())
      .def("input_block",
           [](PyHessian& h, const std::string& v, const std::string& w, const std::string& c) {
             return to_numpy(h.h().input_block(h.id(v), h.id(w), parse_component(c)));
           },
           py::arg("v"), py::arg("w"), py::arg("component") = "full")
      .def("param_block",
           [](PyHessian& h, const std::string& v, const std::string& w, const std::string& c) {
             return to_numpy(h.h().param_block(h.id(v), h.id(w), parse_component(c)));
           },
           py::arg("v"), py::arg("w"), py::arg("component") = "full")
      .def("decompose",
           [](PyHessian& h, const std::string& v, const std::string& w) {
             const auto b = decompose(h.h(), h.id(v), h.id(w));
             py::dict d;
             d["gn"] = to_numpy(b.gn);
             d["tensor"] = to_numpy(b.tensor);
             d["full"] = to_numpy(b.full);
             d["gn_gap"] = gn_gap(b);
             return d;
           },
           py::arg("v"), py::arg("w"))
      .def("gn_unrolled",
           [](PyHessian& h, const std::string& v, const std::string& w) {
             return to_numpy(gn_block_unrolled(h.h(), h.id(v), h.id(w)));
           })
      .def("full_param_hessian",
           [](PyHessian& h, const std::string& c) {
             AssemblyOptions o;
             o.component = parse_component(c);
             return to_numpy(assemble_full_hessian(h.h(), o));
           },
           py::arg("component") = "full")
      .def("pair_metrics",
           [](PyHessian& h, std::optional<std::vector<std::string>> nodes, bool per_sample_rank) {
             std::vector<NodeId> ids;
             if (nodes) {
               for (const auto& n : *nodes) ids.push_back(h.id(n));
             } else {
               ids = h.graph().measurement_nodes();
             }
             MetricOptions o;
             o.per_sample_rank = per_sample_rank;
             py::list out;
             for (const auto& pm : pair_metrics(h.h(), ids, o)) out.append(metrics_dict(h.graph(), pm));
             return out;
           },
           py::arg("nodes") = py::none(), py::arg("per_sample_rank") = false)
      .def("param_hvp",
           [](PyHessian& h, const Array& r) {
             return to_numpy(param_hvp(h.graph(), h.h().evaluations(), to_vector(r)));
           },
           py::arg("r"))
      .def("stochastic_gn_gap",
           [](PyHessian& h, const std::string& v, const std::string& w, std::size_t m,
              std::uint64_t seed) {
             return stochastic_gn_gap(h.graph(), h.h().evaluations(), h.id(v), h.id(w), m,
                                      ProbeStream(seed));
           },
           py::arg("v"), py::arg("w"), py::arg("probes") = 100, py::arg("seed") = 0)
      .def("stochastic_stable_rank",
           [](PyHessian& h, const std::string& v, const std::string& w, std::size_t m,
              std::size_t iters, std::uint64_t seed) {
             return stochastic_stable_rank(h.graph(), h.h().evaluations(), h.id(v), h.id(w), m,
                                           iters, ProbeStream(seed))
                 .value;
           },
           py::arg("v"), py::arg("w"), py::arg("probes") = 100,
           py::arg("power_iters") = kDefaultPowerIters, py::arg("seed") = 0)
      .def("fd_param_hessian",
           [](PyHessian& h) { return to_numpy(fd_param_hessian(h.graph(), h.theta(), h.batch())); });

  m.def("run_experiment",
        [](const std::string& config_json) {
          py::list out;
          for (const auto& r : run_experiment(parse_config(config_json))) {
            py::dict d;
            d["seed"] = r.seed;
            d["ok"] = r.ok;
            d["failure"] = r.failure;
            py::list rows;
            for (const auto& s : r.summary) rows.append(py::make_tuple(s.variant, s.checkpoint, s.key, s.value));
            d["summary"] = rows;
            out.append(d);
          }
          return out;
        },
        py::arg("config_json"), "Runs every seed of a config and returns the summary rows.");
  m.def("emit_report",
        [](const std::filesystem::path& dir) {
          const auto rep = emit_report(dir);
          py::dict d;
          d["experiment"] = rep.experiment;
          d["present_seeds"] = rep.present_seeds;
          d["missing_seeds"] = rep.missing_seeds;
          d["failed_seeds"] = rep.failed_seeds;
          py::list rows;
          for (const auto& e : rep.summary) {
            rows.append(py::make_tuple(e.variant, e.checkpoint, e.key, e.mean, e.std, e.count));
          }
          d["summary"] = rows;
          return d;
        },
        py::arg("dir"));
  m.attr("__version__") = "0.1.0";
}
