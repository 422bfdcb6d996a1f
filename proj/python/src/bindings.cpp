#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "bignet/bim_model.hpp"
#include "bignet/features.hpp"
#include "bignet/graph.hpp"
#include "bignet/synth.hpp"
#include "bignet/transfer.hpp"
#include "cli.hpp"

namespace py = pybind11;
using namespace bignet;

namespace {

py::array_t<float> type_features(const BimGraph& g, NodeType t) {
  const auto width = static_cast<py::ssize_t>(feature_width(g.mode, t));
  py::ssize_t rows = 0;
  for (const auto& n : g.nodes) rows += n.type == t;
  py::array_t<float> out({rows, width});
  auto m = out.mutable_unchecked<2>();
  py::ssize_t r = 0;
  for (std::size_t i = 0; i < g.node_count(); ++i) {
    if (g.nodes[i].type != t) continue;
    const auto f = g.feature(i);
    for (py::ssize_t c = 0; c < width; ++c) m(r, c) = f[static_cast<std::size_t>(c)];
    ++r;
  }
  return out;
}

py::dict report_dict(const EvalReport& r) {
  py::dict d;
  d["average_f1"] = r.average_f1;
  d["weighted_f1"] = r.weighted_f1;
  d["accuracy"] = r.accuracy;
  d["evaluated"] = r.evaluated;
  py::list per_class;
  for (const auto& m : r.per_class) {
    py::dict c;
    c["precision"] = m.precision;
    c["recall"] = m.recall;
    c["f1"] = m.f1;
    c["support"] = m.support;
    per_class.append(c);
  }
  d["per_class"] = per_class;
  py::list confusion;
  for (const auto& row : r.confusion) confusion.append(py::cast(std::vector<std::size_t>(row.begin(), row.end())));
  d["confusion"] = confusion;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "BIM graph encoding, masked autoencoder pretraining and error classification";

  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<GraphIoError>(m, "GraphIoError", PyExc_IOError);

  py::enum_<GraphMode>(m, "GraphMode")
      .value("homogeneous", GraphMode::homogeneous)
      .value("heterogeneous", GraphMode::heterogeneous);
  py::enum_<NodeType>(m, "NodeType")
      .value("semantic", NodeType::semantic)
      .value("topological", NodeType::topological)
      .value("spatial", NodeType::spatial);

  m.def("feature_width", &feature_width, py::arg("mode"), py::arg("node_type"));
  m.def("hash_embed", [](std::string_view text) {
    const auto v = hash_embed(text);
    return py::array_t<double>(static_cast<py::ssize_t>(v.size()), v.data());
  });

  py::class_<BimGraph>(m, "Graph")
      .def_property_readonly("mode", [](const BimGraph& g) { return g.mode; })
      .def_property_readonly("floor_id", [](const BimGraph& g) { return g.meta.floor_id; })
      .def_property_readonly("region_id", [](const BimGraph& g) { return g.meta.region_id; })
      .def_property_readonly("radius", [](const BimGraph& g) { return g.meta.spatial_radius_m; })
      .def_property_readonly("node_count", &BimGraph::node_count)
      .def_property_readonly("edge_count", &BimGraph::edge_count)
      .def("count_by_type", &BimGraph::count_by_type)
      .def_property_readonly("node_types",
                             [](const BimGraph& g) {
                               py::array_t<std::uint8_t> a(static_cast<py::ssize_t>(g.node_count()));
                               auto v = a.mutable_unchecked<1>();
                               for (std::size_t i = 0; i < g.node_count(); ++i)
                                 v(static_cast<py::ssize_t>(i)) = static_cast<std::uint8_t>(g.nodes[i].type);
                               return a;
                             })
      .def_property_readonly("labels",
                             [](const BimGraph& g) {
                               std::vector<std::string> out;
                               for (const auto& n : g.nodes) out.emplace_back(to_string(n.label));
                               return out;
                             })
      .def_property_readonly("sources",
                             [](const BimGraph& g) {
                               std::vector<std::pair<std::string, std::string>> out;
                               for (const auto& n : g.nodes) out.emplace_back(n.source_a, n.source_b);
                               return out;
                             })
      .def_property_readonly("edges",
                             [](const BimGraph& g) {
                               py::array_t<std::uint32_t> a({static_cast<py::ssize_t>(g.edge_count()), py::ssize_t{2}});
                               auto v = a.mutable_unchecked<2>();
                               for (std::size_t e = 0; e < g.edge_count(); ++e) {
                                 v(static_cast<py::ssize_t>(e), 0) = g.edges[e][0];
                                 v(static_cast<py::ssize_t>(e), 1) = g.edges[e][1];
                               }
                               return a;
                             })
      .def("features", &type_features, py::arg("node_type"),
           "Feature rows of one node type, in node order, as a float32 matrix.")
      .def("check_invariants", &check_graph_invariants);

  m.def(
      "build_graphs",
      [](const std::string& bimlite, double radius, GraphMode mode, std::optional<std::string> labels_json) {
        const auto floors = parse_model(bimlite);
        const HashingEmbedder embedder;
        LabelMap labels;
        if (labels_json) labels = labels_from_json(*labels_json);
        std::vector<BimGraph> out;
        for (const auto& f : floors) out.push_back(build_graph(f, radius, mode, embedder, labels_json ? &labels : nullptr));
        return out;
      },
      py::arg("bimlite"), py::arg("radius") = 0.3, py::arg("mode") = GraphMode::heterogeneous,
      py::arg("labels_json") = py::none(), "One graph per floor of a BIM-lite JSON document (hashing text embedder).");

  m.def(
      "synth_building",
      [](const std::string& spec_json) { return serialize_model(generate_building(spec_from_json(spec_json))); },
      py::arg("spec_json") = "{}", "BIM-lite JSON for one parametric building.");

  m.def("save_graph", &save_graph, py::arg("graph"), py::arg("path"));
  m.def("load_graph", &load_graph, py::arg("path"));
  m.def(
      "load_dataset",
      [](const std::filesystem::path& manifest) {
        auto d = load_dataset(manifest);
        std::vector<std::pair<BimGraph, std::string>> out;
        for (std::size_t i = 0; i < d.graphs.size(); ++i)
          out.emplace_back(std::move(d.graphs[i]), std::string(to_string(d.splits[i])));
        return out;
      },
      py::arg("manifest"), "List of (graph, split) pairs.");

  m.def(
      "evaluate_predictions",
      [](const std::vector<int>& predicted, const std::vector<int>& actual) {
        return report_dict(evaluate_predictions(predicted, actual));
      },
      py::arg("predicted"), py::arg("actual"));
  m.def(
      "update_class_weights_raw",
      [](const ClassWeights& w, const ClassWeights& err, double alpha) { return update_class_weights_raw(w, err, alpha); },
      py::arg("weights"), py::arg("error_rates"), py::arg("alpha") = 0.1);

  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "bignet");
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = cli::run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs a CLI command; returns (exit_code, stdout, stderr).");
}
