#include <stdexcept>

#include "bignet/gat.hpp"

namespace bignet::nn {

namespace {

enum Family : int { kSemSelf = 0, kTopoSelf = 1, kSpatSelf = 2, kSemTopo = 3, kTopoSem = 4, kSemSpat = 5, kSpatSem = 6 };

}  // namespace

const std::vector<ArcType>& arc_types(GraphMode mode) {
  static const std::vector<ArcType> homo = {{0, 0, "node>node"}};
  static const std::vector<ArcType> hetero = {
      {0, 0, "sem>sem"}, {1, 1, "topo>topo"}, {2, 2, "spat>spat"}, {0, 1, "sem>topo"},
      {1, 0, "topo>sem"}, {0, 2, "sem>spat"}, {2, 0, "spat>sem"},
  };
  return mode == GraphMode::homogeneous ? homo : hetero;
}

int type_count(GraphMode mode) { return mode == GraphMode::homogeneous ? 1 : kNodeTypeCount; }

std::vector<int> type_widths(GraphMode mode) {
  if (mode == GraphMode::homogeneous) return {kHomogeneousWidth};
  return {kSemanticWidth, kTopologicalWidth, kSpatialWidth};
}

ModelGraph to_model_graph(const BimGraph& g, bool self_loops) {
  const BimGraph* one[] = {&g};
  return to_model_graph(std::span<const BimGraph* const>(one), self_loops);
}

ModelGraph to_model_graph(std::span<const BimGraph* const> graphs, bool self_loops) {
  if (graphs.empty()) throw std::invalid_argument("to_model_graph: no graphs");
  const GraphMode mode = graphs[0]->mode;
  const int types = type_count(mode);
  const auto widths = type_widths(mode);
  const auto& fams = arc_types(mode);

  ModelGraph mg;
  mg.mode = mode;
  mg.features.resize(static_cast<std::size_t>(types));
  mg.global_index.resize(static_cast<std::size_t>(types));
  mg.labels.resize(static_cast<std::size_t>(types));
  mg.arc_src.resize(fams.size());
  mg.arc_dst.resize(fams.size());

  std::vector<std::size_t> per_type(static_cast<std::size_t>(types), 0);
  for (const auto* g : graphs) {
    if (g->mode != mode) throw std::invalid_argument("to_model_graph: graphs mix homogeneous and heterogeneous modes");
    for (const auto& n : g->nodes) ++per_type[mode == GraphMode::homogeneous ? 0 : static_cast<std::size_t>(n.type)];
  }
  for (int t = 0; t < types; ++t) {
    mg.features[static_cast<std::size_t>(t)].resize(static_cast<Eigen::Index>(per_type[static_cast<std::size_t>(t)]),
                                                     widths[static_cast<std::size_t>(t)]);
    mg.global_index[static_cast<std::size_t>(t)].reserve(per_type[static_cast<std::size_t>(t)]);
    mg.labels[static_cast<std::size_t>(t)].reserve(per_type[static_cast<std::size_t>(t)]);
  }

  std::uint32_t global = 0;
  std::vector<std::uint32_t> local;
  for (const auto* g : graphs) {
    local.assign(g->node_count(), 0);
    for (std::size_t i = 0; i < g->node_count(); ++i, ++global) {
      const auto& n = g->nodes[i];
      const std::size_t t = mode == GraphMode::homogeneous ? 0 : static_cast<std::size_t>(n.type);
      const auto row = static_cast<std::uint32_t>(mg.global_index[t].size());
      const auto f = g->feature(i);
      if (static_cast<int>(f.size()) != widths[t])
        throw std::invalid_argument("to_model_graph: node " + std::to_string(i) + " has width " + std::to_string(f.size()));
      for (std::size_t c = 0; c < f.size(); ++c) mg.features[t](row, static_cast<Eigen::Index>(c)) = f[c];
      mg.global_index[t].push_back(global);
      mg.labels[t].push_back(n.label == NodeLabel::unlabeled ? -1 : static_cast<int>(n.label));
      local[i] = row;
      if (self_loops) {
        mg.arc_src[t].push_back(row);
        mg.arc_dst[t].push_back(row);
      }
    }
    for (const auto& e : g->edges) {
      const std::uint32_t s = local[e[0]], r = local[e[1]];
      if (mode == GraphMode::homogeneous) {
        mg.arc_src[0].push_back(s);
        mg.arc_dst[0].push_back(r);
        mg.arc_src[0].push_back(r);
        mg.arc_dst[0].push_back(s);
        continue;
      }
      const bool topo = g->nodes[e[1]].type == NodeType::topological;
      const int out = topo ? kSemTopo : kSemSpat, in = topo ? kTopoSem : kSpatSem;
      mg.arc_src[static_cast<std::size_t>(out)].push_back(s);
      mg.arc_dst[static_cast<std::size_t>(out)].push_back(r);
      mg.arc_src[static_cast<std::size_t>(in)].push_back(r);
      mg.arc_dst[static_cast<std::size_t>(in)].push_back(s);
    }
  }
  mg.total_nodes = global;
  validate_model_graph(mg);
  return mg;
}

void validate_model_graph(const ModelGraph& g) {
  const auto& fams = arc_types(g.mode);
  const auto widths = type_widths(g.mode);
  if (g.types() != type_count(g.mode)) throw std::invalid_argument("model graph: wrong number of type blocks");
  if (g.arc_src.size() != fams.size() || g.arc_dst.size() != fams.size())
    throw std::invalid_argument("model graph: arcs of undeclared family");
  for (int t = 0; t < g.types(); ++t)
    if (g.features[static_cast<std::size_t>(t)].cols() != widths[static_cast<std::size_t>(t)])
      throw std::invalid_argument("model graph: type block " + std::to_string(t) + " has the wrong width");
  for (std::size_t r = 0; r < fams.size(); ++r) {
    if (g.arc_src[r].size() != g.arc_dst[r].size()) throw std::invalid_argument("model graph: ragged arc lists");
    const auto ns = g.count(fams[r].src_type), nd = g.count(fams[r].dst_type);
    for (std::size_t k = 0; k < g.arc_src[r].size(); ++k)
      if (g.arc_src[r][k] >= ns || g.arc_dst[r][k] >= nd)
        throw std::invalid_argument("model graph: arc endpoint outside family '" + fams[r].name + "'");
  }
}

Mat gather_global(const ModelGraph& g, std::span<const Var> per_type) {
  if (per_type.size() != static_cast<std::size_t>(g.types())) throw std::invalid_argument("gather_global: type count");
  Eigen::Index width = per_type.empty() ? 0 : per_type[0]->value.cols();
  Mat out(static_cast<Eigen::Index>(g.total_nodes), width);
  for (std::size_t t = 0; t < per_type.size(); ++t) {
    if (per_type[t]->value.cols() != width) throw std::invalid_argument("gather_global: width differs across types");
    for (std::size_t i = 0; i < g.global_index[t].size(); ++i)
      out.row(g.global_index[t][i]) = per_type[t]->value.row(static_cast<Eigen::Index>(i));
  }
  return out;
}

}  // namespace bignet::nn
