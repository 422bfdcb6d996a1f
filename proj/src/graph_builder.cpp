#include "bignet/graph.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <set>
#include <tuple>
#include <unordered_set>

#include "bignet/spatial.hpp"

namespace bignet {

std::string_view to_string(NodeType t) {
  switch (t) {
    case NodeType::semantic: return "semantic";
    case NodeType::topological: return "topological";
    case NodeType::spatial: return "spatial";
  }
  return "unknown";
}

std::string_view to_string(NodeLabel l) {
  switch (l) {
    case NodeLabel::correct: return "correct";
    case NodeLabel::semantic_conflict: return "semantic_conflict";
    case NodeLabel::data_range_error: return "data_range_error";
    case NodeLabel::topological_error: return "topological_error";
    case NodeLabel::unlabeled: return "unlabeled";
  }
  return "unknown";
}

std::string_view to_string(GraphMode m) {
  return m == GraphMode::homogeneous ? "homogeneous" : "heterogeneous";
}

GraphMode graph_mode_from_string(std::string_view s) {
  if (s == "homogeneous" || s == "homo") return GraphMode::homogeneous;
  if (s == "heterogeneous" || s == "hetero") return GraphMode::heterogeneous;
  throw std::invalid_argument("unknown graph mode '" + std::string(s) + "'");
}

NodeLabel node_label_from_string(std::string_view s) {
  for (auto l : {NodeLabel::correct, NodeLabel::semantic_conflict, NodeLabel::data_range_error,
                 NodeLabel::topological_error, NodeLabel::unlabeled}) {
    if (to_string(l) == s) return l;
  }
  throw std::invalid_argument("unknown node label '" + std::string(s) + "'");
}

int feature_width(GraphMode m, NodeType t) {
  if (m == GraphMode::homogeneous) return kHomogeneousWidth;
  switch (t) {
    case NodeType::semantic: return kSemanticWidth;
    case NodeType::topological: return kTopologicalWidth;
    case NodeType::spatial: return kSpatialWidth;
  }
  throw std::invalid_argument("unknown node type");
}

void BimGraph::rebuild_offsets() {
  offsets.resize(nodes.size() + 1);
  offsets[0] = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    offsets[i + 1] = offsets[i] + static_cast<std::uint64_t>(feature_width(mode, nodes[i].type));
  }
}

std::array<std::size_t, kNodeTypeCount> BimGraph::count_by_type() const {
  std::array<std::size_t, kNodeTypeCount> out{};
  for (const auto& n : nodes) ++out[static_cast<int>(n.type)];
  return out;
}

namespace {

struct RelationRow {
  std::uint32_t a;
  std::uint32_t b;
  RelationKind kind;
};

void write_rows(BimGraph& g, std::size_t first_node, const RowMatrix& table, FeatureLayout layout) {
  for (Eigen::Index r = 0; r < table.rows(); ++r) {
    FeatureVector v{layout, std::vector<double>(table.row(r).begin(), table.row(r).end())};
    if (g.mode == GraphMode::homogeneous) v = to_homogeneous_feature(v);
    float* dst = g.features.data() + g.offsets[first_node + static_cast<std::size_t>(r)];
    for (double x : v.values) *dst++ = static_cast<float>(x);
  }
}

}  // namespace

BimGraph build_graph(const FloorModel& floor, double radius, GraphMode mode, const TextEmbedder& embedder,
                     const LabelMap* labels) {
  validate_floor(floor);

  // Canonical order: components sorted by id.
  FloorModel canonical;
  canonical.level_id = floor.level_id;
  canonical.relations = floor.relations;
  canonical.components = floor.components;
  std::stable_sort(canonical.components.begin(), canonical.components.end(),
                   [](const BimComponent& x, const BimComponent& y) { return x.id < y.id; });
  const auto& comps = canonical.components;
  const std::size_t n_comp = comps.size();

  std::unordered_map<std::string_view, std::uint32_t> rank;
  rank.reserve(n_comp);
  for (std::uint32_t i = 0; i < n_comp; ++i) rank.emplace(comps[i].id, i);

  std::vector<RelationRow> relations;
  relations.reserve(canonical.relations.size());
  for (const auto& r : canonical.relations) {
    std::uint32_t a = rank.at(r.a_id), b = rank.at(r.b_id);
    if (b < a) std::swap(a, b);
    relations.push_back({a, b, r.kind});
  }
  std::sort(relations.begin(), relations.end(), [](const RelationRow& x, const RelationRow& y) {
    return std::tie(x.a, x.b, x.kind) < std::tie(y.a, y.b, y.kind);
  });

  // The spatial pass already skips pairs holding a declared relation.
  const auto pairs = find_spatial_pairs(canonical, radius);

  BimGraph g;
  g.mode = mode;
  g.meta.region_id = floor.level_id;
  g.meta.floor_id = floor.level_id.substr(0, floor.level_id.find("/r"));
  g.meta.spatial_radius_m = radius;
  const std::size_t n_topo = relations.size();
  const std::size_t n_spatial = pairs.size();
  g.nodes.reserve(n_comp + n_topo + n_spatial);
  g.edges.reserve(2 * (n_topo + n_spatial));

  auto label_of = [labels](const std::string& key) {
    if (labels == nullptr) return NodeLabel::correct;
    auto it = labels->find(key);
    return it == labels->end() ? NodeLabel::correct : it->second;
  };

  for (const auto& c : comps) g.nodes.push_back({NodeType::semantic, label_of(c.id), c.id, {}});
  for (const auto& r : relations) {
    const auto node = static_cast<std::uint32_t>(g.nodes.size());
    const auto& a = comps[r.a].id;
    const auto& b = comps[r.b].id;
    g.nodes.push_back({NodeType::topological, label_of(pair_key(a, b)), a, b});
    g.edges.push_back({r.a, node});
    g.edges.push_back({r.b, node});
  }
  for (const auto& p : pairs) {
    const auto node = static_cast<std::uint32_t>(g.nodes.size());
    const auto& a = comps[p.a_index].id;
    const auto& b = comps[p.b_index].id;
    g.nodes.push_back({NodeType::spatial, label_of(pair_key(a, b)), a, b});
    g.edges.push_back({p.a_index, node});
    g.edges.push_back({p.b_index, node});
  }
  g.rebuild_offsets();
  g.features.assign(g.offsets.back(), 0.0f);

  // Per-floor normalisation runs per column over each node block; padded
  // zeros in the shared layout never change a column's maximum magnitude.
  std::unordered_map<std::string, std::vector<double>> text_cache;
  struct CachingEmbedder final : TextEmbedder {
    const TextEmbedder& inner;
    std::unordered_map<std::string, std::vector<double>>& cache;
    CachingEmbedder(const TextEmbedder& e, std::unordered_map<std::string, std::vector<double>>& c)
        : inner(e), cache(c) {}
    std::vector<double> embed(std::string_view text) const override {
      auto it = cache.find(std::string(text));
      if (it == cache.end()) it = cache.emplace(std::string(text), inner.embed(text)).first;
      return it->second;
    }
  } cached(embedder, text_cache);

  auto names = [&](std::size_t first, std::size_t count) {
    std::vector<std::string> out;
    out.reserve(count);
    for (std::size_t i = first; i < first + count; ++i) {
      const auto& n = g.nodes[i];
      out.push_back(n.source_b.empty() ? n.source_a : pair_key(n.source_a, n.source_b));
    }
    return out;
  };

  RowMatrix semantic(static_cast<Eigen::Index>(n_comp), kSemanticWidth);
  for (std::size_t i = 0; i < n_comp; ++i) {
    const auto v = encode_node_features(comps[i], cached);
    semantic.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(v.values.data(), kSemanticWidth);
  }
  normalize_floor(semantic, names(0, n_comp));
  write_rows(g, 0, semantic, FeatureLayout::semantic144);

  RowMatrix topological(static_cast<Eigen::Index>(n_topo), kTopologicalWidth);
  for (std::size_t i = 0; i < n_topo; ++i) {
    const auto v = encode_node_features(relations[i].kind);
    topological.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(v.values.data(), kTopologicalWidth);
  }
  normalize_floor(topological, names(n_comp, n_topo));
  write_rows(g, n_comp, topological, FeatureLayout::topological3);

  RowMatrix spatial(static_cast<Eigen::Index>(n_spatial), kSpatialWidth);
  for (std::size_t i = 0; i < n_spatial; ++i) {
    const auto v = encode_node_features(pairs[i].descriptor);
    spatial.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(v.values.data(), kSpatialWidth);
  }
  normalize_floor(spatial, names(n_comp + n_topo, n_spatial));
  write_rows(g, n_comp + n_topo, spatial, FeatureLayout::spatial11);
  return g;
}

void check_graph_invariants(const BimGraph& g) {
  auto fail = [](const std::string& msg) { throw std::logic_error("graph invariant violated: " + msg); };
  const std::size_t n = g.nodes.size();
  if (g.offsets.size() != n + 1) fail("offsets size");
  for (std::size_t i = 0; i < n; ++i) {
    const auto width = g.offsets[i + 1] - g.offsets[i];
    if (width != static_cast<std::uint64_t>(feature_width(g.mode, g.nodes[i].type))) {
      fail("node " + std::to_string(i) + " has feature width " + std::to_string(width));
    }
  }
  if (g.offsets.back() != g.features.size()) fail("feature buffer size");

  std::vector<std::vector<std::uint32_t>> neighbours(n);
  for (const auto& e : g.edges) {
    if (e[0] >= n || e[1] >= n) fail("edge endpoint out of range");
    if (g.nodes[e[0]].type != NodeType::semantic || g.nodes[e[1]].type == NodeType::semantic) {
      fail("edge " + std::to_string(e[0]) + "-" + std::to_string(e[1]) + " is not semantic-relation");
    }
    neighbours[e[1]].push_back(e[0]);
  }
  std::unordered_set<std::string> seen_pairs;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& node = g.nodes[i];
    if (node.type == NodeType::semantic) {
      if (node.label == NodeLabel::topological_error) fail("topological_error on semantic node " + std::to_string(i));
      continue;
    }
    if (node.label == NodeLabel::semantic_conflict || node.label == NodeLabel::data_range_error) {
      fail("semantic error label on relation node " + std::to_string(i));
    }
    if (node.type == NodeType::topological && node.label == NodeLabel::topological_error) {
      fail("topological_error label on topological node " + std::to_string(i));
    }
    const auto& nb = neighbours[i];
    if (nb.size() != 2) fail("relation node " + std::to_string(i) + " has degree " + std::to_string(nb.size()));
    std::set<std::string> ends = {g.nodes[nb[0]].source_a, g.nodes[nb[1]].source_a};
    if (ends != std::set<std::string>{node.source_a, node.source_b}) {
      fail("relation node " + std::to_string(i) + " is not wired to its source components");
    }
    if (!seen_pairs.insert(pair_key(node.source_a, node.source_b)).second) {
      fail("more than one relation node for pair " + pair_key(node.source_a, node.source_b));
    }
  }
}

std::size_t projected_node_count(const FloorModel& floor, double radius) {
  std::vector<Aabb> boxes;
  boxes.reserve(floor.components.size());
  for (const auto& c : floor.components) boxes.push_back(derive_aabb(c));
  return floor.components.size() + floor.relations.size() + count_spatial_pairs(floor, boxes, radius);
}

namespace {

FloorModel subset(const FloorModel& floor, std::span<const std::uint32_t> members) {
  FloorModel out;
  out.level_id = floor.level_id;
  out.components.reserve(members.size());
  std::unordered_set<std::string_view> ids;
  for (auto i : members) {
    out.components.push_back(floor.components[i]);
    ids.insert(floor.components[i].id);
  }
  for (const auto& r : floor.relations) {
    if (ids.contains(r.a_id) && ids.contains(r.b_id)) out.relations.push_back(r);
  }
  return out;
}

void split_recursive(const FloorModel& floor, std::size_t max_nodes, double radius, int depth,
                     std::vector<FloorModel>& out, std::vector<std::string>* warnings) {
  if (projected_node_count(floor, radius) <= max_nodes) {
    out.push_back(floor);
    return;
  }
  if (floor.components.size() < 2) {
    if (warnings) {
      warnings->push_back("region of floor '" + floor.level_id + "' holding component '" +
                          (floor.components.empty() ? std::string() : floor.components[0].id) +
                          "' exceeds the node budget and cannot be split");
    }
    out.push_back(floor);
    return;
  }
  const int axis = depth % 2;  // 0 = x, 1 = y
  std::vector<std::uint32_t> order(floor.components.size());
  std::iota(order.begin(), order.end(), 0u);
  std::vector<double> key(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) key[i] = derive_aabb(floor.components[i]).center()[axis];
  std::sort(order.begin(), order.end(), [&](std::uint32_t x, std::uint32_t y) {
    if (key[x] != key[y]) return key[x] < key[y];
    return floor.components[x].id < floor.components[y].id;
  });
  const std::size_t half = order.size() / 2;
  const std::span<const std::uint32_t> all(order);
  split_recursive(subset(floor, all.first(half)), max_nodes, radius, depth + 1, out, warnings);
  split_recursive(subset(floor, all.subspan(half)), max_nodes, radius, depth + 1, out, warnings);
}

}  // namespace

std::vector<FloorModel> partition_regions(std::span<const FloorModel> floors, std::size_t max_nodes, double radius,
                                          std::vector<std::string>* warnings) {
  if (max_nodes == 0) throw std::invalid_argument("partition_regions: max_nodes must be positive");
  std::vector<FloorModel> out;
  for (const auto& floor : floors) {
    std::vector<FloorModel> parts;
    split_recursive(floor, max_nodes, radius, 0, parts, warnings);
    if (parts.size() == 1) {
      out.push_back(std::move(parts[0]));
      continue;
    }
    for (std::size_t k = 0; k < parts.size(); ++k) {
      auto& part = parts[k];
      part.level_id = floor.level_id + "/r" + std::to_string(k);
      for (auto& c : part.components) c.level_id = part.level_id;
      out.push_back(std::move(part));
    }
  }
  return out;
}

}  // namespace bignet
