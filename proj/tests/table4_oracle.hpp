#pragma once

#include <algorithm>
#include <set>
#include <string>
#include <tuple>

#include "bignet/graph.hpp"
#include "bignet/spatial.hpp"

namespace bignet::testing {

/// Node identity independent of numbering: (type, first source, second source).
using NodeKey = std::tuple<int, std::string, std::string>;
using EdgeKey = std::pair<NodeKey, NodeKey>;

struct GraphSets {
  std::set<NodeKey> nodes;
  std::set<EdgeKey> edges;
};

inline NodeKey relation_key(int type, const std::string& a, const std::string& b) {
  return {type, std::min(a, b), std::max(a, b)};
}

/// Straight transcription of the construction loop: components, then declared
/// relations, then every all-pairs spatial candidate without a topological node.
inline GraphSets table4_oracle(const FloorModel& floor, double radius) {
  GraphSets out;
  for (const auto& c : floor.components) out.nodes.insert({0, c.id, ""});
  std::set<std::pair<std::string, std::string>> topo;
  for (const auto& r : floor.relations) {
    const auto key = relation_key(1, r.a_id, r.b_id);
    out.nodes.insert(key);
    out.edges.insert({{0, r.a_id, ""}, key});
    out.edges.insert({{0, r.b_id, ""}, key});
    topo.insert({std::min(r.a_id, r.b_id), std::max(r.a_id, r.b_id)});
  }
  for (std::size_t i = 0; i < floor.components.size(); ++i)
    for (std::size_t k = i + 1; k < floor.components.size(); ++k) {
      const auto& a = floor.components[i];
      const auto& b = floor.components[k];
      if (aabb_signed_distance(derive_aabb(a), derive_aabb(b)) > radius) continue;
      if (topo.contains({std::min(a.id, b.id), std::max(a.id, b.id)})) continue;
      const auto key = relation_key(2, a.id, b.id);
      out.nodes.insert(key);
      out.edges.insert({{0, a.id, ""}, key});
      out.edges.insert({{0, b.id, ""}, key});
    }
  return out;
}

inline GraphSets graph_sets(const BimGraph& g) {
  GraphSets out;
  auto key = [&](std::uint32_t i) {
    const auto& n = g.nodes[i];
    if (n.type == NodeType::semantic) return NodeKey{0, n.source_a, ""};
    return relation_key(static_cast<int>(n.type), n.source_a, n.source_b);
  };
  for (std::uint32_t i = 0; i < g.nodes.size(); ++i) out.nodes.insert(key(i));
  for (const auto& e : g.edges) out.edges.insert({key(e[0]), key(e[1])});
  return out;
}

}  // namespace bignet::testing
