#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "bignet/bim_model.hpp"
#include "bignet/features.hpp"

namespace bignet {

enum class NodeType : std::uint8_t { semantic = 0, topological = 1, spatial = 2 };
inline constexpr int kNodeTypeCount = 3;

enum class NodeLabel : std::uint8_t {
  correct = 0,
  semantic_conflict = 1,
  data_range_error = 2,
  topological_error = 3,
  unlabeled = 255,
};
inline constexpr int kClassCount = 4;

enum class GraphMode : std::uint8_t { homogeneous = 0, heterogeneous = 1 };

std::string_view to_string(NodeType t);
std::string_view to_string(NodeLabel l);
std::string_view to_string(GraphMode m);
GraphMode graph_mode_from_string(std::string_view s);
NodeLabel node_label_from_string(std::string_view s);

/// Feature width of a node of type `t` in a graph of mode `m`.
int feature_width(GraphMode m, NodeType t);

struct GraphNode {
  NodeType type = NodeType::semantic;
  NodeLabel label = NodeLabel::correct;
  std::string source_a;  // component id
  std::string source_b;  // second component id for relation nodes, empty otherwise
};

struct GraphMeta {
  std::string floor_id;
  double spatial_radius_m = 0.0;
  std::string region_id;
};

/// Bipartite component/relation graph of one floor (or region). Edges are
/// stored once as {semantic node, relation node}; message passing uses both
/// directions.
struct BimGraph {
  GraphMode mode = GraphMode::homogeneous;
  GraphMeta meta;
  std::vector<GraphNode> nodes;
  std::vector<float> features;          // rows concatenated in node order
  std::vector<std::uint64_t> offsets;   // nodes.size() + 1 entries into `features`
  std::vector<std::array<std::uint32_t, 2>> edges;

  std::size_t node_count() const { return nodes.size(); }
  std::size_t edge_count() const { return edges.size(); }
  std::span<const float> feature(std::size_t node) const {
    return {features.data() + offsets[node], features.data() + offsets[node + 1]};
  }
  /// Recomputes `offsets` from node types and mode.
  void rebuild_offsets();
  std::array<std::size_t, kNodeTypeCount> count_by_type() const;
};

/// Labels keyed by node source: a component id for semantic nodes, or
/// pair_key(a, b) for relation nodes.
using LabelMap = std::unordered_map<std::string, NodeLabel>;

/// Builds the attributed graph of one floor: one semantic node per component,
/// one topological node per declared relation, one spatial node per discovered
/// pair without a declared relation, then per-floor column normalisation.
/// Node ids follow sorted component ids, so the result does not depend on the
/// order of components in the input.
BimGraph build_graph(const FloorModel& floor, double radius, GraphMode mode, const TextEmbedder& embedder,
                     const LabelMap* labels = nullptr);

/// Throws std::logic_error describing the first violated structural invariant
/// (bipartite edges, relation degree 2, unique relation per pair, widths).
void check_graph_invariants(const BimGraph& g);

/// Splits floors whose projected node count exceeds `max_nodes` by recursive
/// median cuts of component centroids (x, then y, alternating). Relations
/// crossing a cut are dropped. Floors within budget are returned unchanged.
std::vector<FloorModel> partition_regions(std::span<const FloorModel> floors, std::size_t max_nodes,
                                          double radius, std::vector<std::string>* warnings = nullptr);

/// components + declared relations + spatial pairs for `floor`.
std::size_t projected_node_count(const FloorModel& floor, double radius);

class GraphIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kGraphFormatVersion = 1;

void save_graph(const BimGraph& g, const std::filesystem::path& path);
BimGraph load_graph(const std::filesystem::path& path);

enum class Split : std::uint8_t { pretrain, transfer_train, transfer_val, transfer_test };
std::string_view to_string(Split s);
Split split_from_string(std::string_view s);

struct GraphDataset {
  std::vector<BimGraph> graphs;
  std::vector<Split> splits;  // one per graph

  std::vector<std::size_t> indices(Split s) const;
};

struct DatasetStats {
  std::size_t graphs = 0;
  std::size_t nodes = 0;
  std::size_t edges = 0;
  std::array<std::size_t, kNodeTypeCount> nodes_by_type{};
};
DatasetStats dataset_stats(const GraphDataset& d);

/// Manifest JSON: {"version":1, "graphs":[{"path", "split", "floor_id",
/// "region_id", "nodes", "edges", "nodes_by_type"}], "stats":{...}}.
/// Paths are stored relative to the manifest's directory.
void write_manifest(const std::filesystem::path& manifest, std::span<const std::filesystem::path> graph_paths,
                    const GraphDataset& dataset);
GraphDataset load_dataset(const std::filesystem::path& manifest);
/// Graph paths listed in a manifest, resolved against its directory.
std::vector<std::filesystem::path> manifest_graph_paths(const std::filesystem::path& manifest);

}  // namespace bignet
