#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "bignet/graph.hpp"
#include "bignet/nn.hpp"

namespace bignet::nn {

// ---------------------------------------------------------------- graphs

/// Directed arc family: messages from nodes of `src_type` to `dst_type`.
struct ArcType {
  int src_type = 0;
  int dst_type = 0;
  std::string name;
};

/// Arc families of a mode. The first `type_count` entries are the self
/// families t->t; in homogeneous mode there is one family holding self loops
/// and both directions of every edge.
const std::vector<ArcType>& arc_types(GraphMode mode);
int type_count(GraphMode mode);
/// Input feature width of each node type block.
std::vector<int> type_widths(GraphMode mode);

/// Graph (or disjoint union of graphs) laid out for message passing: node
/// features split into per-type blocks and arcs grouped by family, with
/// local (per-type) node indices.
struct ModelGraph {
  GraphMode mode = GraphMode::homogeneous;
  std::vector<Mat> features;                // per type block
  std::vector<Index> global_index;          // per type: node id in the concatenated source graphs
  std::vector<std::vector<int>> labels;     // per type: class id, -1 when unlabelled
  std::vector<Index> arc_src, arc_dst;      // per arc family
  std::size_t total_nodes = 0;

  int types() const { return static_cast<int>(features.size()); }
  std::size_t count(int type) const { return static_cast<std::size_t>(features[static_cast<std::size_t>(type)].rows()); }
};

/// Disjoint union of `graphs`. Self arcs are added when `self_loops` is set.
ModelGraph to_model_graph(std::span<const BimGraph* const> graphs, bool self_loops = true);
ModelGraph to_model_graph(const BimGraph& g, bool self_loops = true);

/// Rejects arcs whose family, endpoint types or indices do not fit the mode.
void validate_model_graph(const ModelGraph& g);

/// Stitches per-type row blocks back into node order.
Mat gather_global(const ModelGraph& g, std::span<const Var> per_type);

// ------------------------------------------------------------ parameters

class ParameterStore {
 public:
  Var add(const std::string& name, Mat init);
  Var get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.contains(name); }
  const std::vector<std::pair<std::string, Var>>& items() const { return items_; }
  std::vector<Var> vars() const;
  std::vector<Var> vars_with_prefix(const std::string& prefix) const;
  void zero_grad();
  std::size_t scalar_count() const;
  /// Copies values from another store with identical names and shapes.
  void copy_from(const ParameterStore& other);

 private:
  std::vector<std::pair<std::string, Var>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

Mat glorot(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng);

enum class Activation { identity, prelu, relu };
std::string_view to_string(Activation a);
Activation activation_from_string(std::string_view s);

// ----------------------------------------------------------------- layers

struct GatConfig {
  int layers = 2;
  int hidden_dim = 512;
  int heads_hidden = 4;
  int heads_out = 1;
  double negative_slope = 0.2;
  Activation activation = Activation::prelu;
  bool self_loops = true;
};

struct GatLayerSpec {
  std::vector<int> in_width;      // per node type
  std::vector<int> out_per_head;  // per node type
  int heads = 1;
  bool concat = true;  // concatenate heads, else average
  Activation activation = Activation::prelu;
  double negative_slope = 0.2;
  bool self_loops = true;
};

/// Relation-typed attention layer. Every arc family r has its own W_r and
/// attention vectors; destination scores use the destination's self-family
/// projection, and each destination softmaxes jointly over all incoming arcs.
class TypedGatLayer {
 public:
  TypedGatLayer(ParameterStore& store, const std::string& prefix, GraphMode mode, GatLayerSpec spec,
                std::mt19937_64& rng);

  std::vector<Var> forward(std::span<const Var> x, const ModelGraph& g, std::vector<std::vector<Mat>>* alpha = nullptr) const;
  int out_width(int type) const;
  const GatLayerSpec& spec() const { return spec_; }

  struct FamilyParams {
    Var w, a_src, a_dst;
  };
  const std::vector<FamilyParams>& families() const { return fam_; }

 private:
  GraphMode mode_;
  GatLayerSpec spec_;
  std::vector<FamilyParams> fam_;
  std::vector<Var> bias_;  // per destination type
  Var slope_;
};

/// Stack of typed attention layers: hidden layers concatenate
/// `heads_hidden` heads of width hidden_dim / heads_hidden, the last layer
/// averages `heads_out` heads of the requested output width.
class TypedGat {
 public:
  TypedGat(ParameterStore& store, const std::string& prefix, GraphMode mode, std::vector<int> in_width,
           std::vector<int> out_width, const GatConfig& config, bool activate_output, std::mt19937_64& rng);

  std::vector<Var> forward(std::span<const Var> x, const ModelGraph& g) const;
  const std::vector<TypedGatLayer>& layers() const { return layers_; }

 private:
  std::vector<TypedGatLayer> layers_;
};

/// Perceptron with an optional per-type first layer. dims = {hidden..., out}.
class Mlp {
 public:
  Mlp(ParameterStore& store, const std::string& prefix, std::vector<int> in_width, std::vector<int> dims,
      Activation hidden_activation, std::mt19937_64& rng);

  Var forward(const Var& x, int type = 0) const;
  std::vector<Var> forward(std::span<const Var> x) const;

  struct Layer {
    std::vector<Var> w;  // one per type for the first layer, else one
    Var b;
    Var slope;
  };
  const std::vector<Layer>& layers() const { return layers_; }

 private:
  std::vector<int> in_width_;
  Activation act_;
  std::vector<Layer> layers_;
};

// -------------------------------------------------------------- optimizer

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

class Adam {
 public:
  Adam(std::vector<Var> params, AdamConfig config = {});
  /// One update from the accumulated gradients; parameters without a
  /// gradient this step are left untouched.
  void step(double lr);
  std::int64_t steps() const { return t_; }

 private:
  std::vector<Var> params_;
  AdamConfig cfg_;
  std::vector<Mat> m_, v_;
  std::int64_t t_ = 0;
};

/// Cosine decay from lr0 at epoch 0 to 0 at `total` epochs.
double cosine_lr(double lr0, int epoch, int total);

// ------------------------------------------------------------- checkpoint

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Archive {
  std::string config_json = "{}";  // echo of the producing configuration
  std::vector<std::pair<std::string, Mat>> tensors;
};

/// "BNCKPT01", u32 version, u64 header length, JSON header (config, tensor
/// names/shapes/offsets), f64 tensor data, crc32. Written via rename.
void save_archive(const std::filesystem::path& path, const Archive& archive);
Archive load_archive(const std::filesystem::path& path);

Archive snapshot(const ParameterStore& store, std::string config_json);
/// Loads tensors into a store; every store parameter must be present with the
/// same shape.
void restore(ParameterStore& store, const Archive& archive);

}  // namespace bignet::nn
