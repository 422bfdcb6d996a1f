#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "bignet/bim_model.hpp"
#include "bignet/spatial.hpp"

namespace bignet {

inline constexpr int kTextEmbeddingDim = 64;
inline constexpr int kSemanticWidth = 144;
inline constexpr int kTopologicalWidth = 3;
inline constexpr int kSpatialWidth = 11;
inline constexpr int kHomogeneousWidth = kSemanticWidth + kTopologicalWidth + kSpatialWidth;

/// Column offsets of the semantic block.
namespace semantic_cols {
inline constexpr int shape = 0;        // one-hot 3
inline constexpr int dims = 3;         // mm, 3
inline constexpr int purpose = 6;      // one-hot 2
inline constexpr int family = 8;       // text embedding
inline constexpr int symbol = 72;      // text embedding
inline constexpr int positioning = 136;  // m, 6 (points fill the first 3)
inline constexpr int offsets = 142;    // mm, 2
}  // namespace semantic_cols

/// Column offsets of the spatial block.
namespace spatial_cols {
inline constexpr int category = 0;  // one-hot 5
inline constexpr int angle = 5;
inline constexpr int sdv = 6;  // 3
inline constexpr int signed_distance = 9;
inline constexpr int horizontal_angle = 10;
}  // namespace spatial_cols

/// Block offsets inside the 158-wide homogeneous layout.
inline constexpr int kHomogeneousTopologicalOffset = kSemanticWidth;
inline constexpr int kHomogeneousSpatialOffset = kSemanticWidth + kTopologicalWidth;

class EncodingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class FeatureLayout : std::uint8_t { semantic144, topological3, spatial11, homogeneous158 };

int layout_width(FeatureLayout layout);

struct FeatureVector {
  FeatureLayout layout = FeatureLayout::semantic144;
  std::vector<double> values;
};

/// Maps a family or type name to a fixed 64-wide vector. Implementations
/// must be deterministic and return a unit vector, or zeros for "".
class TextEmbedder {
 public:
  virtual ~TextEmbedder() = default;
  virtual std::vector<double> embed(std::string_view text) const = 0;
  int dim() const { return kTextEmbeddingDim; }
};

/// Signed character-trigram feature hashing into 64 buckets, L2-normalised.
std::vector<double> hash_embed(std::string_view text);

class HashingEmbedder final : public TextEmbedder {
 public:
  std::vector<double> embed(std::string_view text) const override { return hash_embed(text); }
};

/// Precomputed embeddings loaded from a JSON object {text: [64 floats]}.
/// Strings absent from the table embed to zeros (treated as missing values).
class TableEmbedder final : public TextEmbedder {
 public:
  static TableEmbedder from_json(std::string_view document);
  static TableEmbedder from_file(const std::filesystem::path& path);

  std::vector<double> embed(std::string_view text) const override;
  std::size_t size() const { return table_.size(); }

 private:
  std::unordered_map<std::string, std::vector<double>> table_;
};

FeatureVector encode_node_features(const BimComponent& component, const TextEmbedder& embedder);
FeatureVector encode_node_features(RelationKind relation);
FeatureVector encode_node_features(const SpatialDescriptor& descriptor);

/// Places a typed feature block into the shared 158-wide layout, zero elsewhere.
FeatureVector to_homogeneous_feature(const FeatureVector& v);

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Divides every column by max(|max|, |min|) of that column, in place.
/// All-zero columns are left as they are. Throws EncodingError on non-finite
/// input, naming the node (row, or `row_names[row]` when given) and column.
void normalize_floor(Eigen::Ref<RowMatrix> table, std::span<const std::string> row_names = {});

}  // namespace bignet
