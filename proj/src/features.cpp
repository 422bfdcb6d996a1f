#include "bignet/features.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace bignet {

namespace {

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

void put(std::vector<double>& dst, int offset, std::span<const double> src) {
  std::copy(src.begin(), src.end(), dst.begin() + offset);
}

}  // namespace

int layout_width(FeatureLayout layout) {
  switch (layout) {
    case FeatureLayout::semantic144: return kSemanticWidth;
    case FeatureLayout::topological3: return kTopologicalWidth;
    case FeatureLayout::spatial11: return kSpatialWidth;
    case FeatureLayout::homogeneous158: return kHomogeneousWidth;
  }
  throw EncodingError("unknown feature layout");
}

std::vector<double> hash_embed(std::string_view text) {
  std::vector<double> v(kTextEmbeddingDim, 0.0);
  if (text.empty()) return v;

  std::string padded;
  padded.reserve(text.size() + 2);
  padded.push_back('^');
  for (unsigned char ch : text) padded.push_back(static_cast<char>(std::tolower(ch)));
  padded.push_back('$');

  std::uint64_t first = 0;
  for (std::size_t i = 0; i + 3 <= padded.size(); ++i) {
    const std::uint64_t h = fnv1a(std::string_view(padded).substr(i, 3));
    if (i == 0) first = h;
    v[h % kTextEmbeddingDim] += ((h >> 32) & 1u) ? -1.0 : 1.0;
  }
  double norm = 0.0;
  for (double x : v) norm += x * x;
  if (norm == 0.0) {
    // Every signed contribution cancelled; fall back to the leading trigram.
    v[first % kTextEmbeddingDim] = 1.0;
    return v;
  }
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

TableEmbedder TableEmbedder::from_json(std::string_view document) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(document);
  } catch (const nlohmann::json::parse_error& e) {
    throw EncodingError(std::string("embedding table: malformed JSON: ") + e.what());
  }
  if (!doc.is_object()) throw EncodingError("embedding table: root must be an object");
  TableEmbedder out;
  for (const auto& [key, value] : doc.items()) {
    if (!value.is_array() || value.size() != kTextEmbeddingDim) {
      throw EncodingError("embedding table: entry '" + key + "' must hold 64 numbers");
    }
    std::vector<double> vec;
    vec.reserve(kTextEmbeddingDim);
    for (const auto& x : value) {
      if (!x.is_number()) throw EncodingError("embedding table: entry '" + key + "' has a non-number");
      vec.push_back(x.get<double>());
    }
    out.table_.emplace(key, std::move(vec));
  }
  return out;
}

TableEmbedder TableEmbedder::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw EncodingError("embedding table: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

std::vector<double> TableEmbedder::embed(std::string_view text) const {
  auto it = table_.find(std::string(text));
  if (it == table_.end()) return std::vector<double>(kTextEmbeddingDim, 0.0);
  return it->second;
}

FeatureVector encode_node_features(const BimComponent& c, const TextEmbedder& embedder) {
  FeatureVector out{FeatureLayout::semantic144, std::vector<double>(kSemanticWidth, 0.0)};
  auto& v = out.values;

  switch (c.shape) {
    case ShapeClass::cuboid: v[semantic_cols::shape + 0] = 1.0; break;
    case ShapeClass::cylinder: v[semantic_cols::shape + 1] = 1.0; break;
    case ShapeClass::irregular: v[semantic_cols::shape + 2] = 1.0; break;
    default: throw EncodingError("component '" + c.id + "': unknown shape class");
  }
  put(v, semantic_cols::dims, c.dims_mm);
  switch (c.purpose) {
    case StructuralPurpose::structural: v[semantic_cols::purpose + 0] = 1.0; break;
    case StructuralPurpose::non_structural: v[semantic_cols::purpose + 1] = 1.0; break;
    default: throw EncodingError("component '" + c.id + "': unknown structural purpose");
  }

  const auto family = embedder.embed(c.family_name);
  const auto symbol = embedder.embed(c.family_symbol_name);
  if (family.size() != kTextEmbeddingDim || symbol.size() != kTextEmbeddingDim) {
    throw EncodingError("text embedder returned a vector of the wrong width");
  }
  put(v, semantic_cols::family, family);
  put(v, semantic_cols::symbol, symbol);

  const auto& pos = c.positioning;
  for (int k = 0; k < 3; ++k) v[semantic_cols::positioning + k] = pos.p0[k];
  if (pos.is_line()) {
    for (int k = 0; k < 3; ++k) v[semantic_cols::positioning + 3 + k] = pos.p1[k];
  }
  put(v, semantic_cols::offsets, c.offsets_mm);
  return out;
}

FeatureVector encode_node_features(RelationKind relation) {
  FeatureVector out{FeatureLayout::topological3, std::vector<double>(kTopologicalWidth, 0.0)};
  switch (relation) {
    case RelationKind::connection: out.values[0] = 1.0; break;
    case RelationKind::touch_floor: out.values[1] = 1.0; break;
    case RelationKind::host: out.values[2] = 1.0; break;
    default: throw EncodingError("unknown relation kind");
  }
  return out;
}

FeatureVector encode_node_features(const SpatialDescriptor& d) {
  FeatureVector out{FeatureLayout::spatial11, std::vector<double>(kSpatialWidth, 0.0)};
  const auto category = static_cast<int>(d.category);
  if (category < 0 || category >= kSpatialCategoryCount) throw EncodingError("unknown spatial category");
  auto& v = out.values;
  v[spatial_cols::category + category] = 1.0;
  v[spatial_cols::angle] = d.angle;
  for (int k = 0; k < 3; ++k) v[spatial_cols::sdv + k] = d.sdv[k];
  v[spatial_cols::signed_distance] = d.signed_distance;
  v[spatial_cols::horizontal_angle] = d.horizontal_angle;
  return out;
}

FeatureVector to_homogeneous_feature(const FeatureVector& v) {
  FeatureVector out{FeatureLayout::homogeneous158, std::vector<double>(kHomogeneousWidth, 0.0)};
  int offset = 0;
  switch (v.layout) {
    case FeatureLayout::semantic144: offset = 0; break;
    case FeatureLayout::topological3: offset = kHomogeneousTopologicalOffset; break;
    case FeatureLayout::spatial11: offset = kHomogeneousSpatialOffset; break;
    case FeatureLayout::homogeneous158: return v;
  }
  if (static_cast<int>(v.values.size()) != layout_width(v.layout)) {
    throw EncodingError("feature vector width does not match its layout");
  }
  put(out.values, offset, v.values);
  return out;
}

void normalize_floor(Eigen::Ref<RowMatrix> table, std::span<const std::string> row_names) {
  for (Eigen::Index col = 0; col < table.cols(); ++col) {
    double scale = 0.0;
    for (Eigen::Index row = 0; row < table.rows(); ++row) {
      const double x = table(row, col);
      if (!std::isfinite(x)) {
        const std::string node = row < static_cast<Eigen::Index>(row_names.size())
                                     ? row_names[row]
                                     : "#" + std::to_string(row);
        throw EncodingError("non-finite feature at node " + node + ", column " + std::to_string(col));
      }
      scale = std::max(scale, std::abs(x));
    }
    if (scale > 0.0) table.col(col) /= scale;
  }
}

}  // namespace bignet
