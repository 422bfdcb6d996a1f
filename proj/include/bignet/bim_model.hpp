#pragma once

#include <array>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace bignet {

using Vec3 = Eigen::Vector3d;

/// Raised when a BIM-lite document does not follow the schema.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a structurally valid document violates a model invariant
/// (duplicate ids, dangling relations, bad geometry).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ShapeClass { cuboid, cylinder, irregular };
enum class StructuralPurpose { structural, non_structural };
enum class RelationKind { connection, touch_floor, host };

struct Aabb {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Zero();

  bool contains(const Vec3& p) const {
    return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
  }
  Vec3 center() const { return 0.5 * (min + max); }
  bool operator==(const Aabb&) const = default;
};

/// Placement geometry: an insertion point (columns, fittings) or a
/// positioning line (walls, beams, ducts). Coordinates in metres.
struct Positioning {
  enum class Kind { point, line };

  Kind kind = Kind::point;
  Vec3 p0 = Vec3::Zero();
  Vec3 p1 = Vec3::Zero();  // line end; unused for points

  static Positioning point(const Vec3& p) { return {Kind::point, p, Vec3::Zero()}; }
  static Positioning line(const Vec3& a, const Vec3& b) { return {Kind::line, a, b}; }

  bool is_line() const { return kind == Kind::line; }
  bool operator==(const Positioning&) const = default;
};

struct BimComponent {
  std::string id;
  std::string category;
  std::string family_name;
  std::string family_symbol_name;
  ShapeClass shape = ShapeClass::cuboid;
  std::array<double, 3> dims_mm{};  // length, width, height
  StructuralPurpose purpose = StructuralPurpose::non_structural;
  Positioning positioning;
  std::array<double, 2> offsets_mm{};  // bottom, top
  std::string level_id;
  std::optional<Aabb> aabb;

  bool operator==(const BimComponent&) const = default;
};

struct DeclaredRelation {
  RelationKind kind = RelationKind::connection;
  std::string a_id;
  std::string b_id;

  bool operator==(const DeclaredRelation&) const = default;
};

struct FloorModel {
  std::string level_id;
  std::vector<BimComponent> components;
  std::vector<DeclaredRelation> relations;

  bool operator==(const FloorModel&) const = default;
};

std::string_view to_string(ShapeClass s);
std::string_view to_string(StructuralPurpose p);
std::string_view to_string(RelationKind k);

ShapeClass shape_class_from_string(std::string_view s);
StructuralPurpose structural_purpose_from_string(std::string_view s);
RelationKind relation_kind_from_string(std::string_view s);

/// Parses a BIM-lite JSON document ("bimlite_version": "1") into one
/// FloorModel per level. Every floor is validated before returning.
/// Unknown fields are skipped and reported through `warnings` when given.
std::vector<FloorModel> parse_model(std::string_view document,
                                    std::vector<std::string>* warnings = nullptr);

std::string serialize_model(std::span<const FloorModel> floors, int indent = 1);

/// Throws ValidationError on the first violated invariant.
void validate_component(const BimComponent& c);
void validate_floor(const FloorModel& floor);

/// Bounding box of a component: the declared one when present, otherwise
/// derived from the positioning geometry and dims.
Aabb derive_aabb(const BimComponent& c);

/// Unordered key used for relation lookups ("a|b" with a < b).
std::string pair_key(std::string_view a, std::string_view b);

}  // namespace bignet
