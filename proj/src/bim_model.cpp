#include "bignet/bim_model.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"

namespace bignet {

using json = nlohmann::json;

namespace {

constexpr std::string_view kVersion = "1";

const std::set<std::string, std::less<>> kComponentFields = {
    "id",         "category",   "family_name", "family_symbol_name", "shape_class",
    "dims",       "structural_purpose",        "positioning",        "offsets",
    "level_id",   "aabb"};
const std::set<std::string, std::less<>> kRelationFields = {"kind", "a_id", "b_id"};
const std::set<std::string, std::less<>> kFloorFields = {"level_id", "components", "relations"};

std::string where(std::string_view field, std::string_view component_id) {
  std::string s = "field '";
  s += field;
  s += "'";
  if (!component_id.empty()) {
    s += " of component '";
    s += component_id;
    s += "'";
  }
  return s;
}

[[noreturn]] void fail(std::string_view field, std::string_view id, std::string_view what) {
  throw ParseError(where(field, id) + ": " + std::string(what));
}

const json& require(const json& obj, std::string_view field, std::string_view id) {
  auto it = obj.find(field);
  if (it == obj.end()) fail(field, id, "missing");
  return *it;
}

std::string require_string(const json& obj, std::string_view field, std::string_view id) {
  const json& v = require(obj, field, id);
  if (!v.is_string()) fail(field, id, "expected string");
  return v.get<std::string>();
}

template <std::size_t N>
std::array<double, N> require_numbers(const json& v, std::string_view field, std::string_view id) {
  if (!v.is_array() || v.size() != N) fail(field, id, "expected array of " + std::to_string(N) + " numbers");
  std::array<double, N> out{};
  for (std::size_t i = 0; i < N; ++i) {
    if (!v[i].is_number()) fail(field, id, "expected number at index " + std::to_string(i));
    out[i] = v[i].get<double>();
  }
  return out;
}

Vec3 to_vec(const std::array<double, 3>& a) { return {a[0], a[1], a[2]}; }
json from_vec(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

void warn_unknown(const json& obj, const std::set<std::string, std::less<>>& known,
                  std::string_view context, std::vector<std::string>* warnings) {
  if (warnings == nullptr) return;
  for (const auto& [key, _] : obj.items()) {
    if (!known.contains(key)) warnings->push_back("ignored unknown field '" + key + "' in " + std::string(context));
  }
}

BimComponent parse_component(const json& obj, const std::string& floor_level,
                             std::vector<std::string>* warnings) {
  if (!obj.is_object()) throw ParseError("component entry is not an object");
  BimComponent c;
  c.id = require_string(obj, "id", "");
  const std::string& id = c.id;
  warn_unknown(obj, kComponentFields, "component '" + id + "'", warnings);

  c.category = require_string(obj, "category", id);
  c.family_name = require_string(obj, "family_name", id);
  c.family_symbol_name = require_string(obj, "family_symbol_name", id);
  try {
    c.shape = shape_class_from_string(require_string(obj, "shape_class", id));
  } catch (const std::invalid_argument& e) {
    fail("shape_class", id, e.what());
  }
  try {
    c.purpose = structural_purpose_from_string(require_string(obj, "structural_purpose", id));
  } catch (const std::invalid_argument& e) {
    fail("structural_purpose", id, e.what());
  }
  c.dims_mm = require_numbers<3>(require(obj, "dims", id), "dims", id);
  c.offsets_mm = obj.contains("offsets") ? require_numbers<2>(obj.at("offsets"), "offsets", id)
                                         : std::array<double, 2>{0.0, 0.0};
  c.level_id = obj.contains("level_id") ? require_string(obj, "level_id", id) : floor_level;

  const json& pos = require(obj, "positioning", id);
  if (!pos.is_object()) fail("positioning", id, "expected object");
  const std::string kind = require_string(pos, "kind", id);
  if (kind == "point") {
    c.positioning = Positioning::point(to_vec(require_numbers<3>(require(pos, "p", id), "positioning.p", id)));
  } else if (kind == "line") {
    c.positioning = Positioning::line(to_vec(require_numbers<3>(require(pos, "p0", id), "positioning.p0", id)),
                                      to_vec(require_numbers<3>(require(pos, "p1", id), "positioning.p1", id)));
  } else {
    fail("positioning.kind", id, "expected 'point' or 'line', got '" + kind + "'");
  }

  if (auto it = obj.find("aabb"); it != obj.end() && !it->is_null()) {
    if (!it->is_object()) fail("aabb", id, "expected object");
    Aabb box;
    box.min = to_vec(require_numbers<3>(require(*it, "min", id), "aabb.min", id));
    box.max = to_vec(require_numbers<3>(require(*it, "max", id), "aabb.max", id));
    c.aabb = box;
  }
  return c;
}

DeclaredRelation parse_relation(const json& obj, std::vector<std::string>* warnings) {
  if (!obj.is_object()) throw ParseError("relation entry is not an object");
  DeclaredRelation r;
  r.a_id = require_string(obj, "a_id", "");
  r.b_id = require_string(obj, "b_id", "");
  warn_unknown(obj, kRelationFields, "relation " + r.a_id + "-" + r.b_id, warnings);
  try {
    r.kind = relation_kind_from_string(require_string(obj, "kind", ""));
  } catch (const std::invalid_argument& e) {
    throw ParseError("field 'kind' of relation " + r.a_id + "-" + r.b_id + ": " + e.what());
  }
  return r;
}

json component_to_json(const BimComponent& c) {
  json pos;
  pos["kind"] = c.positioning.is_line() ? "line" : "point";
  if (c.positioning.is_line()) {
    pos["p0"] = from_vec(c.positioning.p0);
    pos["p1"] = from_vec(c.positioning.p1);
  } else {
    pos["p"] = from_vec(c.positioning.p0);
  }
  json obj = {{"id", c.id},
              {"category", c.category},
              {"family_name", c.family_name},
              {"family_symbol_name", c.family_symbol_name},
              {"shape_class", to_string(c.shape)},
              {"dims", c.dims_mm},
              {"structural_purpose", to_string(c.purpose)},
              {"positioning", pos},
              {"offsets", c.offsets_mm},
              {"level_id", c.level_id}};
  if (c.aabb) obj["aabb"] = {{"min", from_vec(c.aabb->min)}, {"max", from_vec(c.aabb->max)}};
  return obj;
}

}  // namespace

std::string_view to_string(ShapeClass s) {
  switch (s) {
    case ShapeClass::cuboid: return "cuboid";
    case ShapeClass::cylinder: return "cylinder";
    case ShapeClass::irregular: return "irregular";
  }
  throw std::invalid_argument("unknown shape class");
}

std::string_view to_string(StructuralPurpose p) {
  switch (p) {
    case StructuralPurpose::structural: return "structural";
    case StructuralPurpose::non_structural: return "non_structural";
  }
  throw std::invalid_argument("unknown structural purpose");
}

std::string_view to_string(RelationKind k) {
  switch (k) {
    case RelationKind::connection: return "connection";
    case RelationKind::touch_floor: return "touch_floor";
    case RelationKind::host: return "host";
  }
  throw std::invalid_argument("unknown relation kind");
}

ShapeClass shape_class_from_string(std::string_view s) {
  if (s == "cuboid") return ShapeClass::cuboid;
  if (s == "cylinder") return ShapeClass::cylinder;
  if (s == "irregular") return ShapeClass::irregular;
  throw std::invalid_argument("unknown shape class '" + std::string(s) + "'");
}

StructuralPurpose structural_purpose_from_string(std::string_view s) {
  if (s == "structural") return StructuralPurpose::structural;
  if (s == "non_structural") return StructuralPurpose::non_structural;
  throw std::invalid_argument("unknown structural purpose '" + std::string(s) + "'");
}

RelationKind relation_kind_from_string(std::string_view s) {
  if (s == "connection") return RelationKind::connection;
  if (s == "touch_floor") return RelationKind::touch_floor;
  if (s == "host") return RelationKind::host;
  throw std::invalid_argument("unknown relation kind '" + std::string(s) + "'");
}

std::string pair_key(std::string_view a, std::string_view b) {
  if (b < a) std::swap(a, b);
  std::string key;
  key.reserve(a.size() + b.size() + 1);
  key.append(a).append("|").append(b);
  return key;
}

void validate_component(const BimComponent& c) {
  const std::string ctx = "component '" + c.id + "': ";
  if (c.id.empty()) throw ValidationError("component with empty id");
  for (double d : c.dims_mm) {
    if (!std::isfinite(d) || d < 0.0) throw ValidationError(ctx + "dims must be finite and non-negative");
  }
  if (c.shape == ShapeClass::cylinder && c.dims_mm[1] != c.dims_mm[2]) {
    throw ValidationError(ctx + "cylinder requires width == height (cross-section radius)");
  }
  for (double o : c.offsets_mm) {
    if (!std::isfinite(o)) throw ValidationError(ctx + "offsets must be finite");
  }
  if (!c.positioning.p0.allFinite() || !c.positioning.p1.allFinite()) {
    throw ValidationError(ctx + "positioning coordinates must be finite");
  }
  if (c.positioning.is_line() && c.positioning.p0 == c.positioning.p1) {
    throw ValidationError(ctx + "line positioning requires p0 != p1");
  }
  if (c.aabb) {
    if (!c.aabb->min.allFinite() || !c.aabb->max.allFinite() ||
        (c.aabb->min.array() > c.aabb->max.array()).any()) {
      throw ValidationError(ctx + "aabb min corner must be <= max corner");
    }
  }
}

void validate_floor(const FloorModel& floor) {
  std::unordered_set<std::string_view> ids;
  ids.reserve(floor.components.size());
  for (const auto& c : floor.components) {
    validate_component(c);
    if (c.level_id != floor.level_id) {
      throw ValidationError("component '" + c.id + "' has level_id '" + c.level_id +
                            "' but sits on floor '" + floor.level_id + "'");
    }
    if (!ids.insert(c.id).second) {
      throw ValidationError("duplicate component id '" + c.id + "' on floor '" + floor.level_id + "'");
    }
  }
  std::vector<std::string> missing;
  std::unordered_set<std::string> pairs;
  for (const auto& r : floor.relations) {
    if (r.a_id == r.b_id) throw ValidationError("relation links component '" + r.a_id + "' to itself");
    bool dangling = false;
    for (const auto* end : {&r.a_id, &r.b_id}) {
      if (!ids.contains(*end)) {
        dangling = true;
        if (std::find(missing.begin(), missing.end(), *end) == missing.end()) missing.push_back(*end);
      }
    }
    if (!dangling && !pairs.insert(pair_key(r.a_id, r.b_id)).second) {
      throw ValidationError("more than one declared relation between '" + r.a_id + "' and '" + r.b_id + "'");
    }
  }
  if (!missing.empty()) {
    std::string msg = "relations on floor '" + floor.level_id + "' reference missing component ids:";
    for (const auto& m : missing) msg += " " + m;
    throw ValidationError(msg);
  }
}

std::vector<FloorModel> parse_model(std::string_view document, std::vector<std::string>* warnings) {
  json doc;
  try {
    doc = json::parse(document);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ParseError("document root must be an object");
  const json& version = require(doc, "bimlite_version", "");
  if (!version.is_string() || version.get<std::string>() != kVersion) {
    throw ParseError("field 'bimlite_version': expected \"1\"");
  }
  const json& floors_json = require(doc, "floors", "");
  if (!floors_json.is_array()) fail("floors", "", "expected array");
  if (warnings) {
    for (const auto& [key, _] : doc.items()) {
      if (key != "bimlite_version" && key != "floors") warnings->push_back("ignored unknown top-level field '" + key + "'");
    }
  }

  std::vector<FloorModel> floors;
  floors.reserve(floors_json.size());
  for (const auto& f : floors_json) {
    if (!f.is_object()) throw ParseError("floor entry is not an object");
    FloorModel floor;
    floor.level_id = require_string(f, "level_id", "");
    warn_unknown(f, kFloorFields, "floor '" + floor.level_id + "'", warnings);
    if (auto it = f.find("components"); it != f.end()) {
      if (!it->is_array()) throw ParseError("field 'components' of floor '" + floor.level_id + "': expected array");
      floor.components.reserve(it->size());
      for (const auto& c : *it) floor.components.push_back(parse_component(c, floor.level_id, warnings));
    }
    if (auto it = f.find("relations"); it != f.end()) {
      if (!it->is_array()) throw ParseError("field 'relations' of floor '" + floor.level_id + "': expected array");
      floor.relations.reserve(it->size());
      for (const auto& r : *it) floor.relations.push_back(parse_relation(r, warnings));
    }
    validate_floor(floor);
    floors.push_back(std::move(floor));
  }
  return floors;
}

std::string serialize_model(std::span<const FloorModel> floors, int indent) {
  json doc;
  doc["bimlite_version"] = kVersion;
  doc["floors"] = json::array();
  for (const auto& floor : floors) {
    json f;
    f["level_id"] = floor.level_id;
    f["components"] = json::array();
    for (const auto& c : floor.components) f["components"].push_back(component_to_json(c));
    f["relations"] = json::array();
    for (const auto& r : floor.relations) {
      f["relations"].push_back({{"kind", to_string(r.kind)}, {"a_id", r.a_id}, {"b_id", r.b_id}});
    }
    doc["floors"].push_back(std::move(f));
  }
  return doc.dump(indent);
}

Aabb derive_aabb(const BimComponent& c) {
  if (c.aabb) return *c.aabb;
  const Vec3 half = Vec3(c.dims_mm[0], c.dims_mm[1], c.dims_mm[2]) * (0.5 / 1000.0);
  const auto& pos = c.positioning;
  if (!pos.is_line()) return {pos.p0 - half, pos.p0 + half};

  // Rectangle of width dims[1] (horizontal) by dims[2] (vertical) swept along the line.
  const Vec3 dir = (pos.p1 - pos.p0).normalized();
  Vec3 across = dir.cross(Vec3::UnitZ());
  if (across.norm() < 1e-12) across = Vec3::UnitX();  // vertical line
  across.normalize();
  const Vec3 up = across.cross(dir).normalized();
  const Vec3 extent = (across * half.y()).cwiseAbs() + (up * half.z()).cwiseAbs();
  return {pos.p0.cwiseMin(pos.p1) - extent, pos.p0.cwiseMax(pos.p1) + extent};
}

}  // namespace bignet
