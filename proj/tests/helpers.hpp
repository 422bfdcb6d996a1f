#pragma once

#include <random>
#include <string>

#include "bignet/bim_model.hpp"

namespace bignet::testing {

inline BimComponent point_component(std::string id, const Vec3& p, std::array<double, 3> dims_mm = {500, 500, 500},
                                    std::string category = "column") {
  BimComponent c;
  c.id = std::move(id);
  c.category = std::move(category);
  c.family_name = "Concrete Column";
  c.family_symbol_name = "Column_500x500";
  c.shape = ShapeClass::cuboid;
  c.dims_mm = dims_mm;
  c.purpose = StructuralPurpose::structural;
  c.positioning = Positioning::point(p);
  c.level_id = "L1";
  return c;
}

inline BimComponent line_component(std::string id, const Vec3& p0, const Vec3& p1,
                                   std::array<double, 3> dims_mm = {1000, 200, 300}, std::string category = "wall") {
  BimComponent c;
  c.id = std::move(id);
  c.category = std::move(category);
  c.family_name = "Basic Wall";
  c.family_symbol_name = "Architectural Wall_200";
  c.shape = ShapeClass::cuboid;
  c.dims_mm = dims_mm;
  c.purpose = StructuralPurpose::non_structural;
  c.positioning = Positioning::line(p0, p1);
  c.level_id = "L1";
  return c;
}

/// Random floor of `n` components in an `extent`-metre cube region: a mix of
/// point and line positioned parts with derived boxes, plus a few declared
/// relations between near neighbours.
inline FloorModel random_floor(std::size_t n, std::uint64_t seed, double extent = 6.0, double relation_fraction = 0.1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> pos(0.0, extent);
  std::uniform_real_distribution<double> size(50.0, 600.0);
  std::uniform_real_distribution<double> len(0.2, 2.0);
  std::uniform_int_distribution<int> axis(0, 3);
  FloorModel f;
  f.level_id = "L1";
  for (std::size_t i = 0; i < n; ++i) {
    const std::string id = "C" + std::to_string(1000 + i);
    const Vec3 p(pos(rng), pos(rng), pos(rng) * 0.5);
    if (rng() % 2 == 0) {
      f.components.push_back(point_component(id, p, {size(rng), size(rng), size(rng)}));
    } else {
      Vec3 d = Vec3::Zero();
      const int a = axis(rng);
      if (a < 3) {
        d[a] = len(rng);
      } else {
        d = Vec3(len(rng), len(rng), 0.0);
      }
      const double w = size(rng);
      f.components.push_back(line_component(id, p, p + d, {d.norm() * 1000.0, w, rng() % 3 == 0 ? w : size(rng)}));
    }
  }
  const std::size_t n_rel = static_cast<std::size_t>(relation_fraction * static_cast<double>(n));
  for (std::size_t k = 0; k + 1 < n && k < n_rel; ++k) {
    f.relations.push_back({static_cast<RelationKind>(k % 3), f.components[2 * k % n].id,
                           f.components[(2 * k + 1) % n].id});
  }
  return f;
}

}  // namespace bignet::testing
