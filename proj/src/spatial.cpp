#include "bignet/spatial.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <tuple>
#include <unordered_map>
#include <unordered_set>

namespace bignet {

namespace {

// Boxes spanning more grid cells than this go on a list scanned against everyone.
constexpr std::int64_t kMaxCellsPerBox = 4096;

double angle_to_horizontal_of_direction(const Vec3& d) {
  return std::atan2(std::abs(d.z()), d.head<2>().norm());
}

double angle_to_horizontal_of_normal(const Vec3& n) {
  return std::atan2(n.head<2>().norm(), std::abs(n.z()));
}

double acute_angle(const Vec3& u, const Vec3& v) {
  return std::atan2(u.cross(v).norm(), std::abs(u.dot(v)));
}

Vec3 closest_on_segment(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double t = std::clamp((p - a).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
  return a + t * ab;
}

ClosestPoints make(const Vec3& pa, const Vec3& pb) { return {pa, pb, (pb - pa).norm()}; }

ClosestPoints segment_segment(const Vec3& p0, const Vec3& p1, const Vec3& q0, const Vec3& q1) {
  const Vec3 d1 = p1 - p0;
  const Vec3 d2 = q1 - q0;
  const Vec3 r = p0 - q0;
  const double a = d1.squaredNorm();
  const double e = d2.squaredNorm();
  const double f = d2.dot(r);

  if (acute_angle(d1, d2) < kParallelTolerance) {
    // Project the second segment onto the first and look for an overlap.
    const double s0 = (q0 - p0).dot(d1) / a;
    const double s1 = (q1 - p0).dot(d1) / a;
    const double lo = std::max(0.0, std::min(s0, s1));
    const double hi = std::min(1.0, std::max(s0, s1));
    if (lo <= hi) {
      const Vec3 pa = p0 + 0.5 * (lo + hi) * d1;
      return make(pa, closest_on_segment(pa, q0, q1));
    }
    ClosestPoints best = make(p0, closest_on_segment(p0, q0, q1));
    for (const ClosestPoints& c : {make(p1, closest_on_segment(p1, q0, q1)),
                                   make(closest_on_segment(q0, p0, p1), q0),
                                   make(closest_on_segment(q1, p0, p1), q1)}) {
      if (c.distance < best.distance) best = c;
    }
    return best;
  }

  const double b = d1.dot(d2);
  const double c = d1.dot(r);
  const double denom = a * e - b * b;
  double s = std::clamp((b * f - c * e) / denom, 0.0, 1.0);
  double t = (b * s + f) / e;
  if (t < 0.0) {
    t = 0.0;
    s = std::clamp(-c / a, 0.0, 1.0);
  } else if (t > 1.0) {
    t = 1.0;
    s = std::clamp((b - c) / a, 0.0, 1.0);
  }
  return make(p0 + s * d1, q0 + t * d2);
}

std::uint64_t ordered_pair(std::uint32_t i, std::uint32_t j) {
  if (j < i) std::swap(i, j);
  return (static_cast<std::uint64_t>(i) << 32) | j;
}

std::unordered_set<std::uint64_t> declared_pairs(const FloorModel& floor) {
  std::unordered_map<std::string_view, std::uint32_t> index;
  index.reserve(floor.components.size());
  for (std::uint32_t i = 0; i < floor.components.size(); ++i) index.emplace(floor.components[i].id, i);
  std::unordered_set<std::uint64_t> out;
  out.reserve(floor.relations.size() * 2);
  for (const auto& r : floor.relations) {
    auto a = index.find(r.a_id);
    auto b = index.find(r.b_id);
    if (a != index.end() && b != index.end()) out.insert(ordered_pair(a->second, b->second));
  }
  return out;
}

std::uint64_t pack(std::int64_t x, std::int64_t y, std::int64_t z) {
  constexpr std::int64_t kBias = 1 << 20;
  constexpr std::uint64_t kMask = (1u << 21) - 1;
  return ((static_cast<std::uint64_t>(x + kBias) & kMask) << 42) |
         ((static_cast<std::uint64_t>(y + kBias) & kMask) << 21) |
         (static_cast<std::uint64_t>(z + kBias) & kMask);
}

/// Calls visit(i, j) once for every unordered pair (i < j) that may lie within
/// `radius`; the caller applies the exact test.
template <typename Visit>
void for_each_candidate(const std::vector<Aabb>& boxes, double radius, Visit&& visit) {
  const std::size_t n = boxes.size();
  if (n < 2) return;
  const double cell = radius;
  const double margin = radius * (1.0 + 1e-9) + 1e-9;
  auto cell_of = [cell](double v) { return static_cast<std::int64_t>(std::floor(v / cell)); };

  std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> grid;
  grid.reserve(n * 2);
  std::vector<std::uint32_t> large;
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto& bx = boxes[i];
    const std::int64_t x0 = cell_of(bx.min.x()), x1 = cell_of(bx.max.x());
    const std::int64_t y0 = cell_of(bx.min.y()), y1 = cell_of(bx.max.y());
    const std::int64_t z0 = cell_of(bx.min.z()), z1 = cell_of(bx.max.z());
    const std::int64_t cells = (x1 - x0 + 1) * (y1 - y0 + 1) * (z1 - z0 + 1);
    if (cells > kMaxCellsPerBox) {
      large.push_back(i);
      continue;
    }
    for (auto x = x0; x <= x1; ++x)
      for (auto y = y0; y <= y1; ++y)
        for (auto z = z0; z <= z1; ++z) grid[pack(x, y, z)].push_back(i);
  }

  std::vector<std::uint32_t> stamp(n, static_cast<std::uint32_t>(-1));
  std::vector<char> is_large(n, 0);
  for (auto i : large) is_large[i] = 1;

  for (std::uint32_t i = 0; i < n; ++i) {
    if (is_large[i]) continue;
    const auto& bx = boxes[i];
    const std::int64_t x0 = cell_of(bx.min.x() - margin), x1 = cell_of(bx.max.x() + margin);
    const std::int64_t y0 = cell_of(bx.min.y() - margin), y1 = cell_of(bx.max.y() + margin);
    const std::int64_t z0 = cell_of(bx.min.z() - margin), z1 = cell_of(bx.max.z() + margin);
    for (auto x = x0; x <= x1; ++x)
      for (auto y = y0; y <= y1; ++y)
        for (auto z = z0; z <= z1; ++z) {
          auto it = grid.find(pack(x, y, z));
          if (it == grid.end()) continue;
          for (std::uint32_t j : it->second) {
            if (j <= i || stamp[j] == i) continue;
            stamp[j] = i;
            visit(i, j);
          }
        }
  }
  // Oversized boxes are compared against every other box directly.
  for (std::uint32_t i : large) {
    for (std::uint32_t j = 0; j < n; ++j) {
      if (j == i || (is_large[j] && j < i)) continue;
      visit(std::min(i, j), std::max(i, j));
    }
  }
}

std::vector<Aabb> boxes_of(const FloorModel& floor) {
  std::vector<Aabb> boxes;
  boxes.reserve(floor.components.size());
  for (const auto& c : floor.components) boxes.push_back(derive_aabb(c));
  return boxes;
}

}  // namespace

std::string_view to_string(SpatialCategory c) {
  switch (c) {
    case SpatialCategory::different_surface: return "different_surface";
    case SpatialCategory::interface_non_parallel: return "interface_non_parallel";
    case SpatialCategory::interface_parallel: return "interface_parallel";
    case SpatialCategory::point_to_line: return "point_to_line";
    case SpatialCategory::point_to_point: return "point_to_point";
  }
  return "unknown";
}

double aabb_signed_distance(const Aabb& a, const Aabb& b) {
  double gap_sq = 0.0;
  bool separated = false;
  double min_overlap = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 3; ++k) {
    const double overlap = std::min(a.max[k], b.max[k]) - std::max(a.min[k], b.min[k]);
    if (overlap < 0.0) {
      separated = true;
      gap_sq += overlap * overlap;
    }
    min_overlap = std::min(min_overlap, overlap);
  }
  if (separated) return std::sqrt(gap_sq);
  return 0.0 - min_overlap;  // +0 when touching on a face, edge or corner
}

ClosestPoints closest_points(const Positioning& a, const Positioning& b) {
  if (!a.is_line() && !b.is_line()) return make(a.p0, b.p0);
  if (!a.is_line()) return make(a.p0, closest_on_segment(a.p0, b.p0, b.p1));
  if (!b.is_line()) return make(closest_on_segment(b.p0, a.p0, a.p1), b.p0);
  return segment_segment(a.p0, a.p1, b.p0, b.p1);
}

SpatialDescriptor classify_spatial(const BimComponent& a, const BimComponent& b) {
  SpatialDescriptor out;
  const auto cp = closest_points(a.positioning, b.positioning);
  out.sdv = cp.on_b - cp.on_a;
  out.signed_distance = aabb_signed_distance(derive_aabb(a), derive_aabb(b));

  const auto& pa = a.positioning;
  const auto& pb = b.positioning;
  if (!pa.is_line() && !pb.is_line()) {
    out.category = SpatialCategory::point_to_point;
    const Vec3 v = pb.p0 - pa.p0;
    out.horizontal_angle = v.norm() > 0.0 ? angle_to_horizontal_of_direction(v) : 0.0;
    return out;
  }
  if (pa.is_line() != pb.is_line()) {
    out.category = SpatialCategory::point_to_line;
    const Positioning& line = pa.is_line() ? pa : pb;
    const Vec3& point = pa.is_line() ? pb.p0 : pa.p0;
    const Vec3 d = (line.p1 - line.p0).normalized();
    const Vec3 n = d.cross(point - line.p0);
    out.horizontal_angle = n.norm() > 1e-12 ? angle_to_horizontal_of_normal(n)
                                            : angle_to_horizontal_of_direction(d);
    return out;
  }

  const Vec3 d1 = (pa.p1 - pa.p0).normalized();
  const Vec3 d2 = (pb.p1 - pb.p0).normalized();
  out.angle = acute_angle(d1, d2);
  if (out.angle < kParallelTolerance) {
    out.category = SpatialCategory::interface_parallel;
    const Vec3 n = d1.cross(pb.p0 - pa.p0);
    out.horizontal_angle = n.norm() > 1e-12 ? angle_to_horizontal_of_normal(n)
                                            : angle_to_horizontal_of_direction(d1);
    return out;
  }
  const Vec3 n = d1.cross(d2);
  if (std::abs(n.dot(pb.p0 - pa.p0)) < kCoplanarTolerance) {
    out.category = SpatialCategory::interface_non_parallel;
    out.horizontal_angle = angle_to_horizontal_of_normal(n);
  } else {
    out.category = SpatialCategory::different_surface;
    out.horizontal_angle = 0.0;
  }
  return out;
}

std::vector<SpatialPair> find_spatial_pairs(const FloorModel& floor, double radius) {
  return find_spatial_pairs(floor, boxes_of(floor), radius);
}

std::vector<SpatialPair> find_spatial_pairs(const FloorModel& floor, const std::vector<Aabb>& boxes,
                                            double radius) {
  if (!(radius > 0.0)) throw std::invalid_argument("spatial radius must be > 0");
  const auto declared = declared_pairs(floor);
  std::vector<SpatialPair> out;
  for_each_candidate(boxes, radius, [&](std::uint32_t i, std::uint32_t j) {
    if (aabb_signed_distance(boxes[i], boxes[j]) > radius) return;
    if (declared.contains(ordered_pair(i, j))) return;
    out.push_back({i, j, classify_spatial(floor.components[i], floor.components[j])});
  });
  std::sort(out.begin(), out.end(), [](const SpatialPair& x, const SpatialPair& y) {
    return std::tie(x.a_index, x.b_index) < std::tie(y.a_index, y.b_index);
  });
  return out;
}

std::size_t count_spatial_pairs(const FloorModel& floor, const std::vector<Aabb>& boxes, double radius) {
  if (!(radius > 0.0)) throw std::invalid_argument("spatial radius must be > 0");
  const auto declared = declared_pairs(floor);
  std::size_t count = 0;
  for_each_candidate(boxes, radius, [&](std::uint32_t i, std::uint32_t j) {
    if (aabb_signed_distance(boxes[i], boxes[j]) <= radius && !declared.contains(ordered_pair(i, j))) ++count;
  });
  return count;
}

}  // namespace bignet
