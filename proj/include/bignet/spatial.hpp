#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "bignet/bim_model.hpp"

namespace bignet {

/// Direction vectors closer than this (acute angle, radians) are parallel.
inline constexpr double kParallelTolerance = 1e-6;
/// |(d1 x d2) . (q0 - p0)| below this (metres, unit directions) is coplanar.
inline constexpr double kCoplanarTolerance = 1e-9;

enum class SpatialCategory : std::uint8_t {
  different_surface,
  interface_non_parallel,
  interface_parallel,
  point_to_line,
  point_to_point,
};
inline constexpr int kSpatialCategoryCount = 5;

std::string_view to_string(SpatialCategory c);

struct SpatialDescriptor {
  SpatialCategory category = SpatialCategory::different_surface;
  double angle = 0.0;            // radians, [0, pi/2]
  Vec3 sdv = Vec3::Zero();       // shortest-distance vector, a -> b, metres
  double signed_distance = 0.0;  // bounding-box separation; negative means overlap
  double horizontal_angle = 0.0; // radians, [0, pi/2]
};

/// Unordered component pair, stored as indices into FloorModel::components
/// with a_index < b_index.
struct SpatialPair {
  std::uint32_t a_index = 0;
  std::uint32_t b_index = 0;
  SpatialDescriptor descriptor;
};

/// Euclidean gap between disjoint boxes, 0 when they touch, and minus the
/// smallest per-axis overlap when their interiors intersect.
double aabb_signed_distance(const Aabb& a, const Aabb& b);

struct ClosestPoints {
  Vec3 on_a = Vec3::Zero();
  Vec3 on_b = Vec3::Zero();
  double distance = 0.0;
};

/// Closest points between two positioning geometries (points or segments).
/// Parallel overlapping segments resolve to the midpoint of the overlap.
ClosestPoints closest_points(const Positioning& a, const Positioning& b);

SpatialDescriptor classify_spatial(const BimComponent& a, const BimComponent& b);

/// All unordered pairs whose bounding-box signed distance is <= radius and
/// that are not linked by a declared relation. Sorted by (a_index, b_index).
std::vector<SpatialPair> find_spatial_pairs(const FloorModel& floor, double radius);

/// Same as above with precomputed boxes (one per component).
std::vector<SpatialPair> find_spatial_pairs(const FloorModel& floor, const std::vector<Aabb>& boxes,
                                            double radius);

/// Candidate pairs from the grid index only, without descriptors; used by
/// region partitioning where only counts matter.
std::size_t count_spatial_pairs(const FloorModel& floor, const std::vector<Aabb>& boxes, double radius);

}  // namespace bignet
