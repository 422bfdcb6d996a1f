#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "bignet/bim_model.hpp"
#include "bignet/graph.hpp"

namespace bignet {

/// Parametric grid building. Lengths in metres, densities are per-candidate
/// probabilities.
struct BuildingSpec {
  int bays = 4;     // along x
  int spans = 3;    // along y
  int storeys = 2;
  double bay_length_m = 6.0;
  double span_length_m = 5.0;
  double storey_height_m = 3.6;
  double wall_density = 0.6;    // fraction of grid edges carrying a wall
  double door_density = 0.5;    // fraction of walls hosting a door
  double window_density = 0.3;  // fraction of walls hosting a window
  int mep_runs = 3;             // per storey
  double fitting_spacing_m = 3.0;
  std::uint64_t seed = 1;
  std::string name = "B";  // id and level prefix

  bool operator==(const BuildingSpec&) const = default;
};

void validate_spec(const BuildingSpec& spec);
BuildingSpec spec_from_json(std::string_view document);
std::string spec_to_json(const BuildingSpec& spec);

/// `count` variations of `base` for a corpus: grid size, lengths, storey
/// height and densities are perturbed per building, names get a suffix and
/// seeds are derived from base.seed.
std::vector<BuildingSpec> corpus_specs(const BuildingSpec& base, int count);

/// One FloorModel per storey. Every component carries an explicit box.
std::vector<FloorModel> generate_building(const BuildingSpec& spec);

inline constexpr double kDoorMinHeightMm = 2000.0;
inline constexpr double kDoorMaxHeightMm = 2400.0;

struct Injection {
  std::string level_id;
  std::string key;  // component id, or pair_key for topological errors
  std::string original;
  std::string injected;
};

struct ErrorInjectionReport {
  double requested_rate = 0.0;
  std::uint64_t seed = 0;
  std::vector<Injection> semantic_conflict;
  std::vector<Injection> data_range_error;
  std::vector<Injection> topological_error;
  std::size_t eligible_walls = 0;
  std::size_t eligible_doors = 0;
  std::size_t eligible_connections = 0;
  std::vector<std::string> warnings;

  std::string to_json() const;
};

struct InjectionResult {
  std::vector<FloorModel> models;
  LabelMap labels;
  ErrorInjectionReport report;
};

/// Alters round(rate * eligible) walls, doors, and duct/pipe-fitting
/// connections, sampled independently per class. Ids must be unique across
/// `models` because labels share one map.
InjectionResult inject_errors(std::vector<FloorModel> models, double rate, double spatial_radius_m,
                              std::uint64_t seed);

std::string labels_to_json(const LabelMap& labels);
LabelMap labels_from_json(std::string_view document);

/// Region-level split: shuffle the pool, take round(f * n) for training,
/// half the rest for validation, the remainder for testing. The pool is every
/// graph already marked as a transfer split, or all graphs if none is.
/// With `transfer_regions` > 0 only that many pool graphs are used; the rest
/// become pretraining graphs.
GraphDataset make_splits(GraphDataset dataset, double transfer_fraction, std::uint64_t seed,
                         std::size_t transfer_regions = 0);

/// Labelled benchmark: `count` buildings derived from `base`, errors injected
/// at `rate`, one graph per floor (or per region when `max_nodes` > 0). All
/// graphs start in the pretraining split.
GraphDataset error_benchmark(const BuildingSpec& base, int count, double rate, double radius, GraphMode mode,
                             std::uint64_t seed, const TextEmbedder& embedder, std::size_t max_nodes = 0);

}  // namespace bignet
