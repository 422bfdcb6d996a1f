#include "bignet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>

#include "json.hpp"

namespace bignet {

using nlohmann::json;

namespace {

constexpr double kSlabThickness = 0.2;
constexpr double kBeamDepth = 0.6;
constexpr double kColumnHalf = 0.25;

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument("building spec: " + what);
}

BimComponent base_component(std::string id, std::string category, std::string family, std::string symbol,
                            const std::string& level) {
  BimComponent c;
  c.id = std::move(id);
  c.category = std::move(category);
  c.family_name = std::move(family);
  c.family_symbol_name = std::move(symbol);
  c.level_id = level;
  return c;
}

// Box of a horizontal or vertical segment with a rectangular cross-section
// (half extents across and up).
Aabb segment_box(const Vec3& a, const Vec3& b, double half_across, double half_up) {
  const Vec3 d = (b - a).normalized();
  Vec3 across = d.cross(Vec3::UnitZ());
  if (across.norm() < 1e-12) across = Vec3::UnitX();
  across.normalize();
  const Vec3 up = across.cross(d).normalized();
  const Vec3 ext = (across * half_across).cwiseAbs() + (up * half_up).cwiseAbs();
  return {a.cwiseMin(b) - ext, a.cwiseMax(b) + ext};
}

class Builder {
 public:
  Builder(const BuildingSpec& spec, int storey) : spec_(spec), storey_(storey), rng_(spec.seed * 1000003ull + storey) {
    floor_.level_id = spec.name + "-S" + std::to_string(storey);
    z0_ = storey * spec.storey_height_m;
  }

  FloorModel build() {
    grid();
    walls();
    mep();
    return std::move(floor_);
  }

 private:
  std::string next_id(const std::string& kind) { return floor_.level_id + "-" + kind + std::to_string(counter_[kind]++); }

  void relate(RelationKind k, const std::string& a, const std::string& b) { floor_.relations.push_back({k, a, b}); }

  double gx(int i) const { return i * spec_.bay_length_m; }
  double gy(int j) const { return j * spec_.span_length_m; }

  void grid() {
    const double h = spec_.storey_height_m;
    const int nx = spec_.bays + 1, ny = spec_.spans + 1;
    column_ids_.assign(static_cast<std::size_t>(nx * ny), "");
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) {
        auto c = base_component(next_id("COL"), "column", "Concrete-Rectangular-Column", "500 x 500mm",
                                floor_.level_id);
        c.dims_mm = {500, 500, h * 1000.0};
        c.purpose = StructuralPurpose::structural;
        c.positioning = Positioning::point(Vec3(gx(i), gy(j), z0_ + h / 2));
        c.aabb = Aabb{Vec3(gx(i) - kColumnHalf, gy(j) - kColumnHalf, z0_), Vec3(gx(i) + kColumnHalf, gy(j) + kColumnHalf, z0_ + h)};
        column_ids_[static_cast<std::size_t>(j * nx + i)] = c.id;
        floor_.components.push_back(std::move(c));
      }
    auto column = [&](int i, int j) { return column_ids_[static_cast<std::size_t>(j * nx + i)]; };

    // Slabs, one per bay, touching the four corner columns.
    slab_ids_.assign(static_cast<std::size_t>(spec_.bays * spec_.spans), "");
    for (int j = 0; j < spec_.spans; ++j)
      for (int i = 0; i < spec_.bays; ++i) {
        auto s = base_component(next_id("SLB"), "floor", "Floor", "Generic 200mm", floor_.level_id);
        s.dims_mm = {spec_.bay_length_m * 1000.0, spec_.span_length_m * 1000.0, kSlabThickness * 1000.0};
        s.purpose = StructuralPurpose::structural;
        s.positioning = Positioning::point(Vec3((gx(i) + gx(i + 1)) / 2, (gy(j) + gy(j + 1)) / 2, z0_ + kSlabThickness / 2));
        s.aabb = Aabb{Vec3(gx(i), gy(j), z0_), Vec3(gx(i + 1), gy(j + 1), z0_ + kSlabThickness)};
        slab_ids_[static_cast<std::size_t>(j * spec_.bays + i)] = s.id;
        for (auto [di, dj] : {std::pair{0, 0}, {1, 0}, {0, 1}, {1, 1}})
          relate(RelationKind::touch_floor, column(i + di, j + dj), s.id);
        floor_.components.push_back(std::move(s));
      }

    // Beams along every grid edge at the top of the storey.
    std::uniform_int_distribution<int> pick(0, 1);
    auto beam = [&](int i0, int j0, int i1, int j1) {
      const bool deep = pick(rng_) == 0;
      auto b = base_component(next_id("BM"), "beam", "Concrete-Rectangular Beam", deep ? "300 x 600mm" : "250 x 500mm",
                              floor_.level_id);
      const double depth = deep ? 0.6 : 0.5, width = deep ? 0.3 : 0.25;
      const double z = z0_ + spec_.storey_height_m - depth / 2;
      const Vec3 a(gx(i0), gy(j0), z), e(gx(i1), gy(j1), z);
      b.dims_mm = {(e - a).norm() * 1000.0, width * 1000.0, depth * 1000.0};
      b.purpose = StructuralPurpose::structural;
      b.positioning = Positioning::line(a, e);
      b.aabb = segment_box(a, e, width / 2, depth / 2);
      relate(RelationKind::connection, b.id, column(i0, j0));
      relate(RelationKind::connection, b.id, column(i1, j1));
      floor_.components.push_back(std::move(b));
    };
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < spec_.bays; ++i) beam(i, j, i + 1, j);
    for (int i = 0; i < nx; ++i)
      for (int j = 0; j < spec_.spans; ++j) beam(i, j, i, j + 1);
  }

  void walls() {
    std::bernoulli_distribution wall(spec_.wall_density), door(spec_.door_density), window(spec_.window_density);
    std::uniform_real_distribution<double> door_height(kDoorMinHeightMm, kDoorMaxHeightMm);
    std::uniform_int_distribution<int> symbol(0, 2);
    static const char* kWallSymbols[] = {"Generic - 200mm", "Interior - 200mm Partition", "Exterior - Brick on Block"};
    const double bottom = z0_ + kSlabThickness;
    const double top = z0_ + spec_.storey_height_m - kBeamDepth;
    const double zc = (bottom + top) / 2;

    auto place = [&](const Vec3& a, const Vec3& b, int slab_index) {
      if (!wall(rng_)) return;
      auto w = base_component(next_id("WL"), "wall", "Basic Wall", kWallSymbols[symbol(rng_)], floor_.level_id);
      w.dims_mm = {(b - a).norm() * 1000.0, 200.0, (top - bottom) * 1000.0};
      w.positioning = Positioning::line(a, b);
      w.aabb = segment_box(a, b, 0.1, (top - bottom) / 2);
      relate(RelationKind::touch_floor, w.id, slab_ids_[static_cast<std::size_t>(slab_index)]);
      const Vec3 dir = (b - a).normalized();
      const Vec3 across = dir.cross(Vec3::UnitZ()).normalized();
      const double len = (b - a).norm();

      if (door(rng_)) {
        const bool dbl = len > 4.0 && symbol(rng_) == 0;
        const double width = dbl ? 1.8 : 0.9;
        const double h = door_height(rng_);
        auto d = base_component(next_id("DR"), "door", dbl ? "Double-Flush" : "Single-Flush", dbl ? "1800mm" : "900mm",
                                floor_.level_id);
        d.dims_mm = {width * 1000.0, 50.0, h};
        const Vec3 c = a + dir * (0.3 * len);
        d.positioning = Positioning::point(Vec3(c.x(), c.y(), bottom + h / 2000.0));
        const Vec3 ext = (dir * width / 2).cwiseAbs() + (across * 0.025).cwiseAbs();
        d.aabb = Aabb{Vec3(c.x() - ext.x(), c.y() - ext.y(), bottom), Vec3(c.x() + ext.x(), c.y() + ext.y(), bottom + h / 1000.0)};
        relate(RelationKind::host, w.id, d.id);
        floor_.components.push_back(std::move(d));
      }
      if (window(rng_)) {
        auto win = base_component(next_id("WN"), "window", "Fixed", "1200 x 1500mm", floor_.level_id);
        win.dims_mm = {1200.0, 80.0, 1500.0};
        const Vec3 c = a + dir * (0.72 * len);
        const double sill = bottom + 0.9;
        win.positioning = Positioning::point(Vec3(c.x(), c.y(), sill + 0.75));
        const Vec3 ext = (dir * 0.6).cwiseAbs() + (across * 0.04).cwiseAbs();
        win.aabb = Aabb{Vec3(c.x() - ext.x(), c.y() - ext.y(), sill), Vec3(c.x() + ext.x(), c.y() + ext.y(), sill + 1.5)};
        relate(RelationKind::host, w.id, win.id);
        floor_.components.push_back(std::move(win));
      }
      floor_.components.push_back(std::move(w));
    };

    for (int j = 0; j <= spec_.spans; ++j)
      for (int i = 0; i < spec_.bays; ++i)
        place(Vec3(gx(i) + kColumnHalf, gy(j), zc), Vec3(gx(i + 1) - kColumnHalf, gy(j), zc),
              std::min(j, spec_.spans - 1) * spec_.bays + i);
    for (int i = 0; i <= spec_.bays; ++i)
      for (int j = 0; j < spec_.spans; ++j)
        place(Vec3(gx(i), gy(j) + kColumnHalf, zc), Vec3(gx(i), gy(j + 1) - kColumnHalf, zc),
              j * spec_.bays + std::min(i, spec_.bays - 1));
  }

  void mep() {
    std::uniform_real_distribution<double> jitter(-0.3, 0.3);
    for (int r = 0; r < spec_.mep_runs; ++r) {
      const bool along_x = r % 2 == 0;
      const bool pipe = r % 3 == 2;
      const int lane = r / 2;
      const double z = z0_ + spec_.storey_height_m - (pipe ? 1.4 : 1.0) - (along_x ? 0.0 : 0.45);
      Vec3 start, end;
      if (along_x) {
        const int j = lane % spec_.spans;
        const double y = (gy(j) + gy(j + 1)) / 2 + jitter(rng_);
        start = Vec3(gx(0) + 0.6, y, z);
        end = Vec3(gx(spec_.bays) - 0.6, y, z);
      } else {
        const int i = lane % spec_.bays;
        const double x = (gx(i) + gx(i + 1)) / 2 + jitter(rng_);
        start = Vec3(x, gy(0) + 0.6, z);
        end = Vec3(x, gy(spec_.spans) - 0.6, z);
      }
      const double length = (end - start).norm();
      const int segments = std::max(1, static_cast<int>(std::lround(length / spec_.fitting_spacing_m)));
      const Vec3 dir = (end - start).normalized();
      const double fit_half = pipe ? 0.1 : 0.2;

      std::vector<std::string> fittings;
      for (int k = 0; k <= segments; ++k) {
        const Vec3 p = start + (end - start) * (static_cast<double>(k) / segments);
        auto f = base_component(next_id("FT"), "fitting", pipe ? "Tee - Generic" : "Rectangular Elbow - Mitered",
                                "Standard", floor_.level_id);
        if (pipe) {
          f.shape = ShapeClass::cylinder;
          f.dims_mm = {200.0, 100.0, 100.0};
          f.aabb = Aabb{p - Vec3::Constant(0.1), p + Vec3::Constant(0.1)};
        } else {
          f.dims_mm = {400.0, 400.0, 300.0};
          f.aabb = Aabb{p - Vec3(0.2, 0.2, 0.15), p + Vec3(0.2, 0.2, 0.15)};
        }
        f.positioning = Positioning::point(p);
        fittings.push_back(f.id);
        floor_.components.push_back(std::move(f));
      }
      for (int k = 0; k < segments; ++k) {
        const Vec3 a = start + (end - start) * (static_cast<double>(k) / segments) + dir * fit_half;
        const Vec3 b = start + (end - start) * (static_cast<double>(k + 1) / segments) - dir * fit_half;
        BimComponent s = pipe ? base_component(next_id("PP"), "pipe", "Pipe Types", "Standard", floor_.level_id)
                              : base_component(next_id("DT"), "duct", "Rectangular Duct", "Mitered Elbows / Taps",
                                               floor_.level_id);
        if (pipe) {
          s.shape = ShapeClass::cylinder;
          s.dims_mm = {(b - a).norm() * 1000.0, 50.0, 50.0};
          s.aabb = segment_box(a, b, 0.05, 0.05);
        } else {
          s.dims_mm = {(b - a).norm() * 1000.0, 400.0, 300.0};
          s.aabb = segment_box(a, b, 0.2, 0.15);
        }
        s.positioning = Positioning::line(a, b);
        relate(RelationKind::connection, s.id, fittings[static_cast<std::size_t>(k)]);
        relate(RelationKind::connection, s.id, fittings[static_cast<std::size_t>(k + 1)]);
        floor_.components.push_back(std::move(s));
      }
    }
  }

  const BuildingSpec& spec_;
  int storey_;
  std::mt19937_64 rng_;
  double z0_ = 0.0;
  FloorModel floor_;
  std::map<std::string, int> counter_;
  std::vector<std::string> column_ids_;
  std::vector<std::string> slab_ids_;
};

}  // namespace

void validate_spec(const BuildingSpec& s) {
  require(s.bays >= 1 && s.spans >= 1 && s.storeys >= 1, "bays, spans and storeys must be >= 1");
  require(s.mep_runs >= 0, "mep_runs must be >= 0");
  require(s.bay_length_m >= 2.0 && s.span_length_m >= 2.0, "bay and span lengths must be >= 2 m");
  require(s.storey_height_m >= 3.0, "storey height must be >= 3 m");
  require(s.fitting_spacing_m > 0.5, "fitting spacing must be > 0.5 m");
  for (double d : {s.wall_density, s.door_density, s.window_density})
    require(d >= 0.0 && d <= 1.0 && std::isfinite(d), "densities must lie in [0, 1]");
  require(!s.name.empty() && s.name.find("/r") == std::string::npos, "name must be non-empty and not contain '/r'");
}

BuildingSpec spec_from_json(std::string_view document) {
  json j;
  try {
    j = json::parse(document);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("building spec: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("building spec: expected a JSON object");
  BuildingSpec s;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "bays") s.bays = value.get<int>();
      else if (key == "spans") s.spans = value.get<int>();
      else if (key == "storeys") s.storeys = value.get<int>();
      else if (key == "bay_length_m") s.bay_length_m = value.get<double>();
      else if (key == "span_length_m") s.span_length_m = value.get<double>();
      else if (key == "storey_height_m") s.storey_height_m = value.get<double>();
      else if (key == "wall_density") s.wall_density = value.get<double>();
      else if (key == "door_density") s.door_density = value.get<double>();
      else if (key == "window_density") s.window_density = value.get<double>();
      else if (key == "mep_runs") s.mep_runs = value.get<int>();
      else if (key == "fitting_spacing_m") s.fitting_spacing_m = value.get<double>();
      else if (key == "seed") s.seed = value.get<std::uint64_t>();
      else if (key == "name") s.name = value.get<std::string>();
      else throw std::invalid_argument("building spec: unknown key '" + key + "'");
    } catch (const json::exception& e) {
      throw std::invalid_argument("building spec: bad value for '" + key + "': " + e.what());
    }
  }
  validate_spec(s);
  return s;
}

std::string spec_to_json(const BuildingSpec& s) {
  json j = {{"bays", s.bays},
            {"spans", s.spans},
            {"storeys", s.storeys},
            {"bay_length_m", s.bay_length_m},
            {"span_length_m", s.span_length_m},
            {"storey_height_m", s.storey_height_m},
            {"wall_density", s.wall_density},
            {"door_density", s.door_density},
            {"window_density", s.window_density},
            {"mep_runs", s.mep_runs},
            {"fitting_spacing_m", s.fitting_spacing_m},
            {"seed", s.seed},
            {"name", s.name}};
  return j.dump(2);
}

std::vector<BuildingSpec> corpus_specs(const BuildingSpec& base, int count) {
  validate_spec(base);
  std::vector<BuildingSpec> out;
  std::mt19937_64 rng(base.seed);
  std::uniform_int_distribution<int> step(-1, 1);
  std::uniform_real_distribution<double> scale(0.85, 1.15), shift(-0.15, 0.15);
  for (int b = 0; b < count; ++b) {
    BuildingSpec s = base;
    s.name = base.name + std::to_string(b);
    s.seed = base.seed * 7919 + static_cast<std::uint64_t>(b) + 1;
    s.bays = std::max(1, base.bays + step(rng));
    s.spans = std::max(1, base.spans + step(rng));
    s.bay_length_m = std::max(2.0, base.bay_length_m * scale(rng));
    s.span_length_m = std::max(2.0, base.span_length_m * scale(rng));
    s.storey_height_m = std::max(3.0, base.storey_height_m * scale(rng));
    s.wall_density = std::clamp(base.wall_density + shift(rng), 0.0, 1.0);
    s.door_density = std::clamp(base.door_density + shift(rng), 0.0, 1.0);
    s.window_density = std::clamp(base.window_density + shift(rng), 0.0, 1.0);
    s.mep_runs = std::max(0, base.mep_runs + step(rng));
    out.push_back(s);
  }
  return out;
}

std::vector<FloorModel> generate_building(const BuildingSpec& spec) {
  validate_spec(spec);
  std::vector<FloorModel> floors;
  floors.reserve(static_cast<std::size_t>(spec.storeys));
  for (int k = 0; k < spec.storeys; ++k) floors.push_back(Builder(spec, k).build());
  return floors;
}

std::string ErrorInjectionReport::to_json() const {
  auto block = [](const std::vector<Injection>& items, std::size_t eligible) {
    json list = json::array();
    for (const auto& i : items)
      list.push_back({{"level_id", i.level_id}, {"key", i.key}, {"original", i.original}, {"injected", i.injected}});
    return json{{"eligible", eligible},
                {"altered", items.size()},
                {"rate", eligible ? static_cast<double>(items.size()) / static_cast<double>(eligible) : 0.0},
                {"items", list}};
  };
  json j = {{"requested_rate", requested_rate},
            {"seed", seed},
            {"classes",
             {{"semantic_conflict", block(semantic_conflict, eligible_walls)},
              {"data_range_error", block(data_range_error, eligible_doors)},
              {"topological_error", block(topological_error, eligible_connections)}}},
            {"warnings", warnings}};
  return j.dump(2);
}

namespace {

struct Target {
  std::size_t floor;
  std::size_t index;  // component or relation index
};

std::vector<Target> choose(std::vector<Target> eligible, double rate, std::mt19937_64& rng) {
  const auto count = static_cast<std::size_t>(std::lround(rate * static_cast<double>(eligible.size())));
  std::shuffle(eligible.begin(), eligible.end(), rng);
  eligible.resize(std::min(count, eligible.size()));
  std::sort(eligible.begin(), eligible.end(),
            [](const Target& a, const Target& b) { return std::tie(a.floor, a.index) < std::tie(b.floor, b.index); });
  return eligible;
}

std::string format_mm(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

bool is_mep_segment(const BimComponent& c) { return c.category == "duct" || c.category == "pipe"; }

}  // namespace

InjectionResult inject_errors(std::vector<FloorModel> models, double rate, double spatial_radius_m,
                              std::uint64_t seed) {
  if (!(rate > 0.0 && rate <= 1.0)) throw std::invalid_argument("inject_errors: rate must lie in (0, 1]");
  if (!(spatial_radius_m > 0.0)) throw std::invalid_argument("inject_errors: spatial radius must be positive");

  InjectionResult out;
  auto& report = out.report;
  report.requested_rate = rate;
  report.seed = seed;

  std::set<std::string> ids;
  std::vector<Target> walls, doors, connections;
  for (std::size_t f = 0; f < models.size(); ++f) {
    const auto& floor = models[f];
    std::unordered_map<std::string, const BimComponent*> by_id;
    for (std::size_t i = 0; i < floor.components.size(); ++i) {
      const auto& c = floor.components[i];
      if (!ids.insert(c.id).second) throw std::invalid_argument("inject_errors: component id '" + c.id + "' is not unique");
      by_id[c.id] = &c;
      if (c.category == "wall") walls.push_back({f, i});
      if (c.category == "door") doors.push_back({f, i});
    }
    for (std::size_t r = 0; r < floor.relations.size(); ++r) {
      const auto& rel = floor.relations[r];
      if (rel.kind != RelationKind::connection) continue;
      const auto a = by_id.find(rel.a_id), b = by_id.find(rel.b_id);
      if (a == by_id.end() || b == by_id.end()) continue;
      if ((is_mep_segment(*a->second) && b->second->category == "fitting") ||
          (is_mep_segment(*b->second) && a->second->category == "fitting"))
        connections.push_back({f, r});
    }
  }
  report.eligible_walls = walls.size();
  report.eligible_doors = doors.size();
  report.eligible_connections = connections.size();
  if (walls.empty()) report.warnings.push_back("no walls eligible for semantic conflicts");
  if (doors.empty()) report.warnings.push_back("no doors eligible for data range errors");
  if (connections.empty()) report.warnings.push_back("no duct/pipe-fitting connections eligible for topological errors");

  std::mt19937_64 wall_rng(seed * 3 + 1), door_rng(seed * 3 + 2), mep_rng(seed * 3 + 3);

  static const char* kBeamSymbols[] = {"300 x 600mm", "250 x 500mm"};
  for (const auto& t : choose(walls, rate, wall_rng)) {
    auto& c = models[t.floor].components[t.index];
    Injection inj{models[t.floor].level_id, c.id, c.family_name + " / " + c.family_symbol_name, ""};
    c.family_name = "Concrete-Rectangular Beam";
    c.family_symbol_name = kBeamSymbols[wall_rng() % 2];
    inj.injected = c.family_name + " / " + c.family_symbol_name;
    out.labels[c.id] = NodeLabel::semantic_conflict;
    report.semantic_conflict.push_back(std::move(inj));
  }

  // Heights uniform over [1200, 1950] U [2450, 3200] mm.
  std::uniform_real_distribution<double> band(0.0, 1500.0);
  for (const auto& t : choose(doors, rate, door_rng)) {
    auto& c = models[t.floor].components[t.index];
    const double u = band(door_rng);
    const double h = u < 750.0 ? 1200.0 + u : 2450.0 + (u - 750.0);
    Injection inj{models[t.floor].level_id, c.id, format_mm(c.dims_mm[2]), format_mm(h)};
    Aabb box = derive_aabb(c);
    box.max.z() = box.min.z() + h / 1000.0;
    c.positioning.p0.z() = box.min.z() + h / 2000.0;
    c.dims_mm[2] = h;
    c.aabb = box;
    out.labels[c.id] = NodeLabel::data_range_error;
    report.data_range_error.push_back(std::move(inj));
  }

  const auto broken = choose(connections, rate, mep_rng);
  std::map<std::size_t, std::set<std::size_t>> removed;  // floor -> relation indices
  std::set<std::string> displaced;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (const auto& t : broken) {
    auto& floor = models[t.floor];
    const auto& rel = floor.relations[t.index];
    const auto fit_it = std::find_if(floor.components.begin(), floor.components.end(), [&](const BimComponent& c) {
      return (c.id == rel.a_id || c.id == rel.b_id) && c.category == "fitting";
    });
    std::string detail = "connection";
    if (displaced.insert(fit_it->id).second) {
      Vec3 dir(normal(mep_rng), normal(mep_rng), normal(mep_rng));
      if (dir.norm() < 1e-12) dir = Vec3::UnitX();
      dir.normalize();
      const double magnitude = spatial_radius_m * (1.0 - unit(mep_rng));  // (0, r]
      const Vec3 shift = dir * magnitude;
      Aabb box = derive_aabb(*fit_it);
      box.min += shift;
      box.max += shift;
      fit_it->aabb = box;
      fit_it->positioning.p0 += shift;
      detail = "removed; " + fit_it->id + " displaced " + format_mm(magnitude * 1000.0) + " mm";
    } else {
      detail = "removed; " + fit_it->id + " already displaced";
    }
    const std::string key = pair_key(rel.a_id, rel.b_id);
    out.labels[key] = NodeLabel::topological_error;
    report.topological_error.push_back({floor.level_id, key, "connection", detail});
    removed[t.floor].insert(t.index);
  }
  for (const auto& [f, indices] : removed) {
    auto& rels = models[f].relations;
    std::vector<DeclaredRelation> kept;
    kept.reserve(rels.size() - indices.size());
    for (std::size_t r = 0; r < rels.size(); ++r)
      if (!indices.contains(r)) kept.push_back(std::move(rels[r]));
    rels = std::move(kept);
  }

  out.models = std::move(models);
  return out;
}

std::string labels_to_json(const LabelMap& labels) {
  std::map<std::string, std::string> sorted;
  for (const auto& [k, v] : labels) sorted[k] = std::string(to_string(v));
  return json{{"labels", sorted}}.dump(1);
}

LabelMap labels_from_json(std::string_view document) {
  LabelMap out;
  try {
    const auto j = json::parse(document);
    for (const auto& [k, v] : j.at("labels").items()) out[k] = node_label_from_string(v.get<std::string>());
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("labels file: ") + e.what());
  }
  return out;
}

GraphDataset make_splits(GraphDataset dataset, double transfer_fraction, std::uint64_t seed,
                         std::size_t transfer_regions) {
  if (!(transfer_fraction > 0.0 && transfer_fraction < 1.0))
    throw std::invalid_argument("make_splits: transfer fraction must lie in (0, 1)");
  const std::size_t n_graphs = dataset.graphs.size();
  if (dataset.splits.size() != n_graphs) dataset.splits.assign(n_graphs, Split::pretrain);

  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < n_graphs; ++i)
    if (dataset.splits[i] != Split::pretrain) pool.push_back(i);
  if (pool.empty()) {
    pool.resize(n_graphs);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
  }
  std::mt19937_64 rng(seed);
  std::shuffle(pool.begin(), pool.end(), rng);
  if (transfer_regions > 0 && transfer_regions < pool.size()) {
    for (std::size_t k = transfer_regions; k < pool.size(); ++k) dataset.splits[pool[k]] = Split::pretrain;
    pool.resize(transfer_regions);
  }
  const std::size_t n = pool.size();
  if (n < 3) throw std::invalid_argument("make_splits: need at least 3 regions, got " + std::to_string(n));

  std::size_t n_train = static_cast<std::size_t>(std::lround(transfer_fraction * static_cast<double>(n)));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 2);
  const std::size_t n_val = std::max<std::size_t>(1, (n - n_train) / 2);
  for (std::size_t k = 0; k < n; ++k)
    dataset.splits[pool[k]] = k < n_train ? Split::transfer_train
                              : k < n_train + n_val ? Split::transfer_val
                                                    : Split::transfer_test;
  return dataset;
}

GraphDataset error_benchmark(const BuildingSpec& base, int count, double rate, double radius, GraphMode mode,
                             std::uint64_t seed, const TextEmbedder& embedder, std::size_t max_nodes) {
  std::vector<FloorModel> floors;
  for (const auto& spec : corpus_specs(base, count)) {
    auto b = generate_building(spec);
    floors.insert(floors.end(), std::make_move_iterator(b.begin()), std::make_move_iterator(b.end()));
  }
  auto injected = inject_errors(std::move(floors), rate, radius, seed);
  if (max_nodes > 0) injected.models = partition_regions(injected.models, max_nodes, radius);
  GraphDataset d;
  for (const auto& f : injected.models) {
    d.graphs.push_back(build_graph(f, radius, mode, embedder, &injected.labels));
    d.splits.push_back(Split::pretrain);
  }
  return d;
}

}  // namespace bignet
