#include "dtppo/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "dtppo/errors.hpp"
#include "json.hpp"

namespace dtppo {

namespace {

using nlohmann::json;

constexpr double kWallMargin = 1.5;
constexpr double kKeepOut = 1.25;         // obstacle clearance around spawn/goal
constexpr double kPointSpacing = 2.0;     // between any two reserved points
constexpr double kCoverageBand = 0.02;    // relative, around the target area
constexpr int kPointAttempts = 20000;
constexpr int kObstacleAttempts = 400000;
constexpr int kShrinkAfter = 2000;        // consecutive failures before shrinking

bool is_full_height(const Obstacle& o, double altitude_max) {
  switch (o.shape) {
    case ShapeKind::kBox:
      return o.center.z - o.half_extents.z <= 0.0 &&
             o.center.z + o.half_extents.z >= altitude_max;
    case ShapeKind::kCylinder:
      return o.center.z - o.half_height <= 0.0 &&
             o.center.z + o.half_height >= altitude_max;
    case ShapeKind::kSphere:
      return false;
  }
  return false;
}

bool is_disc(const Obstacle& o) { return o.shape != ShapeKind::kBox; }

// Footprint intersection with positive area (touching is allowed).
bool footprints_overlap(const Obstacle& a, const Obstacle& b) {
  const double dx = a.center.x - b.center.x;
  const double dy = a.center.y - b.center.y;
  if (!is_disc(a) && !is_disc(b)) {
    return std::abs(dx) < a.half_extents.x + b.half_extents.x &&
           std::abs(dy) < a.half_extents.y + b.half_extents.y;
  }
  if (is_disc(a) && is_disc(b)) {
    return std::hypot(dx, dy) < a.radius + b.radius;
  }
  const Obstacle& box = is_disc(a) ? b : a;
  const Obstacle& disc = is_disc(a) ? a : b;
  const double qx = std::clamp(disc.center.x, box.center.x - box.half_extents.x,
                               box.center.x + box.half_extents.x);
  const double qy = std::clamp(disc.center.y, box.center.y - box.half_extents.y,
                               box.center.y + box.half_extents.y);
  return std::hypot(disc.center.x - qx, disc.center.y - qy) < disc.radius;
}

struct FootprintBounds {
  double x0, x1, y0, y1;
};

FootprintBounds bounds_of(const Obstacle& o) {
  const double hx = is_disc(o) ? o.radius : o.half_extents.x;
  const double hy = is_disc(o) ? o.radius : o.half_extents.y;
  return {o.center.x - hx, o.center.x + hx, o.center.y - hy, o.center.y + hy};
}

// Coverage raster used to track the union area when footprints may overlap.
class CoverageRaster {
 public:
  CoverageRaster(double arena_x, double arena_y) {
    cell_ = std::max(arena_x, arena_y) / 512.0;
    nx_ = static_cast<int>(std::ceil(arena_x / cell_));
    ny_ = static_cast<int>(std::ceil(arena_y / cell_));
    covered_.assign(static_cast<std::size_t>(nx_) * ny_, 0);
  }

  // Area newly covered if `o` were added.
  double increment(const Obstacle& o) const {
    std::size_t count = 0;
    visit(o, [&](std::size_t idx) { count += covered_[idx] == 0 ? 1 : 0; });
    return static_cast<double>(count) * cell_ * cell_;
  }

  void add(const Obstacle& o) {
    visit(o, [&](std::size_t idx) { covered_[idx] = 1; });
  }

 private:
  template <typename F>
  void visit(const Obstacle& o, F&& f) const {
    const FootprintBounds b = bounds_of(o);
    const int i0 = std::max(0, static_cast<int>(std::floor(b.x0 / cell_)));
    const int i1 = std::min(nx_ - 1, static_cast<int>(std::floor(b.x1 / cell_)));
    const int j0 = std::max(0, static_cast<int>(std::floor(b.y0 / cell_)));
    const int j1 = std::min(ny_ - 1, static_cast<int>(std::floor(b.y1 / cell_)));
    for (int j = j0; j <= j1; ++j) {
      for (int i = i0; i <= i1; ++i) {
        if (footprint_contains(o, (i + 0.5) * cell_, (j + 0.5) * cell_)) {
          f(static_cast<std::size_t>(j) * nx_ + i);
        }
      }
    }
  }

  double cell_ = 1.0;
  int nx_ = 0;
  int ny_ = 0;
  std::vector<unsigned char> covered_;
};

std::vector<Vec3> reserve_points(const ScenarioSpec& spec, std::mt19937_64& rng,
                                 std::vector<Vec3>& spawns) {
  const double x0 = std::min(kWallMargin, spec.arena_x / 2.0);
  const double y0 = std::min(kWallMargin, spec.arena_y / 2.0);
  const double z_lo = std::min(1.5, spec.altitude_max / 2.0);
  const double z_hi = std::max(z_lo, std::min(10.0, spec.altitude_max - 1.5));
  std::uniform_real_distribution<double> ux(x0, spec.arena_x - x0);
  std::uniform_real_distribution<double> uy(y0, spec.arena_y - y0);
  std::uniform_real_distribution<double> uz(z_lo, z_hi);
  const double min_goal_distance = 0.3 * std::min(spec.arena_x, spec.arena_y);

  std::vector<Vec3> reserved;
  auto well_spaced = [&](const Vec3& p) {
    return std::all_of(reserved.begin(), reserved.end(), [&](const Vec3& q) {
      return distance(p, q) >= kPointSpacing;
    });
  };

  for (int i = 0; i < spec.target_count; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < kPointAttempts && !placed; ++attempt) {
      const Vec3 p{ux(rng), uy(rng), uz(rng)};
      if (well_spaced(p)) {
        spawns.push_back(p);
        reserved.push_back(p);
        placed = true;
      }
    }
    if (!placed) {
      throw Error(ErrorCode::kDensityInfeasible,
                  "cannot place " + std::to_string(spec.target_count) +
                      " spawn points in the arena");
    }
  }
  std::vector<Vec3> goals;
  for (int i = 0; i < spec.target_count; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < kPointAttempts && !placed; ++attempt) {
      const Vec3 p{ux(rng), uy(rng), uz(rng)};
      if (distance(p, spawns[i]) >= min_goal_distance && well_spaced(p)) {
        goals.push_back(p);
        reserved.push_back(p);
        placed = true;
      }
    }
    if (!placed) {
      throw Error(ErrorCode::kDensityInfeasible,
                  "cannot place goal point " + std::to_string(i));
    }
  }
  return goals;
}

ShapeKind pick_kind(SceneType scene, std::size_t placed, std::mt19937_64& rng,
                    bool spheres_fit) {
  switch (scene) {
    case SceneType::kPillar: return ShapeKind::kBox;
    case SceneType::kCylinder: return ShapeKind::kCylinder;
    case SceneType::kMixed: break;
  }
  // The first placements cover every kind so a mixed map is always mixed.
  const int kinds = spheres_fit ? 3 : 2;
  if (placed < static_cast<std::size_t>(kinds)) {
    return static_cast<ShapeKind>(placed);
  }
  std::uniform_int_distribution<int> pick(0, kinds - 1);
  return static_cast<ShapeKind>(pick(rng));
}

}  // namespace

const char* to_string(SceneType type) {
  switch (type) {
    case SceneType::kPillar: return "PillarScene";
    case SceneType::kCylinder: return "CylinderScene";
    case SceneType::kMixed: return "MixedScene";
  }
  return "?";
}

const char* to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::kBox: return "Box";
    case ShapeKind::kCylinder: return "Cylinder";
    case ShapeKind::kSphere: return "Sphere";
  }
  return "?";
}

SceneType scene_type_from_string(const std::string& name) {
  if (name == "PillarScene" || name == "pillar" || name == "scene-1") return SceneType::kPillar;
  if (name == "CylinderScene" || name == "cylinder" || name == "scene-2") return SceneType::kCylinder;
  if (name == "MixedScene" || name == "mixed" || name == "scene-3") return SceneType::kMixed;
  throw Error(ErrorCode::kInvalidSpec, "unknown scene type '" + name + "'");
}

ShapeKind shape_kind_from_string(const std::string& name) {
  if (name == "Box") return ShapeKind::kBox;
  if (name == "Cylinder") return ShapeKind::kCylinder;
  if (name == "Sphere") return ShapeKind::kSphere;
  throw Error(ErrorCode::kInvalidSpec, "unknown shape '" + name + "'");
}

void validate(const ScenarioSpec& spec) {
  if (!(spec.density >= 0.0 && spec.density <= 0.8)) {
    throw Error(ErrorCode::kInvalidSpec, "density must lie in [0, 0.8]");
  }
  if (!(spec.arena_x > 0.0) || !(spec.arena_y > 0.0)) {
    throw Error(ErrorCode::kInvalidSpec, "arena dimensions must be positive");
  }
  if (!(spec.altitude_max > 0.0)) {
    throw Error(ErrorCode::kInvalidSpec, "altitude_max must be positive");
  }
  if (spec.target_count <= 0) {
    throw Error(ErrorCode::kInvalidSpec, "target_count must be positive");
  }
}

double signed_distance(const Obstacle& o, const Vec3& p) {
  switch (o.shape) {
    case ShapeKind::kBox: {
      const double qx = std::abs(p.x - o.center.x) - o.half_extents.x;
      const double qy = std::abs(p.y - o.center.y) - o.half_extents.y;
      const double qz = std::abs(p.z - o.center.z) - o.half_extents.z;
      const double outside = std::sqrt(std::max(qx, 0.0) * std::max(qx, 0.0) +
                                       std::max(qy, 0.0) * std::max(qy, 0.0) +
                                       std::max(qz, 0.0) * std::max(qz, 0.0));
      return outside + std::min(std::max({qx, qy, qz}), 0.0);
    }
    case ShapeKind::kCylinder: {
      const double radial =
          std::hypot(p.x - o.center.x, p.y - o.center.y) - o.radius;
      const double axial = std::abs(p.z - o.center.z) - o.half_height;
      const double outside = std::hypot(std::max(radial, 0.0), std::max(axial, 0.0));
      return outside + std::min(std::max(radial, axial), 0.0);
    }
    case ShapeKind::kSphere:
      return distance(p, o.center) - o.radius;
  }
  return 0.0;
}

bool footprint_contains(const Obstacle& o, double x, double y) {
  if (o.shape == ShapeKind::kBox) {
    return std::abs(x - o.center.x) <= o.half_extents.x &&
           std::abs(y - o.center.y) <= o.half_extents.y;
  }
  const double dx = x - o.center.x;
  const double dy = y - o.center.y;
  return dx * dx + dy * dy <= o.radius * o.radius;
}

double footprint_area(const Obstacle& o) {
  if (o.shape == ShapeKind::kBox) {
    return 4.0 * o.half_extents.x * o.half_extents.y;
  }
  return std::numbers::pi * o.radius * o.radius;
}

std::string make_scenario_id(const ScenarioSpec& spec) {
  std::ostringstream id;
  switch (spec.scene_type) {
    case SceneType::kPillar: id << "pillar"; break;
    case SceneType::kCylinder: id << "cylinder"; break;
    case SceneType::kMixed: id << "mixed"; break;
  }
  id << "-d" << std::llround(spec.density * 100.0) << "-s" << spec.seed;
  const ScenarioSpec defaults;
  if (spec.arena_x != defaults.arena_x || spec.arena_y != defaults.arena_y ||
      spec.altitude_max != defaults.altitude_max) {
    id << "-a" << spec.arena_x << "x" << spec.arena_y << "x" << spec.altitude_max;
  }
  if (spec.target_count != defaults.target_count) {
    id << "-m" << spec.target_count;
  }
  return id.str();
}

ScenarioMap generate_scenario(const ScenarioSpec& spec) {
  validate(spec);
  ScenarioMap map;
  map.spec = spec;
  map.scenario_id = make_scenario_id(spec);

  std::mt19937_64 rng(spec.seed);
  map.goal_points = reserve_points(spec, rng, map.spawn_points);
  if (spec.density == 0.0) {
    return map;
  }

  std::vector<Vec3> reserved = map.spawn_points;
  reserved.insert(reserved.end(), map.goal_points.begin(), map.goal_points.end());

  const double arena_area = spec.arena_x * spec.arena_y;
  const double target = spec.density * arena_area;
  const double target_lo = target * (1.0 - kCoverageBand);
  const double target_hi = target * (1.0 + kCoverageBand);
  const double max_size = std::min(2.5, 0.125 * std::min(spec.arena_x, spec.arena_y));
  const double min_size = std::min(0.5, max_size);
  const bool overlap_scene = spec.scene_type == SceneType::kMixed;
  const bool spheres_fit = spec.altitude_max >= 2.0 * min_size;

  CoverageRaster raster(spec.arena_x, spec.arena_y);
  double covered = 0.0;
  double size_cap = max_size;
  int failures = 0;
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  for (int attempt = 0; attempt < kObstacleAttempts && covered < target_lo; ++attempt) {
    if (failures >= kShrinkAfter && size_cap > min_size) {
      size_cap = std::max(min_size, size_cap * 0.85);
      failures = 0;
    }
    const ShapeKind kind = pick_kind(spec.scene_type, map.obstacles.size(), rng, spheres_fit);
    auto sample_size = [&] { return min_size + (size_cap - min_size) * unit(rng); };

    Obstacle o;
    o.shape = kind;
    if (kind == ShapeKind::kBox) {
      o.half_extents = {sample_size(), sample_size(), spec.altitude_max / 2.0};
    } else {
      o.radius = sample_size();
    }
    // Shrink toward the remaining budget so the last obstacles cannot overshoot.
    const double allowed = target_hi - covered;
    const double area = footprint_area(o);
    if (area > allowed) {
      const double scale = std::sqrt(allowed / area);
      o.half_extents.x *= scale;
      o.half_extents.y *= scale;
      o.radius *= scale;
      if ((kind == ShapeKind::kBox &&
           std::min(o.half_extents.x, o.half_extents.y) < min_size * 0.5) ||
          (kind != ShapeKind::kBox && o.radius < min_size * 0.5)) {
        ++failures;
        continue;
      }
    }

    const double hx = kind == ShapeKind::kBox ? o.half_extents.x : o.radius;
    const double hy = kind == ShapeKind::kBox ? o.half_extents.y : o.radius;
    o.center.x = hx + (spec.arena_x - 2.0 * hx) * unit(rng);
    o.center.y = hy + (spec.arena_y - 2.0 * hy) * unit(rng);
    switch (kind) {
      case ShapeKind::kBox:
        o.center.z = spec.altitude_max / 2.0;
        break;
      case ShapeKind::kCylinder:
        if (overlap_scene) {
          const double height = spec.altitude_max * (0.3 + 0.6 * unit(rng));
          o.half_height = height / 2.0;
          o.center.z = o.half_height;
        } else {
          o.half_height = spec.altitude_max / 2.0;
          o.center.z = spec.altitude_max / 2.0;
        }
        break;
      case ShapeKind::kSphere: {
        const double r = std::min(o.radius, spec.altitude_max / 2.0);
        o.radius = r;
        o.center.z = r + (spec.altitude_max - 2.0 * r) * unit(rng);
        break;
      }
    }

    const bool clear_of_points = std::all_of(
        reserved.begin(), reserved.end(),
        [&](const Vec3& p) { return signed_distance(o, p) > kKeepOut; });
    if (!clear_of_points) {
      ++failures;
      continue;
    }
    const bool o_partial = overlap_scene && !is_full_height(o, spec.altitude_max);
    const bool collides = std::any_of(
        map.obstacles.begin(), map.obstacles.end(), [&](const Obstacle& other) {
          const bool both_partial =
              o_partial && !is_full_height(other, spec.altitude_max);
          return !both_partial && footprints_overlap(o, other);
        });
    if (collides) {
      ++failures;
      continue;
    }
    const double gain = overlap_scene ? raster.increment(o) : footprint_area(o);
    if (covered + gain > target_hi || gain <= 0.0) {
      ++failures;
      continue;
    }
    raster.add(o);
    covered += gain;
    map.obstacles.push_back(o);
    failures = 0;
  }

  if (covered < target_lo) {
    std::ostringstream msg;
    msg << "reached occupancy " << covered / arena_area << " of requested "
        << spec.density << " within the placement budget";
    throw Error(ErrorCode::kDensityInfeasible, msg.str());
  }
  return map;
}

OccupancyEstimate occupancy_fraction(const ScenarioMap& map, std::uint64_t samples,
                                     std::uint64_t sample_seed) {
  if (samples < 10000) {
    throw Error(ErrorCode::kInvalidSpec, "occupancy_fraction needs at least 10^4 samples");
  }
  const double ax = map.spec.arena_x;
  const double ay = map.spec.arena_y;
  // Bucket grid so each sample only tests nearby footprints.
  const int nx = std::max(1, static_cast<int>(ax / 2.5));
  const int ny = std::max(1, static_cast<int>(ay / 2.5));
  const double cx = ax / nx;
  const double cy = ay / ny;
  std::vector<std::vector<std::size_t>> buckets(static_cast<std::size_t>(nx) * ny);
  for (std::size_t k = 0; k < map.obstacles.size(); ++k) {
    const FootprintBounds b = bounds_of(map.obstacles[k]);
    const int i0 = std::clamp(static_cast<int>(std::floor(b.x0 / cx)), 0, nx - 1);
    const int i1 = std::clamp(static_cast<int>(std::floor(b.x1 / cx)), 0, nx - 1);
    const int j0 = std::clamp(static_cast<int>(std::floor(b.y0 / cy)), 0, ny - 1);
    const int j1 = std::clamp(static_cast<int>(std::floor(b.y1 / cy)), 0, ny - 1);
    for (int j = j0; j <= j1; ++j) {
      for (int i = i0; i <= i1; ++i) {
        buckets[static_cast<std::size_t>(j) * nx + i].push_back(k);
      }
    }
  }

  std::mt19937_64 rng(sample_seed);
  std::uniform_real_distribution<double> ux(0.0, ax);
  std::uniform_real_distribution<double> uy(0.0, ay);
  std::uint64_t hits = 0;
  for (std::uint64_t s = 0; s < samples; ++s) {
    const double x = ux(rng);
    const double y = uy(rng);
    const int i = std::min(nx - 1, static_cast<int>(x / cx));
    const int j = std::min(ny - 1, static_cast<int>(y / cy));
    for (std::size_t k : buckets[static_cast<std::size_t>(j) * nx + i]) {
      if (footprint_contains(map.obstacles[k], x, y)) {
        ++hits;
        break;
      }
    }
  }
  OccupancyEstimate est;
  est.fraction = static_cast<double>(hits) / static_cast<double>(samples);
  est.standard_error =
      std::sqrt(est.fraction * (1.0 - est.fraction) / static_cast<double>(samples));
  return est;
}

namespace {

json vec_to_json(const Vec3& v) { return json::array({v.x, v.y, v.z}); }

Vec3 vec_from_json(const json& j) {
  if (!j.is_array() || j.size() != 3) {
    throw CorruptFileError(0, "expected a 3-vector, got " + j.dump());
  }
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

}  // namespace

std::string scenario_to_text(const ScenarioMap& map) {
  json doc;
  doc["format_version"] = kScenarioFormatVersion;
  doc["scenario_id"] = map.scenario_id;
  doc["spec"] = {
      {"scene_type", to_string(map.spec.scene_type)},
      {"density", map.spec.density},
      {"arena_x", map.spec.arena_x},
      {"arena_y", map.spec.arena_y},
      {"altitude_max", map.spec.altitude_max},
      {"seed", map.spec.seed},
      {"target_count", map.spec.target_count},
  };
  json obstacles = json::array();
  for (const Obstacle& o : map.obstacles) {
    obstacles.push_back({{"shape", to_string(o.shape)},
                         {"center", vec_to_json(o.center)},
                         {"half_extents", vec_to_json(o.half_extents)},
                         {"radius", o.radius},
                         {"half_height", o.half_height}});
  }
  doc["obstacles"] = std::move(obstacles);
  json spawns = json::array();
  for (const Vec3& p : map.spawn_points) spawns.push_back(vec_to_json(p));
  json goals = json::array();
  for (const Vec3& p : map.goal_points) goals.push_back(vec_to_json(p));
  doc["spawn_points"] = std::move(spawns);
  doc["goal_points"] = std::move(goals);
  return doc.dump(2) + "\n";
}

ScenarioMap scenario_from_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw CorruptFileError(e.byte, "scenario file is not a valid document");
  }
  try {
    const int version = doc.at("format_version").get<int>();
    if (version != kScenarioFormatVersion) {
      throw Error(ErrorCode::kFormatVersionMismatch,
                  "scenario format_version " + std::to_string(version) +
                      ", expected " + std::to_string(kScenarioFormatVersion));
    }
    ScenarioMap map;
    map.scenario_id = doc.at("scenario_id").get<std::string>();
    const json& s = doc.at("spec");
    map.spec.scene_type = scene_type_from_string(s.at("scene_type").get<std::string>());
    map.spec.density = s.at("density").get<double>();
    map.spec.arena_x = s.at("arena_x").get<double>();
    map.spec.arena_y = s.at("arena_y").get<double>();
    map.spec.altitude_max = s.at("altitude_max").get<double>();
    map.spec.seed = s.at("seed").get<std::uint64_t>();
    map.spec.target_count = s.at("target_count").get<int>();
    for (const json& o : doc.at("obstacles")) {
      Obstacle ob;
      ob.shape = shape_kind_from_string(o.at("shape").get<std::string>());
      ob.center = vec_from_json(o.at("center"));
      ob.half_extents = vec_from_json(o.at("half_extents"));
      ob.radius = o.at("radius").get<double>();
      ob.half_height = o.at("half_height").get<double>();
      map.obstacles.push_back(ob);
    }
    for (const json& p : doc.at("spawn_points")) map.spawn_points.push_back(vec_from_json(p));
    for (const json& p : doc.at("goal_points")) map.goal_points.push_back(vec_from_json(p));
    return map;
  } catch (const json::exception& e) {
    // Structurally valid text with missing or mistyped fields.
    throw CorruptFileError(text.size(), std::string("malformed scenario: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kInvalidSpec) {
      throw CorruptFileError(text.size(), e.what());
    }
    throw;
  }
}

void save_scenario(const ScenarioMap& map, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error(ErrorCode::kIoError, "cannot open " + path.string() + " for writing");
  }
  out << scenario_to_text(map);
  if (!out) {
    throw Error(ErrorCode::kIoError, "failed writing " + path.string());
  }
}

ScenarioMap load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return scenario_from_text(buffer.str());
}

}  // namespace dtppo
