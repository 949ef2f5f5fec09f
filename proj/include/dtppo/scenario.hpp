#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dtppo/geometry.hpp"

namespace dtppo {

enum class SceneType { kPillar, kCylinder, kMixed };
enum class ShapeKind { kBox, kCylinder, kSphere };

const char* to_string(SceneType type);
const char* to_string(ShapeKind kind);
SceneType scene_type_from_string(const std::string& name);
ShapeKind shape_kind_from_string(const std::string& name);

struct ScenarioSpec {
  SceneType scene_type = SceneType::kPillar;
  double density = 0.1;  // ground-plane footprint fraction
  double arena_x = 40.0;
  double arena_y = 40.0;
  double altitude_max = 30.0;
  std::uint64_t seed = 0;
  int target_count = 8;

  friend bool operator==(const ScenarioSpec&, const ScenarioSpec&) = default;
};

// Throws Error(kInvalidSpec) when the spec violates its invariants.
void validate(const ScenarioSpec& spec);

// Axis-aligned box, vertical cylinder or sphere. Unused extent fields are 0.
struct Obstacle {
  ShapeKind shape = ShapeKind::kBox;
  Vec3 center;
  Vec3 half_extents;         // Box
  double radius = 0.0;       // Cylinder, Sphere
  double half_height = 0.0;  // Cylinder

  friend bool operator==(const Obstacle&, const Obstacle&) = default;
};

/// Exact signed distance from `p` to the obstacle surface, negative inside.
double signed_distance(const Obstacle& obstacle, const Vec3& p);

/// True when the ground-plane point (x, y) lies in the obstacle footprint.
bool footprint_contains(const Obstacle& obstacle, double x, double y);

double footprint_area(const Obstacle& obstacle);

struct ScenarioMap {
  ScenarioSpec spec;
  std::vector<Obstacle> obstacles;
  std::vector<Vec3> spawn_points;
  std::vector<Vec3> goal_points;
  std::string scenario_id;

  friend bool operator==(const ScenarioMap&, const ScenarioMap&) = default;
};

/// Canonical id, e.g. "pillar-d10-s42".
std::string make_scenario_id(const ScenarioSpec& spec);

/// Deterministic in `spec` (including its seed). Throws
/// Error(kDensityInfeasible) when placement exhausts its retry budget.
ScenarioMap generate_scenario(const ScenarioSpec& spec);

struct OccupancyEstimate {
  double fraction = 0.0;
  double standard_error = 0.0;
};

/// Monte-Carlo estimate of the ground-plane fraction covered by footprints.
/// `samples` must be at least 10^4.
OccupancyEstimate occupancy_fraction(const ScenarioMap& map,
                                     std::uint64_t samples,
                                     std::uint64_t sample_seed = 0x5eed);

inline constexpr int kScenarioFormatVersion = 1;

void save_scenario(const ScenarioMap& map, const std::filesystem::path& path);
ScenarioMap load_scenario(const std::filesystem::path& path);

std::string scenario_to_text(const ScenarioMap& map);
ScenarioMap scenario_from_text(const std::string& text);

}  // namespace dtppo
