#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "dtppo/geometry.hpp"
#include "dtppo/scenario.hpp"

namespace dtppo {

inline constexpr int kStateDim = 12;
inline constexpr int kActionDim = 4;

struct UavState {
  Vec3 position;
  Vec3 euler;             // roll, pitch, yaw
  Vec3 velocity;
  Vec3 angular_velocity;

  std::array<double, kStateDim> as_array() const;

  friend bool operator==(const UavState&, const UavState&) = default;
};

// Raw policy output [dx, dy, dz, v_M]. Channels are clamped to [-1, 1] on use.
struct ControlAction {
  std::array<double, kActionDim> raw{};

  friend bool operator==(const ControlAction&, const ControlAction&) = default;
};

std::array<double, kActionDim> clamp_action(const ControlAction& action);

struct RewardConfig {
  double lambda_trans = 0.45;
  double lambda_col = 0.30;
  double lambda_free = 0.25;
  double r_col = -1.0;
  double r_free = 0.04;
  double clearance_free = 0.5;
  // Use the distance-change term with the sign as printed (d_now - d_prev).
  bool literal_eq2_sign = false;
};

struct WorldConfig {
  double dt = 0.1;
  double v_max = 3.0;
  double d_success = 1.0;
  int max_steps = 400;
  bool uav_collisions = false;
  double uav_collision_radius = 0.3;
  RewardConfig reward;
};

struct RewardBreakdown {
  double r_trans = 0.0;
  double r_col_applied = 0.0;
  double r_free_applied = 0.0;
  double r_total = 0.0;

  friend bool operator==(const RewardBreakdown&, const RewardBreakdown&) = default;
};

struct WorldState {
  std::shared_ptr<const ScenarioMap> map;
  std::vector<UavState> uavs;
  std::vector<Vec3> goals;
  int step_index = 0;
  std::vector<std::uint8_t> done;
  std::vector<std::uint8_t> reached_goal;
  // Episode seed. The kinematics are deterministic, so it is only recorded.
  std::uint64_t seed = 0;

  std::size_t agent_count() const { return uavs.size(); }
  bool all_done() const;

  friend bool operator==(const WorldState&, const WorldState&) = default;
};

struct StepResult {
  std::vector<RewardBreakdown> rewards;
  std::vector<std::uint8_t> done;
  std::vector<std::uint8_t> collided;
  // Agents that were live (acted) during this step.
  std::vector<std::uint8_t> acted;
};

/// Distance-change term plus the near-target bonus max(0, 2 - d_now^2).
/// Approaching the target makes the first term positive unless `literal_sign`.
double transfer_reward(const Vec3& x_prev, const Vec3& x_now, const Vec3& x_target,
                       bool literal_sign = false);

/// Weighted reward for one agent-step. `collided` marks a blocked move and
/// `clearance` is measured at `x_now`.
RewardBreakdown compute_reward(const Vec3& x_prev, const Vec3& x_now,
                               const Vec3& x_target, bool collided, double clearance,
                               const RewardConfig& cfg);

/// Exact distance to the nearest obstacle surface (negative inside). An empty
/// map returns +infinity.
double clearance(const Vec3& position, const ScenarioMap& map);

/// UAVs start at the first `agents` spawn points with zero velocity.
WorldState reset(std::shared_ptr<const ScenarioMap> map, int agents, std::uint64_t seed);

/// Advances all live UAVs by one control period. Throws
/// Error(kDimensionMismatch) for a wrong action count, Error(kNonFiniteAction)
/// for NaN/Inf inputs and Error(kEpisodeFinished) once every UAV is done.
StepResult step(WorldState& ws, std::span<const ControlAction> actions,
                const WorldConfig& cfg);

}  // namespace dtppo
