#include "dtppo/world.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "dtppo/errors.hpp"

namespace dtppo {

namespace {

constexpr int kSweepSamples = 16;
constexpr int kBisectionSteps = 60;

Vec3 clamp_to_arena(const Vec3& p, const ScenarioSpec& spec) {
  return {std::clamp(p.x, 0.0, spec.arena_x), std::clamp(p.y, 0.0, spec.arena_y),
          std::clamp(p.z, 0.0, spec.altitude_max)};
}

double wrap_angle(double a) {
  while (a > std::numbers::pi) a -= 2.0 * std::numbers::pi;
  while (a < -std::numbers::pi) a += 2.0 * std::numbers::pi;
  return a;
}

struct SweepResult {
  Vec3 position;
  bool blocked = false;
};

// Moves from a collision-free `from` toward `to`, stopping at the first
// obstacle contact. The returned point always has clearance >= 0.
SweepResult sweep(const Vec3& from, const Vec3& to, const ScenarioMap& map) {
  if (map.obstacles.empty() || clearance(to, map) >= 0.0) {
    return {to, false};
  }
  const Vec3 delta = to - from;
  double lo = 0.0;
  double hi = 1.0;
  for (int k = 1; k <= kSweepSamples; ++k) {
    const double t = static_cast<double>(k) / kSweepSamples;
    if (clearance(from + delta * t, map) < 0.0) {
      hi = t;
      break;
    }
    lo = t;
  }
  for (int it = 0; it < kBisectionSteps; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (clearance(from + delta * mid, map) >= 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return {from + delta * lo, true};
}

}  // namespace

std::array<double, kStateDim> UavState::as_array() const {
  return {position.x, position.y, position.z,
          euler.x, euler.y, euler.z,
          velocity.x, velocity.y, velocity.z,
          angular_velocity.x, angular_velocity.y, angular_velocity.z};
}

std::array<double, kActionDim> clamp_action(const ControlAction& action) {
  std::array<double, kActionDim> out{};
  for (int k = 0; k < kActionDim; ++k) {
    out[k] = std::clamp(action.raw[k], -1.0, 1.0);
  }
  return out;
}

bool WorldState::all_done() const {
  return std::all_of(done.begin(), done.end(), [](std::uint8_t d) { return d != 0; });
}

double transfer_reward(const Vec3& x_prev, const Vec3& x_now, const Vec3& x_target,
                       bool literal_sign) {
  const double d_prev = distance(x_target, x_prev);
  const double d_now = distance(x_target, x_now);
  const double progress = literal_sign ? d_now - d_prev : d_prev - d_now;
  return progress + std::max(0.0, 2.0 - d_now * d_now);
}

RewardBreakdown compute_reward(const Vec3& x_prev, const Vec3& x_now,
                               const Vec3& x_target, bool collided, double clear,
                               const RewardConfig& cfg) {
  RewardBreakdown r;
  r.r_trans = transfer_reward(x_prev, x_now, x_target, cfg.literal_eq2_sign);
  r.r_col_applied = collided ? cfg.r_col : 0.0;
  r.r_free_applied = clear > cfg.clearance_free ? cfg.r_free : 0.0;
  r.r_total = cfg.lambda_trans * r.r_trans + cfg.lambda_col * r.r_col_applied +
              cfg.lambda_free * r.r_free_applied;
  return r;
}

double clearance(const Vec3& position, const ScenarioMap& map) {
  double best = std::numeric_limits<double>::infinity();
  for (const Obstacle& o : map.obstacles) {
    best = std::min(best, signed_distance(o, position));
  }
  return best;
}

WorldState reset(std::shared_ptr<const ScenarioMap> map, int agents, std::uint64_t seed) {
  if (agents < 0 || static_cast<std::size_t>(agents) > map->spawn_points.size() ||
      static_cast<std::size_t>(agents) > map->goal_points.size()) {
    throw Error(ErrorCode::kTooManyAgents,
                std::to_string(agents) + " agents requested, map '" + map->scenario_id +
                    "' has " + std::to_string(map->spawn_points.size()) +
                    " spawn points");
  }
  WorldState ws;
  ws.map = std::move(map);
  ws.seed = seed;
  ws.uavs.resize(agents);
  ws.goals.resize(agents);
  for (int i = 0; i < agents; ++i) {
    ws.uavs[i].position = ws.map->spawn_points[i];
    ws.goals[i] = ws.map->goal_points[i];
  }
  ws.done.assign(agents, 0);
  ws.reached_goal.assign(agents, 0);
  return ws;
}

StepResult step(WorldState& ws, std::span<const ControlAction> actions,
                const WorldConfig& cfg) {
  const std::size_t m = ws.agent_count();
  if (actions.size() != m) {
    throw Error(ErrorCode::kDimensionMismatch,
                "expected " + std::to_string(m) + " actions, got " +
                    std::to_string(actions.size()));
  }
  if (ws.all_done()) {
    throw Error(ErrorCode::kEpisodeFinished, "every UAV is already done");
  }
  for (std::size_t i = 0; i < m; ++i) {
    if (ws.done[i]) continue;
    for (double v : actions[i].raw) {
      if (!std::isfinite(v)) {
        throw Error(ErrorCode::kNonFiniteAction,
                    "agent " + std::to_string(i) + " sent a non-finite action");
      }
    }
  }

  const ScenarioMap& map = *ws.map;
  StepResult result;
  result.rewards.resize(m);
  result.collided.assign(m, 0);
  result.acted.assign(m, 0);

  std::vector<Vec3> previous(m);
  std::vector<Vec3> commanded(m);
  for (std::size_t i = 0; i < m; ++i) {
    previous[i] = ws.uavs[i].position;
    commanded[i] = Vec3{};
    if (ws.done[i]) continue;
    result.acted[i] = 1;
    const auto a = clamp_action(actions[i]);
    const Vec3 direction{a[0], a[1], a[2]};
    const double length = norm(direction);
    Vec3 velocity;
    if (length > 1e-12) {
      velocity = direction * (cfg.v_max * (a[3] + 1.0) / 2.0 / length);
    }
    commanded[i] = velocity;
    const Vec3 target = clamp_to_arena(previous[i] + velocity * cfg.dt, map.spec);
    const SweepResult moved = sweep(previous[i], target, map);
    ws.uavs[i].position = moved.position;
    result.collided[i] = moved.blocked ? 1 : 0;
  }

  if (cfg.uav_collisions) {
    // Revert pairs that came within two collision radii until none remain.
    const double min_sep = 2.0 * cfg.uav_collision_radius;
    bool changed = true;
    while (changed) {
      changed = false;
      for (std::size_t i = 0; i < m; ++i) {
        if (!result.acted[i]) continue;
        for (std::size_t j = 0; j < m; ++j) {
          if (j == i || ws.done[j]) continue;
          if (distance(ws.uavs[i].position, ws.uavs[j].position) < min_sep) {
            for (std::size_t k : {i, j}) {
              if (result.acted[k] && ws.uavs[k].position != previous[k]) {
                ws.uavs[k].position = previous[k];
                result.collided[k] = 1;
                changed = true;
              }
            }
          }
        }
      }
    }
  }

  for (std::size_t i = 0; i < m; ++i) {
    if (!result.acted[i]) continue;
    UavState& uav = ws.uavs[i];
    const Vec3 displacement = uav.position - previous[i];
    uav.velocity = result.collided[i] ? Vec3{} : displacement * (1.0 / cfg.dt);
    const double old_yaw = uav.euler.z;
    if (std::hypot(commanded[i].x, commanded[i].y) > 1e-9 && !result.collided[i]) {
      uav.euler.z = std::atan2(commanded[i].y, commanded[i].x);
    }
    uav.euler.x = 0.0;
    uav.euler.y = 0.0;
    uav.angular_velocity = {0.0, 0.0, wrap_angle(uav.euler.z - old_yaw) / cfg.dt};

    result.rewards[i] = compute_reward(previous[i], uav.position, ws.goals[i],
                                       result.collided[i] != 0,
                                       clearance(uav.position, map), cfg.reward);
    if (distance(uav.position, ws.goals[i]) < cfg.d_success) {
      ws.done[i] = 1;
      ws.reached_goal[i] = 1;
    }
  }

  ++ws.step_index;
  if (ws.step_index >= cfg.max_steps) {
    std::fill(ws.done.begin(), ws.done.end(), 1);
  }
  result.done = ws.done;
  return result;
}

}  // namespace dtppo
