#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <span>
#include <vector>

#include "dtppo/world.hpp"

namespace dtppo {

struct ObsConfig {
  int history = 15;             // Δt
  int neighbors = 4;            // n
  double sensing_range = 10.0;  // meters
  // Experimental horizontal range sensor appended to the observation.
  bool range_sensor = false;
  int rays = 8;

  int obs_dim() const { return kStateDim + kActionDim * history + (range_sensor ? rays : 0); }
  int slots() const { return neighbors + 1; }
  int token_width() const { return obs_dim() + 1 + kActionDim + 1 + 1; }
};

void validate(const ObsConfig& cfg);

using Observation = std::vector<double>;

/// Last Δt applied actions of one agent, oldest first.
class ActionHistory {
 public:
  explicit ActionHistory(int capacity = 15) : capacity_(capacity) {}

  void push(const std::array<double, kActionDim>& action);
  void clear() { entries_.clear(); }
  std::size_t size() const { return entries_.size(); }
  int capacity() const { return capacity_; }
  const std::deque<std::array<double, kActionDim>>& entries() const { return entries_; }

 private:
  int capacity_;
  std::deque<std::array<double, kActionDim>> entries_;
};

struct NeighborSet {
  std::vector<int> ids;              // ascending distance, ties by ascending id
  std::vector<std::uint8_t> presence;  // n flags

  friend bool operator==(const NeighborSet&, const NeighborSet&) = default;
};

/// Up to n closest agents within sensing range, excluding `i` and agents with
/// `live[j] == 0` (an empty `live` span means every agent is live).
NeighborSet nearest_neighbors(std::span<const Vec3> positions, int i, const ObsConfig& cfg,
                              std::span<const std::uint8_t> live = {});

/// State followed by the action history block, zero-filled before the
/// episode start. `map` is only consulted when the range sensor is enabled.
Observation build_observation(const UavState& state, const ActionHistory& history,
                              const ObsConfig& cfg, const ScenarioMap* map = nullptr);

/// Distances along `cfg.rays` horizontal rays, capped at the sensing range.
std::vector<double> range_scan(const Vec3& origin, const ScenarioMap& map,
                               const ObsConfig& cfg);

// One drone's (observation, previous action, previous reward) triple with
// the presence indicator appended to the observation and action parts.
struct MdpFeature {
  std::vector<double> obs_aug;
  std::array<double, kActionDim + 1> act_aug{};
  double rew = 0.0;

  friend bool operator==(const MdpFeature&, const MdpFeature&) = default;
};

MdpFeature padded_feature(const ObsConfig& cfg);

/// Self token in slot 0, neighbors in NeighborSet order, zero padding after.
/// `prev_actions` and `prev_rewards` are indexed by agent id.
std::vector<MdpFeature> build_mdp_tokens(int i, const WorldState& world,
                                         std::span<const ActionHistory> histories,
                                         std::span<const std::array<double, kActionDim>> prev_actions,
                                         std::span<const double> prev_rewards,
                                         const ObsConfig& cfg);

/// Flattens tokens into the row layout the encoder consumes:
/// per slot [obs_aug | act_aug | rew].
void append_token_row(std::span<const MdpFeature> tokens, std::vector<double>& out);

}  // namespace dtppo
