#include "dtppo/observation.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dtppo/errors.hpp"

namespace dtppo {

void validate(const ObsConfig& cfg) {
  if (cfg.history < 1) throw Error(ErrorCode::kConfigError, "history (Δt) must be >= 1");
  if (cfg.neighbors < 0) throw Error(ErrorCode::kConfigError, "neighbors must be >= 0");
  if (!(cfg.sensing_range >= 0.0)) throw Error(ErrorCode::kConfigError, "sensing_range must be >= 0");
  if (cfg.range_sensor && cfg.rays < 1) throw Error(ErrorCode::kConfigError, "rays must be >= 1");
}

void ActionHistory::push(const std::array<double, kActionDim>& action) {
  entries_.push_back(action);
  while (entries_.size() > static_cast<std::size_t>(capacity_)) {
    entries_.pop_front();
  }
}

NeighborSet nearest_neighbors(std::span<const Vec3> positions, int i, const ObsConfig& cfg,
                              std::span<const std::uint8_t> live) {
  struct Candidate {
    double d2;
    int id;
  };
  std::vector<Candidate> candidates;
  const double range2 = cfg.sensing_range * cfg.sensing_range;
  for (int j = 0; j < static_cast<int>(positions.size()); ++j) {
    if (j == i) continue;
    if (!live.empty() && !live[j]) continue;
    const double d2 = squared_distance(positions[i], positions[j]);
    if (d2 <= range2) candidates.push_back({d2, j});
  }
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    return a.d2 != b.d2 ? a.d2 < b.d2 : a.id < b.id;
  });
  NeighborSet set;
  set.presence.assign(cfg.neighbors, 0);
  for (int k = 0; k < cfg.neighbors && k < static_cast<int>(candidates.size()); ++k) {
    set.ids.push_back(candidates[k].id);
    set.presence[k] = 1;
  }
  return set;
}

std::vector<double> range_scan(const Vec3& origin, const ScenarioMap& map,
                               const ObsConfig& cfg) {
  std::vector<double> out(cfg.rays, cfg.sensing_range);
  for (int k = 0; k < cfg.rays; ++k) {
    const double angle = 2.0 * std::numbers::pi * k / cfg.rays;
    const Vec3 dir{std::cos(angle), std::sin(angle), 0.0};
    // Sphere tracing is exact here because clearance is a true distance.
    double t = 0.0;
    for (int it = 0; it < 64 && t < cfg.sensing_range; ++it) {
      const double c = clearance(origin + dir * t, map);
      if (c < 1e-3) break;
      t += c;
    }
    out[k] = std::min(t, cfg.sensing_range);
  }
  return out;
}

Observation build_observation(const UavState& state, const ActionHistory& history,
                              const ObsConfig& cfg, const ScenarioMap* map) {
  Observation obs;
  obs.reserve(cfg.obs_dim());
  const auto s = state.as_array();
  obs.insert(obs.end(), s.begin(), s.end());
  const auto& entries = history.entries();
  const std::size_t keep = std::min<std::size_t>(entries.size(), cfg.history);
  const std::size_t missing = cfg.history - keep;
  obs.insert(obs.end(), missing * kActionDim, 0.0);
  for (std::size_t k = entries.size() - keep; k < entries.size(); ++k) {
    obs.insert(obs.end(), entries[k].begin(), entries[k].end());
  }
  if (cfg.range_sensor) {
    if (map == nullptr) {
      obs.insert(obs.end(), cfg.rays, cfg.sensing_range);
    } else {
      const auto scan = range_scan(state.position, *map, cfg);
      obs.insert(obs.end(), scan.begin(), scan.end());
    }
  }
  return obs;
}

MdpFeature padded_feature(const ObsConfig& cfg) {
  MdpFeature f;
  f.obs_aug.assign(cfg.obs_dim() + 1, 0.0);
  return f;
}

std::vector<MdpFeature> build_mdp_tokens(int i, const WorldState& world,
                                         std::span<const ActionHistory> histories,
                                         std::span<const std::array<double, kActionDim>> prev_actions,
                                         std::span<const double> prev_rewards,
                                         const ObsConfig& cfg) {
  const std::size_t m = world.agent_count();
  if (histories.size() != m || prev_actions.size() != m || prev_rewards.size() != m) {
    throw Error(ErrorCode::kDimensionMismatch, "per-agent inputs must match the agent count");
  }
  std::vector<Vec3> positions(m);
  std::vector<std::uint8_t> live(m);
  for (std::size_t j = 0; j < m; ++j) {
    positions[j] = world.uavs[j].position;
    live[j] = world.done[j] ? 0 : 1;
  }
  const NeighborSet set = nearest_neighbors(positions, i, cfg, live);

  auto feature_for = [&](int j) {
    MdpFeature f;
    f.obs_aug = build_observation(world.uavs[j], histories[j], cfg, world.map.get());
    f.obs_aug.push_back(1.0);
    for (int k = 0; k < kActionDim; ++k) f.act_aug[k] = prev_actions[j][k];
    f.act_aug[kActionDim] = 1.0;
    f.rew = prev_rewards[j];
    return f;
  };

  std::vector<MdpFeature> tokens;
  tokens.reserve(cfg.slots());
  tokens.push_back(feature_for(i));
  for (int j : set.ids) tokens.push_back(feature_for(j));
  while (tokens.size() < static_cast<std::size_t>(cfg.slots())) {
    tokens.push_back(padded_feature(cfg));
  }
  return tokens;
}

void append_token_row(std::span<const MdpFeature> tokens, std::vector<double>& out) {
  for (const MdpFeature& f : tokens) {
    out.insert(out.end(), f.obs_aug.begin(), f.obs_aug.end());
    out.insert(out.end(), f.act_aug.begin(), f.act_aug.end());
    out.push_back(f.rew);
  }
}

}  // namespace dtppo
