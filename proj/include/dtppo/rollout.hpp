#pragma once

// Episode stepping shared by training rollouts and evaluation, plus the
// on-policy buffer.

#include <array>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dtppo/encoder.hpp"
#include "dtppo/observation.hpp"
#include "dtppo/world.hpp"

namespace dtppo {

/// Inputs the encoder needs for one agent at the current state.
struct AgentInput {
  std::vector<double> tokens;    // slots * token_width
  std::vector<double> obs_self;  // obs_dim
};

/// Per-step reward components of one agent, kept for metric replay.
struct StepRewardLog {
  std::uint8_t acted = 0;
  std::uint8_t collided = 0;
  RewardBreakdown reward;
};

/// One episode on one map: world state plus the per-agent action histories
/// and previous action/reward used to build MDP tokens.
class EpisodeRunner {
 public:
  EpisodeRunner(std::shared_ptr<const ScenarioMap> map, int agents, const WorldConfig& world,
                const ObsConfig& obs, std::uint64_t seed);

  const WorldState& world() const { return world_; }
  bool finished() const { return world_.all_done(); }
  std::vector<int> live_agents() const;
  AgentInput input(int agent) const;

  /// Applies one joint action. Entries for finished agents are ignored.
  StepResult step(std::span<const ControlAction> actions);

  // Per-agent episode sums of the raw reward components.
  const std::vector<double>& transfer_sum() const { return transfer_sum_; }
  const std::vector<double>& collision_count() const { return collision_count_; }
  const std::vector<double>& free_sum() const { return free_sum_; }
  /// log()[t][i] describes agent i at step t.
  const std::vector<std::vector<StepRewardLog>>& log() const { return log_; }

 private:
  WorldState world_;
  WorldConfig world_cfg_;
  ObsConfig obs_cfg_;
  std::vector<ActionHistory> histories_;
  std::vector<std::array<double, kActionDim>> prev_actions_;
  std::vector<double> prev_rewards_;
  std::vector<double> transfer_sum_;
  std::vector<double> collision_count_;
  std::vector<double> free_sum_;
  std::vector<std::vector<StepRewardLog>> log_;
};

enum class ActionMode { kSample, kGreedy };

struct PolicyOutput {
  std::vector<ControlAction> actions;  // one per queried agent
  std::vector<double> log_probs;
  std::vector<double> values;
  ad::Matrix embeddings;  // temporal embedding (policy input for plain_ppo), one row per agent
};

/// Runs the policy for live agents during an episode. Caches each agent's
/// spatial embeddings so a step costs one spatial row plus one temporal
/// window per agent.
class PolicyStepper {
 public:
  PolicyStepper(const DualTransformer& model, const ad::ParamStore& params, int agents);

  void reset();

  /// With `commit` the new spatial rows join the agents' windows.
  PolicyOutput act(std::span<const int> agents, std::span<const AgentInput> inputs,
                   ActionMode mode, std::mt19937_64* rng, bool commit = true);

 private:
  const DualTransformer& model_;
  const ad::ParamStore& params_;
  std::vector<std::vector<std::vector<double>>> cache_;  // agent -> rows of width d
};

struct StepRecord {
  int scenario = 0;
  int agent = 0;
  std::int64_t episode = 0;  // update-local episode ordinal within the scenario
  int step = 0;
  std::int64_t prev = -1;    // previous record of the same agent-episode
  std::vector<double> tokens;
  std::vector<double> obs_self;
  std::array<double, kActionDim> action{};  // raw sample
  double log_prob = 0.0;
  double value = 0.0;
  double reward = 0.0;
  bool terminal = false;   // reached the goal
  bool truncated = false;  // cut by max_steps or the rollout horizon
  double bootstrap_value = 0.0;
  double advantage = 0.0;
  double ret = 0.0;
};

struct EpisodeStats {
  std::string scenario_id;
  int scenario = 0;
  std::int64_t episode = 0;
  int steps = 0;
  std::vector<double> transfer;     // per agent
  std::vector<double> collisions;   // per agent
  std::vector<double> free_space;   // per agent
  std::vector<std::uint8_t> reached;

  double mean_transfer() const;
  double mean_collisions() const;
  double mean_free_space() const;
  double success_rate() const;
};

struct RolloutBatch {
  std::vector<StepRecord> steps;
  std::vector<EpisodeStats> episodes;  // completed episodes only
  std::vector<int> env_steps;          // per scenario

  std::size_t size() const { return steps.size(); }
};

struct RolloutSettings {
  int agents = 8;
  int horizon = 512;  // environment steps per scenario
  WorldConfig world;
  bool parallel = false;
};

/// Collects `horizon` environment steps on every map with sampled actions.
/// Each scenario's stream depends only on (`seed`, scenario index), so
/// parallel and sequential collection give identical batches.
RolloutBatch collect_rollouts(std::span<const std::shared_ptr<const ScenarioMap>> maps,
                              const DualTransformer& model, const ad::ParamStore& params,
                              const RolloutSettings& settings, std::uint64_t seed);

/// splitmix64 finalizer, used to derive independent stream seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace dtppo
