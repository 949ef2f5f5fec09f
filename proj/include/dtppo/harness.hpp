#pragma once

// Evaluation and experiment driver: greedy evaluation with the three reward
// metrics, metric replay from episode logs, scenario-count sweeps and
// embedding export.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "dtppo/checkpoint.hpp"
#include "dtppo/config.hpp"
#include "dtppo/rollout.hpp"

namespace dtppo {

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;  // population
};

struct EpisodeMetrics {
  std::string scenario_id;
  std::int64_t episode = 0;
  int steps = 0;
  double avg_transfer_reward = 0.0;
  double avg_collision_penalty = 0.0;  // collision count, reported positive
  double avg_free_space_reward = 0.0;
  double success_rate = 0.0;
  std::vector<double> agent_transfer;
  std::vector<double> agent_collisions;
  std::vector<double> agent_free_space;
};

struct MapMetrics {
  std::string scenario_id;
  int episodes = 0;
  MetricSummary transfer;
  MetricSummary collision;
  MetricSummary free_space;
};

struct MetricsReport {
  std::vector<EpisodeMetrics> episodes;
  std::vector<MapMetrics> maps;
  // Over every (episode, agent) value.
  MetricSummary transfer;
  MetricSummary collision;
  MetricSummary free_space;
  bool zero_shot = false;
  std::vector<std::string> train_scenarios;
  std::vector<std::string> eval_scenarios;
};

/// Raw per-step reward components of one evaluation episode.
struct EpisodeLog {
  std::string scenario_id;
  std::int64_t episode = 0;
  int agents = 0;
  std::vector<std::vector<StepRewardLog>> steps;  // steps[t][agent]
  std::vector<std::uint8_t> reached;              // per agent, at episode end
};

class ActionSource {
 public:
  virtual ~ActionSource() = default;
  virtual void begin_episode(const EpisodeRunner& runner) { (void)runner; }
  /// One action per agent; entries for finished agents are ignored.
  virtual std::vector<ControlAction> act(const EpisodeRunner& runner) = 0;
};

/// Greedy (mean-action) policy from a parameter set.
class CheckpointPolicy : public ActionSource {
 public:
  CheckpointPolicy(const DualTransformer& model, const ad::ParamStore& params, int agents);
  void begin_episode(const EpisodeRunner& runner) override;
  std::vector<ControlAction> act(const EpisodeRunner& runner) override;
  /// Agents and embeddings from the most recent act().
  const std::vector<int>& last_agents() const { return last_agents_; }
  const ad::Matrix& last_embeddings() const { return last_embeddings_; }

 private:
  const DualTransformer& model_;
  PolicyStepper stepper_;
  std::vector<int> last_agents_;
  ad::Matrix last_embeddings_;
};

/// Uniform random actions in [-1, 1]^4.
class RandomPolicy : public ActionSource {
 public:
  explicit RandomPolicy(std::uint64_t seed) : rng_(seed) {}
  std::vector<ControlAction> act(const EpisodeRunner& runner) override;

 private:
  std::mt19937_64 rng_;
};

class ScriptedPolicy : public ActionSource {
 public:
  using Fn = std::function<ControlAction(const EpisodeRunner&, int agent)>;
  explicit ScriptedPolicy(Fn fn) : fn_(std::move(fn)) {}
  std::vector<ControlAction> act(const EpisodeRunner& runner) override;

 private:
  Fn fn_;
};

struct EvalSettings {
  int agents = 8;
  int episodes = 5;
  WorldConfig world;
  ObsConfig obs;
  std::uint64_t seed = 0;
};

/// Runs `episodes` episodes on each map in order and aggregates the metrics.
MetricsReport evaluate(ActionSource& policy,
                       const std::vector<std::shared_ptr<const ScenarioMap>>& maps,
                       const EvalSettings& settings, std::vector<EpisodeLog>* logs = nullptr);

/// Evaluates a trained checkpoint on `maps` with the architecture stored in
/// it. Throws Error(kConfigMismatch) when the checkpoint does not match `cfg`
/// or a map has too few spawn points, and Error(kZeroShotViolation) in
/// zero-shot mode if an evaluation map was used for training.
MetricsReport evaluate_checkpoint(const Checkpoint& ck, const RunConfig& cfg,
                                  const std::vector<std::shared_ptr<const ScenarioMap>>& maps,
                                  int episodes, std::uint64_t seed,
                                  std::vector<EpisodeLog>* logs = nullptr);

/// Recomputes per-episode metrics and aggregates from raw logs.
MetricsReport metrics_from_logs(const std::vector<EpisodeLog>& logs);

void write_episode_logs(const std::filesystem::path& path, const std::vector<EpisodeLog>& logs);
std::vector<EpisodeLog> read_episode_logs(const std::filesystem::path& path);

std::string report_to_json(const MetricsReport& report);
/// One row per map plus an "all" row: metric means and standard deviations.
std::string report_to_csv(const MetricsReport& report);

/// Sets one named ablation ("no_spatial", "no_temporal_gru", "no_residual",
/// "plain_ppo") on top of the flags already in `cfg`. Throws
/// Error(kConflictingFlags) for an incompatible combination and
/// Error(kConfigError) for an unknown name.
ModelConfig apply_ablation(ModelConfig cfg, const std::string& flag);

/// "name rows cols" per parameter, in store order.
std::string parameter_manifest(const ad::ParamStore& params);

struct SweepRow {
  int count = 0;
  std::vector<std::string> train_scenarios;
  MetricsReport report;
};

/// Default pool of nine training maps (three scene types at 10/25/50%
/// density) and three unseen 50% evaluation maps.
std::vector<MapSource> default_sweep_pool(std::uint64_t seed);
std::vector<MapSource> default_sweep_eval(std::uint64_t seed);

/// Trains one model per count on the first `count` pool maps and evaluates
/// all of them on the shared evaluation maps. Throws
/// Error(kInsufficientMaps) if a count exceeds the pool.
std::vector<SweepRow> sweep_scenario_count(const RunConfig& base, const std::vector<int>& counts);
std::string sweep_to_csv(const std::vector<SweepRow>& rows);

struct EmbeddingTable {
  std::vector<std::string> scenario_ids;
  std::vector<int> agents;
  std::vector<int> steps;
  ad::Matrix embeddings;  // rows x d'
  ad::Matrix pca;         // rows x 3
};

/// Greedy rollouts of `steps` environment steps per map, one row per live
/// agent-step. PCA columns are the projections onto the top three principal
/// axes of the centered embeddings, each axis signed so its largest-magnitude
/// entry is positive.
EmbeddingTable export_embeddings(const Checkpoint& ck, const RunConfig& cfg,
                                 const std::vector<std::shared_ptr<const ScenarioMap>>& maps,
                                 int steps);
ad::Matrix principal_components(const ad::Matrix& x, int k);
void write_embedding_csv(const std::filesystem::path& path, const EmbeddingTable& table);

}  // namespace dtppo
