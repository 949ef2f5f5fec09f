#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dtppo/checkpoint.hpp"
#include "dtppo/config.hpp"
#include "dtppo/ppo.hpp"

namespace dtppo {

struct UpdateRecord {
  int update = 0;
  std::int64_t episodes_total = 0;
  std::size_t samples = 0;
  int minibatches = 0;
  double grad_norm = 0.0;  // mean pre-clip norm
  LossReport loss;         // mean over the update's minibatches
};

struct TrainOptions {
  bool resume = false;      // continue from out_dir/checkpoint.bin if present
  bool write_files = true;  // metrics, summary and checkpoint under out_dir
  std::function<void(const UpdateRecord&)> on_update;
};

struct TrainResult {
  ad::ParamStore params;
  int updates_done = 0;
  std::int64_t episodes = 0;
  std::vector<UpdateRecord> updates;
  std::vector<EpisodeStats> episodes_log;
  std::string checkpoint_path;
  std::string metrics_path;
  std::string summary_path;
};

struct CheckpointMeta {
  int update = 0;
  std::int64_t episodes = 0;
  std::vector<std::string> train_scenarios;
  ModelConfig model;
  std::string run_config;  // JSON text
};

std::string checkpoint_metadata(const CheckpointMeta& meta);
/// Throws Error(kConfigError) when the metadata cannot be parsed.
CheckpointMeta parse_checkpoint_metadata(const std::string& text);

/// Co-training loop: collect on every training map, then several epochs of
/// minibatched PPO updates. Throws Error(kNonFiniteLoss) after writing
/// out_dir/nonfinite_dump.json when a loss or gradient is not finite.
TrainResult train(const RunConfig& cfg, const TrainOptions& opts = {});

}  // namespace dtppo
