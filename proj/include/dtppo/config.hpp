#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dtppo/encoder.hpp"
#include "dtppo/ppo.hpp"
#include "dtppo/scenario.hpp"
#include "dtppo/world.hpp"

namespace dtppo {

/// A map is either generated from a ScenarioSpec or loaded from a scenario file.
struct MapSource {
  ScenarioSpec spec;
  std::string file;  // takes precedence when non-empty

  friend bool operator==(const MapSource&, const MapSource&) = default;
};

enum class EvalMode { kZeroShot, kNonTransfer };

struct RunConfig {
  std::uint64_t seed = 0;
  bool deterministic = false;
  std::string out_dir = "runs/default";

  std::vector<MapSource> train_maps;
  std::vector<MapSource> eval_maps;
  EvalMode mode = EvalMode::kZeroShot;
  int agents = 8;

  WorldConfig world;
  ModelConfig model;
  PpoConfig ppo;

  int updates = 0;  // 0: run until ppo.total_episodes episodes have completed
  int checkpoint_every = 10;
  int eval_episodes = 5;
  std::vector<int> sweep_counts{1, 3, 5, 7, 9};
  int export_steps = 50;
};

/// Throws Error(kConfigError) with the offending key.
void validate(const RunConfig& cfg);

std::string to_json_text(const RunConfig& cfg);
/// Keys not present keep their defaults; unknown keys raise
/// Error(kConfigError).
RunConfig run_config_from_json_text(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

std::string model_config_json(const ModelConfig& cfg);
/// Hash of the architecture (observation layout, encoder sizes, ablations).
std::uint64_t model_config_hash(const ModelConfig& cfg);

std::shared_ptr<const ScenarioMap> materialize(const MapSource& src);
std::vector<std::shared_ptr<const ScenarioMap>> materialize(const std::vector<MapSource>& srcs);

}  // namespace dtppo
