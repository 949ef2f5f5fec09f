// dtppo command-line driver.
//
// Exit codes: 0 success, 2 configuration error, 3 numerical abort, 1 other
// failures (I/O, corrupt files).

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dtppo/errors.hpp"
#include "dtppo/harness.hpp"
#include "dtppo/trainer.hpp"

namespace fs = std::filesystem;
using namespace dtppo;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  std::string out_dir;
};

RunConfig load(const Globals& g) {
  RunConfig cfg = g.config.empty() ? RunConfig{} : load_run_config(g.config);
  if (g.seed) cfg.seed = *g.seed;
  if (g.deterministic) cfg.deterministic = true;
  if (!g.out_dir.empty()) cfg.out_dir = g.out_dir;
  validate(cfg);
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write '" + path.string() + "'");
  out << text;
}

Checkpoint load_ck(const RunConfig& cfg, const std::string& path) {
  return load_checkpoint(path.empty() ? fs::path(cfg.out_dir) / "checkpoint.bin" : fs::path(path));
}

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::kConfigError:
    case ErrorCode::kConfigMismatch:
    case ErrorCode::kConflictingFlags:
    case ErrorCode::kInsufficientMaps:
    case ErrorCode::kZeroShotViolation:
    case ErrorCode::kInvalidSpec:
    case ErrorCode::kDensityInfeasible:
    case ErrorCode::kTooManyAgents:
    case ErrorCode::kHeadDivisibility:
    case ErrorCode::kWindowTooLong:
      return 2;
    case ErrorCode::kNonFiniteLoss:
    case ErrorCode::kNonFiniteAction:
      return 3;
    default:
      return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-transformer PPO for multi-UAV navigation"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "run config (JSON)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "override the run seed");
  app.add_flag("--deterministic", g.deterministic, "single-threaded, bit-reproducible run");
  app.add_option("--out-dir", g.out_dir, "output directory");

  auto* gen = app.add_subcommand("gen-scenarios", "generate scenario files");
  std::vector<std::string> types{"pillar", "cylinder", "mixed"};
  std::vector<double> densities{0.10, 0.25, 0.50};
  int seeds = 1;
  gen->add_option("--type", types, "scene types")->delimiter(',')->check(CLI::IsMember({"pillar", "cylinder", "mixed"}));
  gen->add_option("--density", densities, "obstacle densities")->delimiter(',');
  gen->add_option("--seeds", seeds, "maps per (type, density)")->check(CLI::PositiveNumber);

  auto* train_cmd = app.add_subcommand("train", "co-train on the configured maps");
  bool resume = false;
  train_cmd->add_flag("--resume", resume, "continue from out-dir/checkpoint.bin");

  auto* eval_cmd = app.add_subcommand("eval", "greedy evaluation of a checkpoint");
  std::string eval_ck;
  std::optional<int> eval_episodes;
  eval_cmd->add_option("--checkpoint", eval_ck, "defaults to out-dir/checkpoint.bin");
  eval_cmd->add_option("--episodes", eval_episodes, "episodes per map");

  auto* ablate_cmd = app.add_subcommand("ablate", "train an ablated architecture");
  std::vector<std::string> ablations;
  ablate_cmd->add_option("--flag", ablations, "no_spatial | no_temporal_gru | no_residual | plain_ppo")
      ->required();

  auto* sweep_cmd = app.add_subcommand("sweep", "vary the number of training scenarios");
  std::vector<int> counts;
  sweep_cmd->add_option("--counts", counts, "training-map counts (default from config)")->delimiter(',');

  auto* export_cmd = app.add_subcommand("export-embeddings", "dump temporal embeddings with PCA");
  std::string export_ck, export_out;
  std::optional<int> export_steps;
  export_cmd->add_option("--checkpoint", export_ck, "defaults to out-dir/checkpoint.bin");
  export_cmd->add_option("--steps", export_steps, "steps per map");
  export_cmd->add_option("--output", export_out, "defaults to out-dir/embeddings.csv");

  auto* replay_cmd = app.add_subcommand("replay-metrics", "recompute metrics from episode logs");
  std::string replay_logs;
  replay_cmd->add_option("--logs", replay_logs, "episode log file")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    const RunConfig cfg = load(g);
    const fs::path out(cfg.out_dir);

    if (*gen) {
      fs::create_directories(out);
      for (const std::string& t : types) {
        for (double d : densities) {
          for (int s = 0; s < seeds; ++s) {
            ScenarioSpec spec;
            spec.scene_type = scene_type_from_string(t);
            spec.density = d;
            spec.seed = cfg.seed + static_cast<std::uint64_t>(s);
            const ScenarioMap map = generate_scenario(spec);
            const fs::path p = out / (map.scenario_id + ".json");
            save_scenario(map, p);
            std::cout << p.string() << "\n";
          }
        }
      }
    } else if (*train_cmd) {
      TrainOptions opts;
      opts.resume = resume;
      opts.on_update = [](const UpdateRecord& r) {
        std::cout << "update " << r.update << " episodes " << r.episodes_total << " l_total "
                  << r.loss.l_total << " clip " << r.loss.clip_fraction << "\n";
      };
      const TrainResult tr = train(cfg, opts);
      std::cout << "checkpoint " << tr.checkpoint_path << "\n";
    } else if (*eval_cmd) {
      const Checkpoint ck = load_ck(cfg, eval_ck);
      std::vector<EpisodeLog> logs;
      const MetricsReport rep =
          evaluate_checkpoint(ck, cfg, materialize(cfg.eval_maps),
                              eval_episodes.value_or(cfg.eval_episodes), cfg.seed, &logs);
      write_episode_logs(out / "eval_logs.jsonl", logs);
      write_text(out / "eval_report.json", report_to_json(rep) + "\n");
      write_text(out / "eval_summary.csv", report_to_csv(rep));
      std::cout << report_to_csv(rep);
    } else if (*ablate_cmd) {
      RunConfig ac = cfg;
      for (const std::string& f : ablations) ac.model = apply_ablation(ac.model, f);
      const TrainResult tr = train(ac);
      write_text(out / "manifest.txt", parameter_manifest(tr.params));
      std::cout << parameter_manifest(tr.params);
    } else if (*sweep_cmd) {
      const auto rows = sweep_scenario_count(cfg, counts.empty() ? cfg.sweep_counts : counts);
      write_text(out / "sweep.csv", sweep_to_csv(rows));
      std::cout << sweep_to_csv(rows);
    } else if (*export_cmd) {
      const Checkpoint ck = load_ck(cfg, export_ck);
      const auto& srcs = cfg.eval_maps.empty() ? cfg.train_maps : cfg.eval_maps;
      const EmbeddingTable t =
          export_embeddings(ck, cfg, materialize(srcs), export_steps.value_or(cfg.export_steps));
      const fs::path p = export_out.empty() ? out / "embeddings.csv" : fs::path(export_out);
      write_embedding_csv(p, t);
      std::cout << t.agents.size() << " rows -> " << p.string() << "\n";
    } else if (*replay_cmd) {
      const MetricsReport rep = metrics_from_logs(read_episode_logs(replay_logs));
      std::cout << report_to_json(rep) << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
