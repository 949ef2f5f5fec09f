#include "dtppo/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "dtppo/errors.hpp"
#include "json.hpp"

namespace dtppo {

using ordered = nlohmann::ordered_json;
using nlohmann::json;

namespace {

constexpr std::uint64_t kInitStream = 0x1417;
constexpr std::uint64_t kRolloutStream = 1;
constexpr std::uint64_t kShuffleStream = 2;

bool finite(const LossReport& r) {
  return std::isfinite(r.l_actor) && std::isfinite(r.l_critic) && std::isfinite(r.l_pred) &&
         std::isfinite(r.l_total) && std::isfinite(r.entropy);
}

ordered loss_json(const LossReport& r) {
  return ordered{{"l_actor", r.l_actor},   {"l_critic", r.l_critic},
                 {"l_pred", r.l_pred},     {"l_total", r.l_total},
                 {"entropy", r.entropy},   {"clip_fraction", r.clip_fraction},
                 {"approx_kl", r.approx_kl}};
}

void dump_nonfinite(const std::filesystem::path& path, int update, int minibatch,
                    const RolloutBatch& batch, const std::vector<std::size_t>& samples,
                    const LossReport& report, bool grads_only) {
  ordered doc{{"update", update},
              {"minibatch", minibatch},
              {"stage", grads_only ? "gradient" : "loss"},
              {"loss", ordered{{"l_actor", std::to_string(report.l_actor)},
                               {"l_critic", std::to_string(report.l_critic)},
                               {"l_pred", std::to_string(report.l_pred)},
                               {"l_total", std::to_string(report.l_total)},
                               {"entropy", std::to_string(report.entropy)}}}};
  ordered rows = ordered::array();
  for (std::size_t i : samples) {
    const StepRecord& s = batch.steps[i];
    rows.push_back(ordered{{"scenario", s.scenario},
                           {"agent", s.agent},
                           {"episode", s.episode},
                           {"step", s.step},
                           {"action", s.action},
                           {"log_prob", std::to_string(s.log_prob)},
                           {"value", std::to_string(s.value)},
                           {"advantage", std::to_string(s.advantage)},
                           {"return", std::to_string(s.ret)}});
  }
  doc["samples"] = std::move(rows);
  std::ofstream out(path);
  out << doc.dump(2) << "\n";
}

}  // namespace

std::string checkpoint_metadata(const CheckpointMeta& meta) {
  ordered j{{"update", meta.update},
            {"episodes", meta.episodes},
            {"train_scenarios", meta.train_scenarios},
            {"model", ordered::parse(model_config_json(meta.model))},
            {"run_config", meta.run_config.empty() ? ordered() : ordered::parse(meta.run_config)}};
  return j.dump();
}

CheckpointMeta parse_checkpoint_metadata(const std::string& text) {
  CheckpointMeta m;
  try {
    const json j = json::parse(text);
    m.update = j.at("update").get<int>();
    m.episodes = j.at("episodes").get<std::int64_t>();
    m.train_scenarios = j.at("train_scenarios").get<std::vector<std::string>>();
    // The model block has the same layout as the run config's "model" key.
    json wrapper{{"model", j.at("model")}};
    m.model = run_config_from_json_text(wrapper.dump()).model;
    if (!j.at("run_config").is_null()) m.run_config = j.at("run_config").dump(2);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kConfigError, std::string("unreadable checkpoint metadata: ") + e.what());
  }
  return m;
}

TrainResult train(const RunConfig& cfg, const TrainOptions& opts) {
  validate(cfg);
  if (cfg.updates == 0 && cfg.ppo.total_episodes <= 0) {
    throw Error(ErrorCode::kConfigError, "set updates or ppo.total_episodes to bound training");
  }
  if (cfg.train_maps.empty()) throw Error(ErrorCode::kConfigError, "no training maps configured");
  const DualTransformer model(cfg.model);
  const auto maps = materialize(cfg.train_maps);
  for (const auto& m : maps) {
    if (static_cast<std::size_t>(cfg.agents) > m->spawn_points.size()) {
      throw Error(ErrorCode::kConfigMismatch,
                  std::to_string(cfg.agents) + " agents but map '" + m->scenario_id + "' has " +
                      std::to_string(m->spawn_points.size()) + " spawn points");
    }
  }

  namespace fs = std::filesystem;
  const fs::path dir(cfg.out_dir);
  TrainResult result;
  result.checkpoint_path = (dir / "checkpoint.bin").string();
  result.metrics_path = (dir / "metrics.jsonl").string();
  result.summary_path = (dir / "summary.csv").string();
  const std::uint64_t hash = model_config_hash(cfg.model);

  CheckpointMeta meta;
  meta.model = cfg.model;
  meta.run_config = to_json_text(cfg);
  for (const auto& m : maps) meta.train_scenarios.push_back(m->scenario_id);

  ad::ParamStore params = model.init(mix_seed(cfg.seed, kInitStream));
  int update = 0;
  std::int64_t episodes = 0;
  bool resumed = false;
  if (opts.resume && fs::exists(result.checkpoint_path)) {
    Checkpoint ck = load_checkpoint(result.checkpoint_path);
    if (ck.config_hash != hash) {
      throw Error(ErrorCode::kConfigMismatch, "checkpoint architecture differs from the config");
    }
    const CheckpointMeta old = parse_checkpoint_metadata(ck.metadata);
    params = std::move(ck.params);
    update = old.update;
    episodes = old.episodes;
    resumed = true;
  }

  std::ofstream metrics, summary;
  if (opts.write_files) {
    fs::create_directories(dir);
    const auto mode = resumed ? std::ios::app : std::ios::trunc;
    metrics.open(result.metrics_path, std::ios::out | mode);
    summary.open(result.summary_path, std::ios::out | mode);
    if (!metrics || !summary) {
      throw Error(ErrorCode::kIoError, "cannot write metrics under '" + cfg.out_dir + "'");
    }
    if (!resumed) {
      summary << "update,episodes_total,samples,mean_transfer_reward,l_actor,l_critic,l_pred,"
                 "l_total,entropy,clip_fraction,approx_kl\n";
    }
  }

  auto save = [&](int updates_done) {
    if (!opts.write_files) return;
    meta.update = updates_done;
    meta.episodes = episodes;
    save_checkpoint(result.checkpoint_path, Checkpoint{params, hash, checkpoint_metadata(meta)});
  };

  RolloutSettings settings;
  settings.agents = cfg.agents;
  settings.horizon = cfg.ppo.horizon;
  settings.world = cfg.world;
  settings.parallel = !cfg.deterministic;
  const ad::AdamConfig adam{cfg.ppo.lr};

  while (cfg.updates > 0 ? update < cfg.updates : episodes < cfg.ppo.total_episodes) {
    RolloutBatch batch =
        collect_rollouts(maps, model, params, settings,
                         mix_seed(mix_seed(cfg.seed, kRolloutStream), static_cast<std::uint64_t>(update)));
    double transfer_sum = 0.0;
    for (EpisodeStats& e : batch.episodes) {
      e.episode = episodes++;
      transfer_sum += e.mean_transfer();
      if (opts.write_files) {
        metrics << ordered{{"type", "episode"},
                           {"update", update},
                           {"episode", e.episode},
                           {"scenario_id", e.scenario_id},
                           {"steps", e.steps},
                           {"transfer_reward", e.mean_transfer()},
                           {"collision_penalty", e.mean_collisions()},
                           {"free_space_reward", e.mean_free_space()},
                           {"success_rate", e.success_rate()}}
                       .dump()
                << "\n";
      }
      result.episodes_log.push_back(e);
    }

    UpdateRecord rec;
    rec.update = update;
    rec.samples = batch.size();
    if (batch.size() > 0) {
      assign_advantages(batch, cfg.ppo.gamma, cfg.ppo.gae_lambda);
      std::mt19937_64 rng(
          mix_seed(mix_seed(cfg.seed, kShuffleStream), static_cast<std::uint64_t>(update)));
      for (int epoch = 0; epoch < cfg.ppo.epochs; ++epoch) {
        const auto minibatches = make_minibatches(batch, cfg.ppo.segment, cfg.ppo.minibatch, rng);
        for (std::size_t k = 0; k < minibatches.size(); ++k) {
          ad::Graph g;
          const LossEvaluation ev = ppo_losses(g, params, model, batch, minibatches[k], cfg.ppo);
          if (!finite(ev.report)) {
            if (opts.write_files) {
              dump_nonfinite(dir / "nonfinite_dump.json", update, static_cast<int>(k), batch,
                             minibatches[k], ev.report, false);
            }
            throw Error(ErrorCode::kNonFiniteLoss, "non-finite loss at update " +
                                                       std::to_string(update) + ", minibatch " +
                                                       std::to_string(k));
          }
          ad::Gradients grads = ad::grad(ev.total, params);
          const double norm = grads.global_norm();
          if (!std::isfinite(norm)) {
            if (opts.write_files) {
              dump_nonfinite(dir / "nonfinite_dump.json", update, static_cast<int>(k), batch,
                             minibatches[k], ev.report, true);
            }
            throw Error(ErrorCode::kNonFiniteLoss, "non-finite gradient at update " +
                                                       std::to_string(update) + ", minibatch " +
                                                       std::to_string(k));
          }
          if (cfg.ppo.max_grad_norm > 0.0 && norm > cfg.ppo.max_grad_norm) {
            grads.scale(cfg.ppo.max_grad_norm / norm);
          }
          ad::adam_step(params, grads, adam);

          rec.grad_norm += norm;
          rec.loss.l_actor += ev.report.l_actor;
          rec.loss.l_critic += ev.report.l_critic;
          rec.loss.l_pred += ev.report.l_pred;
          rec.loss.l_total += ev.report.l_total;
          rec.loss.entropy += ev.report.entropy;
          rec.loss.clip_fraction += ev.report.clip_fraction;
          rec.loss.approx_kl += ev.report.approx_kl;
          ++rec.minibatches;
        }
      }
      if (rec.minibatches > 0) {
        const double n = rec.minibatches;
        rec.grad_norm /= n;
        rec.loss.l_actor /= n;
        rec.loss.l_critic /= n;
        rec.loss.l_pred /= n;
        rec.loss.l_total /= n;
        rec.loss.entropy /= n;
        rec.loss.clip_fraction /= n;
        rec.loss.approx_kl /= n;
      }
    }
    rec.episodes_total = episodes;
    ++update;

    if (opts.write_files) {
      ordered u{{"type", "update"},
                {"update", rec.update},
                {"episodes_total", rec.episodes_total},
                {"samples", rec.samples},
                {"minibatches", rec.minibatches},
                {"grad_norm", rec.grad_norm}};
      const ordered losses = loss_json(rec.loss);
      for (const auto& [k, v] : losses.items()) u[k] = v;
      metrics << u.dump() << "\n";
      const double mean_transfer =
          batch.episodes.empty() ? 0.0 : transfer_sum / static_cast<double>(batch.episodes.size());
      summary << rec.update << ',' << rec.episodes_total << ',' << rec.samples << ','
              << json(mean_transfer).dump() << ',' << json(rec.loss.l_actor).dump() << ','
              << json(rec.loss.l_critic).dump() << ',' << json(rec.loss.l_pred).dump() << ','
              << json(rec.loss.l_total).dump() << ',' << json(rec.loss.entropy).dump() << ','
              << json(rec.loss.clip_fraction).dump() << ',' << json(rec.loss.approx_kl).dump()
              << "\n";
      metrics.flush();
      summary.flush();
    }
    if (opts.on_update) opts.on_update(rec);
    result.updates.push_back(rec);
    if (update % cfg.checkpoint_every == 0) save(update);
  }
  save(update);

  result.params = std::move(params);
  result.updates_done = update;
  result.episodes = episodes;
  return result;
}

}  // namespace dtppo
