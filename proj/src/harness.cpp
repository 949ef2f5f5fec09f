#include "dtppo/harness.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "dtppo/errors.hpp"
#include "dtppo/trainer.hpp"
#include "json.hpp"

namespace dtppo {

using ordered = nlohmann::ordered_json;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Action sources

CheckpointPolicy::CheckpointPolicy(const DualTransformer& model, const ad::ParamStore& params,
                                   int agents)
    : model_(model), stepper_(model, params, agents) {}

void CheckpointPolicy::begin_episode(const EpisodeRunner& runner) {
  (void)runner;
  stepper_.reset();
  last_agents_.clear();
  last_embeddings_ = ad::Matrix();
}

std::vector<ControlAction> CheckpointPolicy::act(const EpisodeRunner& runner) {
  std::vector<ControlAction> out(runner.world().agent_count());
  last_agents_ = runner.live_agents();
  std::vector<AgentInput> inputs;
  inputs.reserve(last_agents_.size());
  for (int a : last_agents_) inputs.push_back(runner.input(a));
  PolicyOutput po = stepper_.act(last_agents_, inputs, ActionMode::kGreedy, nullptr);
  for (std::size_t k = 0; k < last_agents_.size(); ++k) out[last_agents_[k]] = po.actions[k];
  last_embeddings_ = std::move(po.embeddings);
  return out;
}

std::vector<ControlAction> RandomPolicy::act(const EpisodeRunner& runner) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<ControlAction> out(runner.world().agent_count());
  for (int a : runner.live_agents()) {
    for (double& v : out[a].raw) v = u(rng_);
  }
  return out;
}

std::vector<ControlAction> ScriptedPolicy::act(const EpisodeRunner& runner) {
  std::vector<ControlAction> out(runner.world().agent_count());
  for (int a : runner.live_agents()) out[a] = fn_(runner, a);
  return out;
}

// ---------------------------------------------------------------------------
// Metrics

namespace {

MetricSummary summarize(const std::vector<double>& xs) {
  MetricSummary s;
  if (xs.empty()) return s;
  double sum = 0.0;
  for (double x : xs) sum += x;
  s.mean = sum / static_cast<double>(xs.size());
  double sq = 0.0;
  for (double x : xs) sq += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(sq / static_cast<double>(xs.size()));
  return s;
}

double mean_of(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  double sum = 0.0;
  for (double x : xs) sum += x;
  return sum / static_cast<double>(xs.size());
}

EpisodeMetrics episode_metrics(std::string scenario_id, std::int64_t episode, int steps,
                               std::vector<double> transfer, std::vector<double> collisions,
                               std::vector<double> free_space,
                               const std::vector<std::uint8_t>& reached) {
  EpisodeMetrics m;
  m.scenario_id = std::move(scenario_id);
  m.episode = episode;
  m.steps = steps;
  m.avg_transfer_reward = mean_of(transfer);
  m.avg_collision_penalty = mean_of(collisions);
  m.avg_free_space_reward = mean_of(free_space);
  double hits = 0.0;
  for (std::uint8_t r : reached) hits += r ? 1.0 : 0.0;
  m.success_rate = reached.empty() ? 0.0 : hits / static_cast<double>(reached.size());
  m.agent_transfer = std::move(transfer);
  m.agent_collisions = std::move(collisions);
  m.agent_free_space = std::move(free_space);
  return m;
}

// Per-map and global aggregates over (episode, agent) values. Maps keep the
// order of first appearance.
void aggregate(MetricsReport& r) {
  std::vector<std::string> order;
  for (const EpisodeMetrics& e : r.episodes) {
    if (std::find(order.begin(), order.end(), e.scenario_id) == order.end()) {
      order.push_back(e.scenario_id);
    }
  }
  std::vector<double> all_t, all_c, all_f;
  r.maps.clear();
  for (const std::string& id : order) {
    MapMetrics mm;
    mm.scenario_id = id;
    std::vector<double> t, c, f;
    for (const EpisodeMetrics& e : r.episodes) {
      if (e.scenario_id != id) continue;
      ++mm.episodes;
      t.insert(t.end(), e.agent_transfer.begin(), e.agent_transfer.end());
      c.insert(c.end(), e.agent_collisions.begin(), e.agent_collisions.end());
      f.insert(f.end(), e.agent_free_space.begin(), e.agent_free_space.end());
    }
    mm.transfer = summarize(t);
    mm.collision = summarize(c);
    mm.free_space = summarize(f);
    r.maps.push_back(mm);
  }
  for (const EpisodeMetrics& e : r.episodes) {
    all_t.insert(all_t.end(), e.agent_transfer.begin(), e.agent_transfer.end());
    all_c.insert(all_c.end(), e.agent_collisions.begin(), e.agent_collisions.end());
    all_f.insert(all_f.end(), e.agent_free_space.begin(), e.agent_free_space.end());
  }
  r.transfer = summarize(all_t);
  r.collision = summarize(all_c);
  r.free_space = summarize(all_f);
  r.eval_scenarios = order;
}

}  // namespace

MetricsReport evaluate(ActionSource& policy,
                       const std::vector<std::shared_ptr<const ScenarioMap>>& maps,
                       const EvalSettings& settings, std::vector<EpisodeLog>* logs) {
  if (settings.episodes <= 0) throw Error(ErrorCode::kConfigError, "eval episodes must be > 0");
  MetricsReport report;
  for (std::size_t m = 0; m < maps.size(); ++m) {
    const std::uint64_t stream = mix_seed(settings.seed, m);
    for (int ep = 0; ep < settings.episodes; ++ep) {
      EpisodeRunner runner(maps[m], settings.agents, settings.world, settings.obs,
                           mix_seed(stream, static_cast<std::uint64_t>(ep)));
      policy.begin_episode(runner);
      while (!runner.finished()) {
        const std::vector<ControlAction> actions = policy.act(runner);
        if (actions.size() != runner.world().agent_count()) {
          throw Error(ErrorCode::kDimensionMismatch, "action source returned " +
                                                         std::to_string(actions.size()) +
                                                         " actions for " +
                                                         std::to_string(settings.agents) + " agents");
        }
        runner.step(actions);
      }
      report.episodes.push_back(episode_metrics(
          maps[m]->scenario_id, ep, runner.world().step_index, runner.transfer_sum(),
          runner.collision_count(), runner.free_sum(), runner.world().reached_goal));
      if (logs) {
        logs->push_back(EpisodeLog{maps[m]->scenario_id, ep, settings.agents, runner.log(),
                                   runner.world().reached_goal});
      }
    }
  }
  aggregate(report);
  return report;
}

MetricsReport evaluate_checkpoint(const Checkpoint& ck, const RunConfig& cfg,
                                  const std::vector<std::shared_ptr<const ScenarioMap>>& maps,
                                  int episodes, std::uint64_t seed,
                                  std::vector<EpisodeLog>* logs) {
  const CheckpointMeta meta = parse_checkpoint_metadata(ck.metadata);
  if (ck.config_hash != model_config_hash(cfg.model) ||
      ck.config_hash != model_config_hash(meta.model)) {
    throw Error(ErrorCode::kConfigMismatch, "checkpoint architecture differs from the config");
  }
  if (maps.empty()) throw Error(ErrorCode::kConfigError, "no evaluation maps configured");
  for (const auto& m : maps) {
    if (static_cast<std::size_t>(cfg.agents) > m->spawn_points.size()) {
      throw Error(ErrorCode::kConfigMismatch,
                  std::to_string(cfg.agents) + " agents but map '" + m->scenario_id + "' has " +
                      std::to_string(m->spawn_points.size()) + " spawn points");
    }
  }
  const std::set<std::string> trained(meta.train_scenarios.begin(), meta.train_scenarios.end());
  bool overlap = false;
  for (const auto& m : maps) {
    if (trained.count(m->scenario_id)) {
      if (cfg.mode == EvalMode::kZeroShot) {
        throw Error(ErrorCode::kZeroShotViolation,
                    "evaluation map '" + m->scenario_id + "' was used for training");
      }
      overlap = true;
    }
  }

  const DualTransformer model(meta.model);
  CheckpointPolicy policy(model, ck.params, cfg.agents);
  EvalSettings s;
  s.agents = cfg.agents;
  s.episodes = episodes;
  s.world = cfg.world;
  s.obs = meta.model.obs;
  s.seed = seed;
  MetricsReport report = evaluate(policy, maps, s, logs);
  report.zero_shot = !overlap;
  report.train_scenarios = meta.train_scenarios;
  return report;
}

MetricsReport metrics_from_logs(const std::vector<EpisodeLog>& logs) {
  MetricsReport report;
  for (const EpisodeLog& log : logs) {
    const std::size_t n = static_cast<std::size_t>(log.agents);
    std::vector<double> t(n, 0.0), c(n, 0.0), f(n, 0.0);
    for (const auto& row : log.steps) {
      if (row.size() != n) {
        throw Error(ErrorCode::kLengthMismatch, "log row has " + std::to_string(row.size()) +
                                                    " entries for " + std::to_string(n) +
                                                    " agents");
      }
      for (std::size_t i = 0; i < n; ++i) {
        if (!row[i].acted) continue;
        t[i] += row[i].reward.r_trans;
        c[i] += row[i].collided ? 1.0 : 0.0;
        f[i] += row[i].reward.r_free_applied;
      }
    }
    report.episodes.push_back(episode_metrics(log.scenario_id, log.episode,
                                              static_cast<int>(log.steps.size()), std::move(t),
                                              std::move(c), std::move(f), log.reached));
  }
  aggregate(report);
  return report;
}

// ---------------------------------------------------------------------------
// Log files: one JSON object per episode. Each step entry is
// [acted, collided, r_trans, r_col_applied, r_free_applied, r_total].

void write_episode_logs(const std::filesystem::path& path, const std::vector<EpisodeLog>& logs) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write '" + path.string() + "'");
  for (const EpisodeLog& log : logs) {
    ordered steps = ordered::array();
    for (const auto& row : log.steps) {
      ordered r = ordered::array();
      for (const StepRewardLog& e : row) {
        r.push_back(ordered::array({e.acted, e.collided, e.reward.r_trans, e.reward.r_col_applied,
                                    e.reward.r_free_applied, e.reward.r_total}));
      }
      steps.push_back(std::move(r));
    }
    out << ordered{{"scenario_id", log.scenario_id},
                   {"episode", log.episode},
                   {"agents", log.agents},
                   {"reached", log.reached},
                   {"steps", std::move(steps)}}
               .dump()
        << "\n";
  }
}

std::vector<EpisodeLog> read_episode_logs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot read '" + path.string() + "'");
  std::vector<EpisodeLog> logs;
  std::string line;
  std::size_t offset = 0;
  while (std::getline(in, line)) {
    const std::size_t line_start = offset;
    offset += line.size() + 1;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      EpisodeLog log;
      log.scenario_id = j.at("scenario_id").get<std::string>();
      log.episode = j.at("episode").get<std::int64_t>();
      log.agents = j.at("agents").get<int>();
      log.reached = j.at("reached").get<std::vector<std::uint8_t>>();
      for (const json& row : j.at("steps")) {
        std::vector<StepRewardLog> r;
        for (const json& e : row) {
          StepRewardLog s;
          s.acted = e.at(0).get<std::uint8_t>();
          s.collided = e.at(1).get<std::uint8_t>();
          s.reward.r_trans = e.at(2).get<double>();
          s.reward.r_col_applied = e.at(3).get<double>();
          s.reward.r_free_applied = e.at(4).get<double>();
          s.reward.r_total = e.at(5).get<double>();
          r.push_back(s);
        }
        log.steps.push_back(std::move(r));
      }
      logs.push_back(std::move(log));
    } catch (const json::exception& e) {
      throw CorruptFileError(line_start, std::string("bad episode log line: ") + e.what());
    }
  }
  return logs;
}

namespace {

ordered summary_json(const MetricSummary& s) { return ordered{{"mean", s.mean}, {"std", s.std}}; }

}  // namespace

std::string report_to_json(const MetricsReport& r) {
  ordered maps = ordered::array();
  for (const MapMetrics& m : r.maps) {
    maps.push_back(ordered{{"scenario_id", m.scenario_id},
                           {"episodes", m.episodes},
                           {"avg_transfer_reward", summary_json(m.transfer)},
                           {"avg_collision_penalty", summary_json(m.collision)},
                           {"avg_free_space_reward", summary_json(m.free_space)}});
  }
  ordered eps = ordered::array();
  for (const EpisodeMetrics& e : r.episodes) {
    eps.push_back(ordered{{"scenario_id", e.scenario_id},
                          {"episode", e.episode},
                          {"steps", e.steps},
                          {"avg_transfer_reward", e.avg_transfer_reward},
                          {"avg_collision_penalty", e.avg_collision_penalty},
                          {"avg_free_space_reward", e.avg_free_space_reward},
                          {"success_rate", e.success_rate}});
  }
  return ordered{{"zero_shot", r.zero_shot},
                 {"train_scenarios", r.train_scenarios},
                 {"eval_scenarios", r.eval_scenarios},
                 {"avg_transfer_reward", summary_json(r.transfer)},
                 {"avg_collision_penalty", summary_json(r.collision)},
                 {"avg_free_space_reward", summary_json(r.free_space)},
                 {"maps", std::move(maps)},
                 {"episodes", std::move(eps)}}
      .dump(2);
}

std::string report_to_csv(const MetricsReport& r) {
  std::ostringstream os;
  os << "scenario_id,episodes,transfer_mean,transfer_std,collision_mean,collision_std,"
        "free_space_mean,free_space_std\n";
  auto row = [&](const std::string& id, int episodes, const MetricSummary& t,
                 const MetricSummary& c, const MetricSummary& f) {
    os << id << ',' << episodes << ',' << json(t.mean).dump() << ',' << json(t.std).dump() << ','
       << json(c.mean).dump() << ',' << json(c.std).dump() << ',' << json(f.mean).dump() << ','
       << json(f.std).dump() << "\n";
  };
  for (const MapMetrics& m : r.maps) row(m.scenario_id, m.episodes, m.transfer, m.collision, m.free_space);
  row("all", static_cast<int>(r.episodes.size()), r.transfer, r.collision, r.free_space);
  return os.str();
}

// ---------------------------------------------------------------------------
// Ablations

ModelConfig apply_ablation(ModelConfig cfg, const std::string& flag) {
  AblationFlags& a = cfg.ablation;
  if (flag == "no_spatial") {
    a.no_spatial = true;
  } else if (flag == "no_temporal_gru") {
    a.no_temporal_gru = true;
  } else if (flag == "no_residual") {
    a.no_residual = true;
  } else if (flag == "plain_ppo") {
    a.plain_ppo = true;
  } else {
    throw Error(ErrorCode::kConfigError, "unknown ablation '" + flag + "'");
  }
  validate(a);
  return cfg;
}

std::string parameter_manifest(const ad::ParamStore& params) {
  std::ostringstream os;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const ad::Matrix& v = params.value(i);
    os << params.name(i) << ' ' << v.rows() << ' ' << v.cols() << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Sweep

namespace {

constexpr SceneType kSceneTypes[] = {SceneType::kPillar, SceneType::kCylinder, SceneType::kMixed};

MapSource spec_source(SceneType type, double density, std::uint64_t seed) {
  MapSource src;
  src.spec.scene_type = type;
  src.spec.density = density;
  src.spec.seed = seed;
  return src;
}

}  // namespace

std::vector<MapSource> default_sweep_pool(std::uint64_t seed) {
  std::vector<MapSource> pool;
  std::uint64_t k = 0;
  for (double density : {0.10, 0.25, 0.50}) {
    for (SceneType t : kSceneTypes) pool.push_back(spec_source(t, density, seed + k++));
  }
  return pool;
}

std::vector<MapSource> default_sweep_eval(std::uint64_t seed) {
  std::vector<MapSource> out;
  std::uint64_t k = 1000;
  for (SceneType t : kSceneTypes) out.push_back(spec_source(t, 0.50, seed + k++));
  return out;
}

std::vector<SweepRow> sweep_scenario_count(const RunConfig& base, const std::vector<int>& counts) {
  const std::vector<MapSource> pool =
      base.train_maps.empty() ? default_sweep_pool(base.seed) : base.train_maps;
  const std::vector<MapSource> eval_src =
      base.eval_maps.empty() ? default_sweep_eval(base.seed) : base.eval_maps;
  for (int c : counts) {
    if (c <= 0 || static_cast<std::size_t>(c) > pool.size()) {
      throw Error(ErrorCode::kInsufficientMaps, "sweep count " + std::to_string(c) +
                                                    " but the pool has " +
                                                    std::to_string(pool.size()) + " maps");
    }
  }
  const auto eval_maps = materialize(eval_src);
  std::vector<SweepRow> rows;
  for (int c : counts) {
    RunConfig cfg = base;
    cfg.train_maps.assign(pool.begin(), pool.begin() + c);
    cfg.eval_maps = eval_src;
    cfg.out_dir = (std::filesystem::path(base.out_dir) / ("count_" + std::to_string(c))).string();
    const TrainResult tr = train(cfg);
    const Checkpoint ck = load_checkpoint(tr.checkpoint_path);
    SweepRow row;
    row.count = c;
    row.report = evaluate_checkpoint(ck, cfg, eval_maps, cfg.eval_episodes,
                                     mix_seed(cfg.seed, 0xE7A1));
    row.train_scenarios = row.report.train_scenarios;
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string sweep_to_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "train_count,transfer_mean,transfer_std,collision_mean,collision_std,free_space_mean,"
        "free_space_std,zero_shot\n";
  for (const SweepRow& r : rows) {
    os << r.count << ',' << json(r.report.transfer.mean).dump() << ','
       << json(r.report.transfer.std).dump() << ',' << json(r.report.collision.mean).dump() << ','
       << json(r.report.collision.std).dump() << ',' << json(r.report.free_space.mean).dump()
       << ',' << json(r.report.free_space.std).dump() << ','
       << (r.report.zero_shot ? "true" : "false") << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Embeddings

ad::Matrix principal_components(const ad::Matrix& x, int k) {
  const Eigen::Index n = static_cast<Eigen::Index>(x.rows());
  const Eigen::Index d = static_cast<Eigen::Index>(x.cols());
  ad::Matrix out(x.rows(), static_cast<std::size_t>(k), 0.0);
  if (n == 0 || d == 0) return out;
  Eigen::MatrixXd m(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) m(i, j) = x(i, j);
  }
  const Eigen::RowVectorXd mu = m.colwise().mean();
  m.rowwise() -= mu;
  const Eigen::MatrixXd cov = (m.transpose() * m) / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  // Eigenvalues come back ascending.
  const Eigen::Index use = std::min<Eigen::Index>(k, d);
  for (Eigen::Index c = 0; c < use; ++c) {
    Eigen::VectorXd v = es.eigenvectors().col(d - 1 - c);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0.0) v = -v;
    const Eigen::VectorXd p = m * v;
    for (Eigen::Index i = 0; i < n; ++i) out(static_cast<std::size_t>(i), c) = p(i);
  }
  return out;
}

EmbeddingTable export_embeddings(const Checkpoint& ck, const RunConfig& cfg,
                                 const std::vector<std::shared_ptr<const ScenarioMap>>& maps,
                                 int steps) {
  const CheckpointMeta meta = parse_checkpoint_metadata(ck.metadata);
  if (ck.config_hash != model_config_hash(meta.model)) {
    throw Error(ErrorCode::kConfigMismatch, "checkpoint metadata does not match its hash");
  }
  const DualTransformer model(meta.model);
  CheckpointPolicy policy(model, ck.params, cfg.agents);
  EmbeddingTable t;
  std::vector<double> flat;
  std::size_t width = 0;
  for (std::size_t m = 0; m < maps.size(); ++m) {
    if (static_cast<std::size_t>(cfg.agents) > maps[m]->spawn_points.size()) {
      throw Error(ErrorCode::kConfigMismatch,
                  "map '" + maps[m]->scenario_id + "' has too few spawn points");
    }
    EpisodeRunner runner(maps[m], cfg.agents, cfg.world, meta.model.obs, mix_seed(cfg.seed, m));
    policy.begin_episode(runner);
    for (int s = 0; s < steps && !runner.finished(); ++s) {
      const auto actions = policy.act(runner);
      const ad::Matrix& e = policy.last_embeddings();
      width = e.cols();
      for (std::size_t k = 0; k < policy.last_agents().size(); ++k) {
        t.scenario_ids.push_back(maps[m]->scenario_id);
        t.agents.push_back(policy.last_agents()[k]);
        t.steps.push_back(s);
        const auto r = e.row(k);
        flat.insert(flat.end(), r.begin(), r.end());
      }
      runner.step(actions);
    }
  }
  t.embeddings = ad::Matrix(t.agents.size(), width, std::move(flat));
  t.pca = principal_components(t.embeddings, 3);
  return t;
}

void write_embedding_csv(const std::filesystem::path& path, const EmbeddingTable& t) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write '" + path.string() + "'");
  out << "scenario_id,agent,step";
  for (std::size_t j = 0; j < t.embeddings.cols(); ++j) out << ",e" << j;
  out << ",pc1,pc2,pc3\n";
  for (std::size_t i = 0; i < t.agents.size(); ++i) {
    out << t.scenario_ids[i] << ',' << t.agents[i] << ',' << t.steps[i];
    for (double v : t.embeddings.row(i)) out << ',' << json(v).dump();
    for (double v : t.pca.row(i)) out << ',' << json(v).dump();
    out << "\n";
  }
}

}  // namespace dtppo
