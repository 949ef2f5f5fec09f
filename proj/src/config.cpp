#include "dtppo/config.hpp"

#include <fstream>
#include <sstream>

#include "dtppo/checkpoint.hpp"
#include "dtppo/errors.hpp"
#include "json.hpp"

namespace dtppo {

using nlohmann::json;
using ordered = nlohmann::ordered_json;

namespace {

// Reads `key` from `j` into `out` if present, rejecting wrong types.
template <typename T>
void read(const json& j, const char* key, T& out, const std::string& path) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->template get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorCode::kConfigError, "bad value for '" + path + key + "': " + it->dump());
  }
}

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& path) {
  if (!j.is_object()) throw Error(ErrorCode::kConfigError, "'" + path + "' must be an object");
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (const char* name : known) ok = ok || k == name;
    if (!ok) throw Error(ErrorCode::kConfigError, "unknown key '" + path + k + "'");
  }
}

ordered spec_json(const ScenarioSpec& s) {
  return ordered{{"scene_type", to_string(s.scene_type)}, {"density", s.density},
                 {"arena_x", s.arena_x},                  {"arena_y", s.arena_y},
                 {"altitude_max", s.altitude_max},        {"seed", s.seed},
                 {"target_count", s.target_count}};
}

ScenarioSpec spec_from(const json& j, const std::string& path) {
  reject_unknown(j, {"scene_type", "density", "arena_x", "arena_y", "altitude_max", "seed",
                     "target_count", "file"},
                 path);
  ScenarioSpec s;
  std::string type = to_string(s.scene_type);
  read(j, "scene_type", type, path);
  try {
    s.scene_type = scene_type_from_string(type);
  } catch (const Error&) {
    throw Error(ErrorCode::kConfigError, "unknown scene type '" + type + "'");
  }
  read(j, "density", s.density, path);
  read(j, "arena_x", s.arena_x, path);
  read(j, "arena_y", s.arena_y, path);
  read(j, "altitude_max", s.altitude_max, path);
  read(j, "seed", s.seed, path);
  read(j, "target_count", s.target_count, path);
  return s;
}

ordered maps_json(const std::vector<MapSource>& maps) {
  ordered a = ordered::array();
  for (const MapSource& m : maps) {
    if (!m.file.empty()) {
      a.push_back(ordered{{"file", m.file}});
    } else {
      a.push_back(spec_json(m.spec));
    }
  }
  return a;
}

std::vector<MapSource> maps_from(const json& j, const std::string& path) {
  if (!j.is_array()) throw Error(ErrorCode::kConfigError, "'" + path + "' must be an array");
  std::vector<MapSource> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string p = path + "[" + std::to_string(i) + "].";
    MapSource m;
    if (j[i].contains("file")) {
      reject_unknown(j[i], {"file"}, p);
      read(j[i], "file", m.file, p);
    } else {
      m.spec = spec_from(j[i], p);
    }
    out.push_back(std::move(m));
  }
  return out;
}

ordered obs_json(const ObsConfig& o) {
  return ordered{{"history", o.history},
                 {"neighbors", o.neighbors},
                 {"sensing_range", o.sensing_range},
                 {"range_sensor", o.range_sensor},
                 {"rays", o.rays}};
}

ordered encoder_json(const EncoderConfig& e) {
  return ordered{{"d", e.d},
                 {"d_prime", e.d_prime},
                 {"spatial_layers", e.spatial_layers},
                 {"spatial_heads", e.spatial_heads},
                 {"temporal_layers", e.temporal_layers},
                 {"temporal_heads", e.temporal_heads},
                 {"horizon", e.horizon},
                 {"actor_hidden", e.actor_hidden},
                 {"critic_hidden", e.critic_hidden}};
}

ordered ablation_json(const AblationFlags& a) {
  return ordered{{"no_spatial", a.no_spatial},
                 {"no_temporal_gru", a.no_temporal_gru},
                 {"no_residual", a.no_residual},
                 {"plain_ppo", a.plain_ppo},
                 {"literal_pred_target", a.literal_pred_target}};
}

ordered reward_json(const RewardConfig& r) {
  return ordered{{"lambda_trans", r.lambda_trans},     {"lambda_col", r.lambda_col},
                 {"lambda_free", r.lambda_free},       {"r_col", r.r_col},
                 {"r_free", r.r_free},                 {"clearance_free", r.clearance_free},
                 {"literal_eq2_sign", r.literal_eq2_sign}};
}

ordered world_json(const WorldConfig& w) {
  return ordered{{"dt", w.dt},
                 {"v_max", w.v_max},
                 {"d_success", w.d_success},
                 {"max_steps", w.max_steps},
                 {"uav_collisions", w.uav_collisions},
                 {"uav_collision_radius", w.uav_collision_radius},
                 {"reward", reward_json(w.reward)}};
}

ordered ppo_json(const PpoConfig& p) {
  return ordered{{"gamma", p.gamma},
                 {"clip", p.clip},
                 {"entropy_coef", p.entropy_coef},
                 {"lr", p.lr},
                 {"delta1", p.delta1},
                 {"delta2", p.delta2},
                 {"delta3", p.delta3},
                 {"gae_lambda", p.gae_lambda},
                 {"epochs", p.epochs},
                 {"minibatch", p.minibatch},
                 {"horizon", p.horizon},
                 {"total_episodes", p.total_episodes},
                 {"segment", p.segment},
                 {"max_grad_norm", p.max_grad_norm}};
}

ordered model_json(const ModelConfig& m) {
  return ordered{{"obs", obs_json(m.obs)},
                 {"encoder", encoder_json(m.encoder)},
                 {"ablation", ablation_json(m.ablation)}};
}

}  // namespace

void validate(const RunConfig& cfg) {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::kConfigError, what); };
  validate(cfg.model);
  validate(cfg.ppo);
  if (cfg.agents < 1) fail("agents must be >= 1");
  if (cfg.updates < 0) fail("updates must be >= 0");
  if (cfg.checkpoint_every < 1) fail("checkpoint_every must be >= 1");
  if (cfg.eval_episodes < 1) fail("eval_episodes must be >= 1");
  if (!(cfg.world.dt > 0.0)) fail("world.dt must be > 0");
  if (!(cfg.world.v_max > 0.0)) fail("world.v_max must be > 0");
  if (cfg.world.max_steps < 1) fail("world.max_steps must be >= 1");
  for (int c : cfg.sweep_counts) {
    if (c < 1) fail("sweep_counts entries must be >= 1");
  }
}

std::string to_json_text(const RunConfig& cfg) {
  ordered j{{"seed", cfg.seed},
            {"deterministic", cfg.deterministic},
            {"out_dir", cfg.out_dir},
            {"mode", cfg.mode == EvalMode::kZeroShot ? "zero-shot" : "non-transfer"},
            {"agents", cfg.agents},
            {"train_maps", maps_json(cfg.train_maps)},
            {"eval_maps", maps_json(cfg.eval_maps)},
            {"world", world_json(cfg.world)},
            {"model", model_json(cfg.model)},
            {"ppo", ppo_json(cfg.ppo)},
            {"updates", cfg.updates},
            {"checkpoint_every", cfg.checkpoint_every},
            {"eval_episodes", cfg.eval_episodes},
            {"sweep_counts", cfg.sweep_counts},
            {"export_steps", cfg.export_steps}};
  return j.dump(2);
}

RunConfig run_config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kConfigError, std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  reject_unknown(j, {"seed", "deterministic", "out_dir", "mode", "agents", "train_maps",
                     "eval_maps", "world", "model", "ppo", "updates", "checkpoint_every",
                     "eval_episodes", "sweep_counts", "export_steps"},
                 "");
  read(j, "seed", c.seed, "");
  read(j, "deterministic", c.deterministic, "");
  read(j, "out_dir", c.out_dir, "");
  std::string mode = "zero-shot";
  read(j, "mode", mode, "");
  if (mode == "zero-shot") {
    c.mode = EvalMode::kZeroShot;
  } else if (mode == "non-transfer") {
    c.mode = EvalMode::kNonTransfer;
  } else {
    throw Error(ErrorCode::kConfigError, "mode must be 'zero-shot' or 'non-transfer'");
  }
  read(j, "agents", c.agents, "");
  if (j.contains("train_maps")) c.train_maps = maps_from(j["train_maps"], "train_maps");
  if (j.contains("eval_maps")) c.eval_maps = maps_from(j["eval_maps"], "eval_maps");

  if (j.contains("world")) {
    const json& w = j["world"];
    reject_unknown(w, {"dt", "v_max", "d_success", "max_steps", "uav_collisions",
                       "uav_collision_radius", "reward"},
                   "world.");
    read(w, "dt", c.world.dt, "world.");
    read(w, "v_max", c.world.v_max, "world.");
    read(w, "d_success", c.world.d_success, "world.");
    read(w, "max_steps", c.world.max_steps, "world.");
    read(w, "uav_collisions", c.world.uav_collisions, "world.");
    read(w, "uav_collision_radius", c.world.uav_collision_radius, "world.");
    if (w.contains("reward")) {
      const json& r = w["reward"];
      const std::string p = "world.reward.";
      reject_unknown(r, {"lambda_trans", "lambda_col", "lambda_free", "r_col", "r_free",
                         "clearance_free", "literal_eq2_sign"},
                     p);
      RewardConfig& rc = c.world.reward;
      read(r, "lambda_trans", rc.lambda_trans, p);
      read(r, "lambda_col", rc.lambda_col, p);
      read(r, "lambda_free", rc.lambda_free, p);
      read(r, "r_col", rc.r_col, p);
      read(r, "r_free", rc.r_free, p);
      read(r, "clearance_free", rc.clearance_free, p);
      read(r, "literal_eq2_sign", rc.literal_eq2_sign, p);
    }
  }

  if (j.contains("model")) {
    const json& m = j["model"];
    reject_unknown(m, {"obs", "encoder", "ablation"}, "model.");
    if (m.contains("obs")) {
      const json& o = m["obs"];
      const std::string p = "model.obs.";
      reject_unknown(o, {"history", "neighbors", "sensing_range", "range_sensor", "rays"}, p);
      read(o, "history", c.model.obs.history, p);
      read(o, "neighbors", c.model.obs.neighbors, p);
      read(o, "sensing_range", c.model.obs.sensing_range, p);
      read(o, "range_sensor", c.model.obs.range_sensor, p);
      read(o, "rays", c.model.obs.rays, p);
    }
    if (m.contains("encoder")) {
      const json& e = m["encoder"];
      const std::string p = "model.encoder.";
      reject_unknown(e, {"d", "d_prime", "spatial_layers", "spatial_heads", "temporal_layers",
                         "temporal_heads", "horizon", "actor_hidden", "critic_hidden"},
                     p);
      EncoderConfig& ec = c.model.encoder;
      read(e, "d", ec.d, p);
      read(e, "d_prime", ec.d_prime, p);
      read(e, "spatial_layers", ec.spatial_layers, p);
      read(e, "spatial_heads", ec.spatial_heads, p);
      read(e, "temporal_layers", ec.temporal_layers, p);
      read(e, "temporal_heads", ec.temporal_heads, p);
      read(e, "horizon", ec.horizon, p);
      read(e, "actor_hidden", ec.actor_hidden, p);
      read(e, "critic_hidden", ec.critic_hidden, p);
    }
    if (m.contains("ablation")) {
      const json& a = m["ablation"];
      const std::string p = "model.ablation.";
      reject_unknown(a, {"no_spatial", "no_temporal_gru", "no_residual", "plain_ppo",
                         "literal_pred_target"},
                     p);
      AblationFlags& af = c.model.ablation;
      read(a, "no_spatial", af.no_spatial, p);
      read(a, "no_temporal_gru", af.no_temporal_gru, p);
      read(a, "no_residual", af.no_residual, p);
      read(a, "plain_ppo", af.plain_ppo, p);
      read(a, "literal_pred_target", af.literal_pred_target, p);
    }
  }

  if (j.contains("ppo")) {
    const json& q = j["ppo"];
    const std::string p = "ppo.";
    reject_unknown(q, {"gamma", "clip", "entropy_coef", "lr", "delta1", "delta2", "delta3",
                       "gae_lambda", "epochs", "minibatch", "horizon", "total_episodes",
                       "segment", "max_grad_norm"},
                   p);
    PpoConfig& pc = c.ppo;
    read(q, "gamma", pc.gamma, p);
    read(q, "clip", pc.clip, p);
    read(q, "entropy_coef", pc.entropy_coef, p);
    read(q, "lr", pc.lr, p);
    read(q, "delta1", pc.delta1, p);
    read(q, "delta2", pc.delta2, p);
    read(q, "delta3", pc.delta3, p);
    read(q, "gae_lambda", pc.gae_lambda, p);
    read(q, "epochs", pc.epochs, p);
    read(q, "minibatch", pc.minibatch, p);
    read(q, "horizon", pc.horizon, p);
    read(q, "total_episodes", pc.total_episodes, p);
    read(q, "segment", pc.segment, p);
    read(q, "max_grad_norm", pc.max_grad_norm, p);
  }
  read(j, "updates", c.updates, "");
  read(j, "checkpoint_every", c.checkpoint_every, "");
  read(j, "eval_episodes", c.eval_episodes, "");
  read(j, "sweep_counts", c.sweep_counts, "");
  read(j, "export_steps", c.export_steps, "");
  validate(c);
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kConfigError, "cannot read config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return run_config_from_json_text(ss.str());
}

std::string model_config_json(const ModelConfig& cfg) { return model_json(cfg).dump(); }

std::uint64_t model_config_hash(const ModelConfig& cfg) { return fnv1a64(model_config_json(cfg)); }

std::shared_ptr<const ScenarioMap> materialize(const MapSource& src) {
  if (!src.file.empty()) return std::make_shared<const ScenarioMap>(load_scenario(src.file));
  return std::make_shared<const ScenarioMap>(generate_scenario(src.spec));
}

std::vector<std::shared_ptr<const ScenarioMap>> materialize(const std::vector<MapSource>& srcs) {
  std::vector<std::shared_ptr<const ScenarioMap>> out;
  out.reserve(srcs.size());
  for (const MapSource& s : srcs) out.push_back(materialize(s));
  return out;
}

}  // namespace dtppo
