#include "dtppo/rollout.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

#include "dtppo/errors.hpp"

namespace dtppo {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// ---------------------------------------------------------------------------
// EpisodeRunner

EpisodeRunner::EpisodeRunner(std::shared_ptr<const ScenarioMap> map, int agents,
                             const WorldConfig& world, const ObsConfig& obs, std::uint64_t seed)
    : world_(reset(std::move(map), agents, seed)),
      world_cfg_(world),
      obs_cfg_(obs),
      histories_(agents, ActionHistory(obs.history)),
      prev_actions_(agents, std::array<double, kActionDim>{}),
      prev_rewards_(agents, 0.0),
      transfer_sum_(agents, 0.0),
      collision_count_(agents, 0.0),
      free_sum_(agents, 0.0) {}

std::vector<int> EpisodeRunner::live_agents() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < world_.agent_count(); ++i) {
    if (!world_.done[i]) out.push_back(static_cast<int>(i));
  }
  return out;
}

AgentInput EpisodeRunner::input(int agent) const {
  AgentInput in;
  const auto tokens =
      build_mdp_tokens(agent, world_, histories_, prev_actions_, prev_rewards_, obs_cfg_);
  append_token_row(tokens, in.tokens);
  in.obs_self = build_observation(world_.uavs[agent], histories_[agent], obs_cfg_, world_.map.get());
  return in;
}

StepResult EpisodeRunner::step(std::span<const ControlAction> actions) {
  StepResult res = dtppo::step(world_, actions, world_cfg_);
  std::vector<StepRewardLog> row(world_.agent_count());
  for (std::size_t i = 0; i < world_.agent_count(); ++i) {
    if (!res.acted[i]) continue;
    const auto applied = clamp_action(actions[i]);
    histories_[i].push(applied);
    prev_actions_[i] = applied;
    prev_rewards_[i] = res.rewards[i].r_total;
    transfer_sum_[i] += res.rewards[i].r_trans;
    collision_count_[i] += res.collided[i] ? 1.0 : 0.0;
    free_sum_[i] += res.rewards[i].r_free_applied;
    row[i] = StepRewardLog{1, res.collided[i], res.rewards[i]};
  }
  log_.push_back(std::move(row));
  return res;
}

// ---------------------------------------------------------------------------
// PolicyStepper

PolicyStepper::PolicyStepper(const DualTransformer& model, const ad::ParamStore& params, int agents)
    : model_(model), params_(params), cache_(agents) {}

void PolicyStepper::reset() {
  for (auto& c : cache_) c.clear();
}

PolicyOutput PolicyStepper::act(std::span<const int> agents, std::span<const AgentInput> inputs,
                                ActionMode mode, std::mt19937_64* rng, bool commit) {
  PolicyOutput out;
  const std::size_t B = agents.size();
  if (B == 0) return out;
  const std::size_t od = model_.obs_dim();
  ad::Graph g(false);
  ad::Matrix obs_self(B, od);
  for (std::size_t b = 0; b < B; ++b) {
    if (inputs[b].obs_self.size() != od) {
      throw Error(ErrorCode::kShapeMismatch, "observation width mismatch");
    }
    std::copy(inputs[b].obs_self.begin(), inputs[b].obs_self.end(), obs_self.row(b).begin());
  }

  ad::Var x;
  ad::Matrix fresh;
  if (model_.config().ablation.plain_ppo) {
    x = model_.policy_input(g, params_, ad::Var{}, obs_self);
    out.embeddings = x.value();
  } else {
    const std::size_t width = model_.slots() * model_.token_width();
    ad::Matrix tokens(B, width);
    for (std::size_t b = 0; b < B; ++b) {
      if (inputs[b].tokens.size() != width) {
        throw Error(ErrorCode::kShapeMismatch, "token row width mismatch");
      }
      std::copy(inputs[b].tokens.begin(), inputs[b].tokens.end(), tokens.row(b).begin());
    }
    fresh = model_.spatial_forward(g, params_, tokens).value();
    const std::size_t d = fresh.cols();
    std::size_t rows = B;
    for (int a : agents) rows += cache_[a].size();
    ad::Matrix all(rows, d);
    std::vector<std::vector<std::int64_t>> windows(B);
    std::size_t r = 0;
    for (std::size_t b = 0; b < B; ++b) {
      for (const auto& cached : cache_[agents[b]]) {
        std::copy(cached.begin(), cached.end(), all.row(r).begin());
        windows[b].push_back(static_cast<std::int64_t>(r++));
      }
      std::copy(fresh.row(b).begin(), fresh.row(b).end(), all.row(r).begin());
      windows[b].push_back(static_cast<std::int64_t>(r++));
    }
    const TemporalOutput t = model_.temporal_forward(g, params_, g.constant(std::move(all)), windows);
    out.embeddings = t.last.value();
    x = model_.policy_input(g, params_, t.last, obs_self);
  }
  const PolicyHeads h = model_.heads(g, params_, x);

  const ad::Matrix& mean = h.mean.value();
  const ad::Matrix& log_std = h.log_std.value();
  ad::Matrix actions = mean;
  if (mode == ActionMode::kSample) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t b = 0; b < B; ++b) {
      for (int k = 0; k < kActionDim; ++k) actions(b, k) += std::exp(log_std[k]) * normal(*rng);
    }
  }
  const ad::Matrix lp = gaussian_log_prob(h.mean, h.log_std, actions).value();
  out.actions.resize(B);
  out.log_probs.resize(B);
  out.values.resize(B);
  for (std::size_t b = 0; b < B; ++b) {
    for (int k = 0; k < kActionDim; ++k) out.actions[b].raw[k] = actions(b, k);
    out.log_probs[b] = lp[b];
    out.values[b] = h.value.value()[b];
  }

  if (commit && !fresh.empty()) {
    const std::size_t keep = model_.horizon() - 1;
    for (std::size_t b = 0; b < B; ++b) {
      auto& c = cache_[agents[b]];
      c.emplace_back(fresh.row(b).begin(), fresh.row(b).end());
      while (c.size() > keep) c.erase(c.begin());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Episode stats

namespace {

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

double EpisodeStats::mean_transfer() const { return mean_of(transfer); }
double EpisodeStats::mean_collisions() const { return mean_of(collisions); }
double EpisodeStats::mean_free_space() const { return mean_of(free_space); }
double EpisodeStats::success_rate() const {
  std::vector<double> r(reached.begin(), reached.end());
  return mean_of(r);
}

// ---------------------------------------------------------------------------
// Collection

namespace {

EpisodeStats stats_of(const EpisodeRunner& runner, int scenario, std::int64_t episode) {
  EpisodeStats s;
  s.scenario_id = runner.world().map->scenario_id;
  s.scenario = scenario;
  s.episode = episode;
  s.steps = runner.world().step_index;
  s.transfer = runner.transfer_sum();
  s.collisions = runner.collision_count();
  s.free_space = runner.free_sum();
  s.reached = runner.world().reached_goal;
  return s;
}

RolloutBatch collect_scenario(const std::shared_ptr<const ScenarioMap>& map, int scenario,
                              const DualTransformer& model, const ad::ParamStore& params,
                              const RolloutSettings& settings, std::uint64_t seed) {
  RolloutBatch out;
  out.env_steps.push_back(0);
  if (settings.horizon <= 0) return out;
  const std::uint64_t stream = mix_seed(seed, static_cast<std::uint64_t>(scenario));
  std::mt19937_64 rng(stream);
  const ObsConfig& obs = model.config().obs;
  const int m = settings.agents;

  std::int64_t episode = 0;
  auto runner = std::make_unique<EpisodeRunner>(map, m, settings.world, obs, mix_seed(stream, 0));
  PolicyStepper stepper(model, params, m);
  std::vector<std::int64_t> last(m, -1);

  // Bootstrap values for agents whose trajectory is cut while still flying.
  auto bootstrap = [&](const std::vector<int>& agents) {
    std::vector<AgentInput> in;
    for (int a : agents) in.push_back(runner->input(a));
    const PolicyOutput po = stepper.act(agents, in, ActionMode::kGreedy, nullptr, false);
    for (std::size_t b = 0; b < agents.size(); ++b) {
      StepRecord& rec = out.steps[static_cast<std::size_t>(last[agents[b]])];
      rec.truncated = true;
      rec.bootstrap_value = po.values[b];
    }
  };

  for (int t = 0; t < settings.horizon; ++t) {
    const std::vector<int> live = runner->live_agents();
    std::vector<AgentInput> inputs;
    inputs.reserve(live.size());
    for (int a : live) inputs.push_back(runner->input(a));
    const PolicyOutput po = stepper.act(live, inputs, ActionMode::kSample, &rng);

    std::vector<ControlAction> joint(m);
    for (std::size_t b = 0; b < live.size(); ++b) {
      const int a = live[b];
      joint[a] = po.actions[b];
      StepRecord rec;
      rec.scenario = scenario;
      rec.agent = a;
      rec.episode = episode;
      rec.step = runner->world().step_index;
      rec.prev = last[a];
      rec.tokens = std::move(inputs[b].tokens);
      rec.obs_self = std::move(inputs[b].obs_self);
      rec.action = po.actions[b].raw;
      rec.log_prob = po.log_probs[b];
      rec.value = po.values[b];
      last[a] = static_cast<std::int64_t>(out.steps.size());
      out.steps.push_back(std::move(rec));
    }

    const StepResult res = runner->step(joint);
    ++out.env_steps[0];
    std::vector<int> cut;
    for (int a : live) {
      StepRecord& rec = out.steps[static_cast<std::size_t>(last[a])];
      rec.reward = res.rewards[a].r_total;
      if (runner->world().reached_goal[a]) {
        rec.terminal = true;
      } else if (res.done[a]) {
        cut.push_back(a);
      }
    }
    if (!cut.empty()) bootstrap(cut);

    if (runner->finished()) {
      out.episodes.push_back(stats_of(*runner, scenario, episode));
      ++episode;
      runner = std::make_unique<EpisodeRunner>(map, m, settings.world, obs,
                                               mix_seed(stream, static_cast<std::uint64_t>(episode)));
      stepper.reset();
      std::fill(last.begin(), last.end(), -1);
    }
  }

  std::vector<int> flying;
  for (int a : runner->live_agents()) {
    if (last[a] >= 0) flying.push_back(a);
  }
  if (!flying.empty()) bootstrap(flying);
  return out;
}

}  // namespace

RolloutBatch collect_rollouts(std::span<const std::shared_ptr<const ScenarioMap>> maps,
                              const DualTransformer& model, const ad::ParamStore& params,
                              const RolloutSettings& settings, std::uint64_t seed) {
  std::vector<RolloutBatch> parts(maps.size());
  if (settings.parallel && maps.size() > 1) {
    std::vector<std::thread> workers;
    std::vector<std::exception_ptr> errors(maps.size());
    for (std::size_t s = 0; s < maps.size(); ++s) {
      workers.emplace_back([&, s] {
        try {
          parts[s] = collect_scenario(maps[s], static_cast<int>(s), model, params, settings, seed);
        } catch (...) {
          errors[s] = std::current_exception();
        }
      });
    }
    for (auto& w : workers) w.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  } else {
    for (std::size_t s = 0; s < maps.size(); ++s) {
      parts[s] = collect_scenario(maps[s], static_cast<int>(s), model, params, settings, seed);
    }
  }

  RolloutBatch out;
  for (RolloutBatch& p : parts) {
    const auto base = static_cast<std::int64_t>(out.steps.size());
    for (StepRecord& r : p.steps) {
      if (r.prev >= 0) r.prev += base;
      out.steps.push_back(std::move(r));
    }
    for (EpisodeStats& e : p.episodes) out.episodes.push_back(std::move(e));
    out.env_steps.push_back(p.env_steps.empty() ? 0 : p.env_steps[0]);
  }
  return out;
}

}  // namespace dtppo
