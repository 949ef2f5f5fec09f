#include "dtppo/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

#include "dtppo/errors.hpp"

namespace dtppo {

void validate(const PpoConfig& cfg) {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::kConfigError, what); };
  if (!(cfg.clip > 0.0 && cfg.clip < 1.0)) fail("clip epsilon must lie in (0, 1)");
  if (!(cfg.gamma > 0.0 && cfg.gamma <= 1.0)) fail("gamma must lie in (0, 1]");
  if (!(cfg.gae_lambda >= 0.0 && cfg.gae_lambda <= 1.0)) fail("gae_lambda must lie in [0, 1]");
  if (!(cfg.delta3 >= 0.0)) fail("delta3 must be >= 0");
  if (!(cfg.lr > 0.0)) fail("learning rate must be > 0");
  if (cfg.epochs < 1) fail("epochs must be >= 1");
  if (cfg.minibatch < 1) fail("minibatch must be >= 1");
  if (cfg.horizon < 0) fail("horizon must be >= 0");
  if (cfg.segment < 1) fail("segment must be >= 1");
}

GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                      std::span<const std::uint8_t> dones, double last_value, double gamma,
                      double lambda) {
  const std::size_t T = rewards.size();
  if (values.size() != T || dones.size() != T) {
    throw Error(ErrorCode::kLengthMismatch,
                "rewards/values/dones lengths " + std::to_string(T) + "/" +
                    std::to_string(values.size()) + "/" + std::to_string(dones.size()));
  }
  GaeResult out{std::vector<double>(T), std::vector<double>(T)};
  double running = 0.0;
  for (std::size_t k = T; k-- > 0;) {
    const double next_value = k + 1 == T ? last_value : values[k + 1];
    const double keep = dones[k] ? 0.0 : 1.0;
    const double delta = rewards[k] + gamma * next_value * keep - values[k];
    running = delta + gamma * lambda * keep * running;
    out.advantages[k] = running;
    out.returns[k] = running + values[k];
  }
  return out;
}

void normalize_advantages(std::vector<double>& adv) {
  if (adv.empty()) return;
  double mean = 0.0;
  for (double a : adv) mean += a;
  mean /= static_cast<double>(adv.size());
  double var = 0.0;
  for (double a : adv) var += (a - mean) * (a - mean);
  var /= static_cast<double>(adv.size());
  const double denom = std::sqrt(var) + 1e-8;
  for (double& a : adv) a = (a - mean) / denom;
}

namespace {

// Chains of record indices, one per agent-episode, each in step order.
std::vector<std::vector<std::size_t>> chains_of(const RolloutBatch& batch) {
  const std::size_t n = batch.steps.size();
  std::vector<std::int64_t> next(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    const std::int64_t p = batch.steps[i].prev;
    if (p >= 0) next[static_cast<std::size_t>(p)] = static_cast<std::int64_t>(i);
  }
  std::vector<std::vector<std::size_t>> chains;
  for (std::size_t i = 0; i < n; ++i) {
    if (batch.steps[i].prev >= 0) continue;
    std::vector<std::size_t> c;
    for (std::int64_t k = static_cast<std::int64_t>(i); k >= 0; k = next[static_cast<std::size_t>(k)]) {
      c.push_back(static_cast<std::size_t>(k));
    }
    chains.push_back(std::move(c));
  }
  return chains;
}

}  // namespace

void assign_advantages(RolloutBatch& batch, double gamma, double lambda) {
  std::vector<double> all(batch.steps.size());
  for (const auto& chain : chains_of(batch)) {
    std::vector<double> r, v;
    std::vector<std::uint8_t> d;
    for (std::size_t i : chain) {
      const StepRecord& s = batch.steps[i];
      r.push_back(s.reward);
      v.push_back(s.value);
      d.push_back(s.terminal ? 1 : 0);
    }
    const StepRecord& tail = batch.steps[chain.back()];
    if (!tail.terminal && !tail.truncated) {
      throw std::logic_error("trajectory ends without a terminal or truncation mark");
    }
    const GaeResult g = compute_gae(r, v, d, tail.truncated ? tail.bootstrap_value : 0.0, gamma,
                                    lambda);
    for (std::size_t k = 0; k < chain.size(); ++k) {
      batch.steps[chain[k]].ret = g.returns[k];
      all[chain[k]] = g.advantages[k];
    }
  }
  normalize_advantages(all);
  for (std::size_t i = 0; i < all.size(); ++i) batch.steps[i].advantage = all[i];
}

ForwardBatch make_forward_batch(const DualTransformer& model, const RolloutBatch& batch,
                                std::span<const std::size_t> samples,
                                std::vector<std::size_t>* unique_records) {
  ForwardBatch fb;
  const std::size_t B = samples.size(), od = model.obs_dim();
  fb.obs_self = ad::Matrix(B, od);
  for (std::size_t b = 0; b < B; ++b) {
    const auto& o = batch.steps[samples[b]].obs_self;
    if (o.size() != od) throw Error(ErrorCode::kShapeMismatch, "stored observation width mismatch");
    std::copy(o.begin(), o.end(), fb.obs_self.row(b).begin());
  }
  std::vector<std::size_t> uniq;
  if (!model.config().ablation.plain_ppo) {
    const std::size_t L = model.horizon();
    std::unordered_map<std::size_t, std::int64_t> row_of;
    fb.windows.resize(B);
    for (std::size_t b = 0; b < B; ++b) {
      std::vector<std::size_t> w;
      std::int64_t k = static_cast<std::int64_t>(samples[b]);
      while (k >= 0 && w.size() < L) {
        w.push_back(static_cast<std::size_t>(k));
        k = batch.steps[static_cast<std::size_t>(k)].prev;
      }
      std::reverse(w.begin(), w.end());
      for (std::size_t rec : w) {
        auto [it, inserted] = row_of.emplace(rec, static_cast<std::int64_t>(uniq.size()));
        if (inserted) uniq.push_back(rec);
        fb.windows[b].push_back(it->second);
      }
    }
    const std::size_t width = model.slots() * model.token_width();
    fb.tokens = ad::Matrix(uniq.size(), width);
    for (std::size_t r = 0; r < uniq.size(); ++r) {
      const auto& t = batch.steps[uniq[r]].tokens;
      if (t.size() != width) throw Error(ErrorCode::kShapeMismatch, "stored token width mismatch");
      std::copy(t.begin(), t.end(), fb.tokens.row(r).begin());
    }
  }
  if (unique_records != nullptr) *unique_records = std::move(uniq);
  return fb;
}

LossEvaluation ppo_losses(ad::Graph& g, const ad::ParamStore& params, const DualTransformer& model,
                          const RolloutBatch& batch, std::span<const std::size_t> samples,
                          const PpoConfig& cfg, const ad::Matrix* frozen_target) {
  if (samples.empty()) throw Error(ErrorCode::kEmptyBatch, "no samples for the PPO loss");
  std::vector<std::size_t> uniq;
  const ForwardBatch fb = make_forward_batch(model, batch, samples, &uniq);
  const ForwardResult fr = model.forward(g, params, fb);
  const std::size_t B = samples.size();

  ad::Matrix actions(B, kActionDim), old_lp(B, 1), adv(B, 1), ret(B, 1);
  for (std::size_t b = 0; b < B; ++b) {
    const StepRecord& s = batch.steps[samples[b]];
    for (int k = 0; k < kActionDim; ++k) actions(b, k) = s.action[k];
    old_lp[b] = s.log_prob;
    adv[b] = s.advantage;
    ret[b] = s.ret;
  }
  const ad::Var lp = gaussian_log_prob(fr.heads.mean, fr.heads.log_std, actions);
  const ad::Var ratio = exp(sub(lp, g.constant(old_lp)));
  const ad::Var a = g.constant(adv);
  const ad::Var surr1 = mul(ratio, a);
  const ad::Var surr2 = mul(clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip), a);
  const ad::Var l_actor = scale(mean(minimum(surr1, surr2)), -1.0);
  const ad::Var l_critic = mse(fr.heads.value, g.constant(ret));

  ad::Var l_pred;
  ad::Matrix pred_target;
  if (model.has_predictor()) {
    const std::size_t L = model.horizon();
    std::vector<std::int64_t> prev_rows, next_rows;
    std::vector<double> joint;
    for (std::size_t b = 0; b < B; ++b) {
      const auto& w = fb.windows[b];
      const std::size_t pad = L - w.size();
      for (std::size_t j = 1; j < w.size(); ++j) {
        prev_rows.push_back(static_cast<std::int64_t>(b * L + pad + j - 1));
        next_rows.push_back(static_cast<std::int64_t>(b * L + pad + j));
        const auto f = model.joint_features(batch.steps[uniq[static_cast<std::size_t>(w[j])]].tokens);
        joint.insert(joint.end(), f.begin(), f.end());
      }
    }
    if (!prev_rows.empty()) {
      const std::size_t P = prev_rows.size();
      const ad::Var h_prev = gather_rows(fr.temporal.all, prev_rows);
      ad::Var target = model.config().ablation.literal_pred_target
                           ? stop_gradient(h_prev)
                           : stop_gradient(gather_rows(fr.temporal.all, next_rows));
      if (frozen_target != nullptr) {
        if (frozen_target->rows() != P || frozen_target->cols() != target.value().cols()) {
          throw Error(ErrorCode::kShapeMismatch, "frozen prediction target has the wrong shape");
        }
        target = g.constant(*frozen_target);
      }
      pred_target = target.value();
      const ad::Var pred = model.predict_dynamics(
          g, params, h_prev, g.constant(ad::Matrix(P, model.joint_width(), std::move(joint))));
      l_pred = mse(pred, target);
    }
  }
  if (!l_pred.valid()) l_pred = g.constant(ad::Matrix(1, 1));

  const ad::Var entropy = gaussian_entropy(fr.heads.log_std);
  const ad::Var total =
      add(add(add(scale(l_actor, cfg.delta1), scale(l_critic, cfg.delta2)), scale(l_pred, cfg.delta3)),
          scale(entropy, -cfg.entropy_coef));

  LossEvaluation ev;
  ev.total = total;
  ev.report.l_actor = l_actor.value()[0];
  ev.report.l_critic = l_critic.value()[0];
  ev.report.l_pred = l_pred.value()[0];
  ev.report.entropy = entropy.value()[0];
  ev.report.l_total = total.value()[0];
  ev.ratios.assign(ratio.value().values().begin(), ratio.value().values().end());
  ev.log_probs.assign(lp.value().values().begin(), lp.value().values().end());
  ev.pred_target = std::move(pred_target);
  double clipped = 0.0, kl = 0.0;
  for (double r : ev.ratios) {
    if (std::abs(r - 1.0) > cfg.clip) clipped += 1.0;
    kl += (r - 1.0) - std::log(r);
  }
  ev.report.clip_fraction = clipped / static_cast<double>(B);
  ev.report.approx_kl = kl / static_cast<double>(B);
  return ev;
}

double clipped_surrogate_loss(std::span<const double> ratios, std::span<const double> advantages,
                              double clip) {
  if (ratios.size() != advantages.size()) {
    throw Error(ErrorCode::kLengthMismatch, "ratios and advantages differ in length");
  }
  if (ratios.empty()) throw Error(ErrorCode::kEmptyBatch, "no samples");
  double s = 0.0;
  for (std::size_t i = 0; i < ratios.size(); ++i) {
    const double r = ratios[i], a = advantages[i];
    s += std::min(r * a, std::clamp(r, 1.0 - clip, 1.0 + clip) * a);
  }
  return -(s / static_cast<double>(ratios.size()));
}

std::vector<std::vector<std::size_t>> make_minibatches(const RolloutBatch& batch, int segment,
                                                       int minibatch, std::mt19937_64& rng) {
  std::vector<std::vector<std::size_t>> segments;
  for (const auto& chain : chains_of(batch)) {
    for (std::size_t start = 0; start < chain.size(); start += static_cast<std::size_t>(segment)) {
      const std::size_t end = std::min(chain.size(), start + static_cast<std::size_t>(segment));
      segments.emplace_back(chain.begin() + static_cast<std::ptrdiff_t>(start),
                            chain.begin() + static_cast<std::ptrdiff_t>(end));
    }
  }
  std::shuffle(segments.begin(), segments.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  std::vector<std::size_t> current;
  for (const auto& s : segments) {
    current.insert(current.end(), s.begin(), s.end());
    if (current.size() >= static_cast<std::size_t>(minibatch)) {
      out.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

}  // namespace dtppo
