#include "dtppo/encoder.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "dtppo/errors.hpp"
#include "dtppo/nn.hpp"

namespace dtppo {

using ad::Graph;
using ad::Matrix;
using ad::ParamStore;
using ad::Var;

void validate(const AblationFlags& flags) {
  const int primary = int(flags.no_spatial) + int(flags.no_temporal_gru) + int(flags.plain_ppo);
  if (primary > 1) {
    throw Error(ErrorCode::kConflictingFlags,
                "at most one of no_spatial, no_temporal_gru, plain_ppo may be set");
  }
  if (flags.plain_ppo && flags.no_residual) {
    throw Error(ErrorCode::kConflictingFlags,
                "plain_ppo acts on the observation projection; no_residual would leave no input");
  }
}

void validate(const ModelConfig& cfg) {
  validate(cfg.obs);
  validate(cfg.ablation);
  const EncoderConfig& e = cfg.encoder;
  if (e.d < 1 || e.d_prime < 1) throw Error(ErrorCode::kConfigError, "embedding widths must be >= 1");
  if (e.spatial_layers < 0 || e.temporal_layers < 0) {
    throw Error(ErrorCode::kConfigError, "layer counts must be >= 0");
  }
  if (e.spatial_heads < 1 || e.temporal_heads < 1) {
    throw Error(ErrorCode::kConfigError, "head counts must be >= 1");
  }
  if (e.horizon < 1) throw Error(ErrorCode::kConfigError, "temporal horizon L must be >= 1");
  if (e.actor_hidden < 1 || e.critic_hidden < 1) {
    throw Error(ErrorCode::kConfigError, "head widths must be >= 1");
  }
}

DualTransformer::DualTransformer(ModelConfig cfg) : cfg_(std::move(cfg)) { validate(cfg_); }

ParamStore DualTransformer::init(std::uint64_t seed) const {
  std::mt19937_64 rng(seed);
  ParamStore p;
  const std::size_t d = cfg_.encoder.d, dp = cfg_.encoder.d_prime, od = obs_dim();
  const AblationFlags& ab = cfg_.ablation;
  auto tn = [&](std::size_t r, std::size_t c) { return ad::truncated_normal(r, c, ad::kInitStd, rng); };

  if (!ab.plain_ppo) {
    p.add("spatial.W_o", tn(od + 1, d));
    p.add("spatial.W_a", tn(kActionDim + 1, d));
    p.add("spatial.W_r", tn(1, d));
    if (ab.no_spatial) {
      ad::add_linear(p, "spatial.pool", d, d, rng, true, "W1", "b1");
      ad::add_linear(p, "spatial.pool", d, d, rng, true, "W2", "b2");
    } else {
      p.add("spatial.decision", tn(1, d));
      p.add("spatial.pos_emb", tn(spatial_token_count(), d));
      for (int k = 0; k < cfg_.encoder.spatial_layers; ++k) {
        ad::add_transformer_block(p, "spatial.block" + std::to_string(k), d,
                                  cfg_.encoder.spatial_heads, rng);
      }
      ad::add_layer_norm(p, "spatial.ln_f", d);
    }

    if (ab.no_temporal_gru) {
      for (const char* gate : {"z", "r", "h"}) {
        p.add(std::string("temporal_gru.W_") + gate, tn(d, dp));
        p.add(std::string("temporal_gru.U_") + gate, tn(dp, dp));
        p.add(std::string("temporal_gru.b_") + gate, Matrix(1, dp));
      }
    } else {
      p.add("temporal.W_proj", tn(d, dp));
      p.add("temporal.pos_emb", tn(horizon(), dp));
      for (int k = 0; k < cfg_.encoder.temporal_layers; ++k) {
        ad::add_transformer_block(p, "temporal.block" + std::to_string(k), dp,
                                  cfg_.encoder.temporal_heads, rng);
      }
      ad::add_layer_norm(p, "temporal.ln_f", dp);
    }
    ad::add_linear(p, "predictor", dp + joint_width(), dp, rng);
  }

  if (!ab.no_residual && od != dp) p.add("residual.P_o", tn(od, dp));

  const std::size_t ah = cfg_.encoder.actor_hidden, ch = cfg_.encoder.critic_hidden;
  ad::add_linear(p, "actor", dp, ah, rng, true, "W1", "b1");
  ad::add_linear(p, "actor", ah, kActionDim, rng, true, "W2", "b2");
  p.add("actor.log_std", Matrix(1, kActionDim));
  ad::add_linear(p, "critic", dp, ch, rng, true, "W1", "b1");
  ad::add_linear(p, "critic", ch, 1, rng, true, "W2", "b2");
  return p;
}

namespace {

struct SplitTokens {
  Matrix obs;   // (S*slots) x (obs_dim+1)
  Matrix act;   // (S*slots) x 5
  Matrix rew;   // (S*slots) x 1
  std::vector<std::uint8_t> present;
};

SplitTokens split_tokens(const Matrix& tokens, std::size_t slots, std::size_t od) {
  const std::size_t tw = od + 1 + kActionDim + 1 + 1;
  if (tokens.cols() != slots * tw) {
    throw Error(ErrorCode::kShapeMismatch,
                "token rows must have " + std::to_string(slots * tw) + " columns, got " +
                    tokens.shape_string());
  }
  const std::size_t n = tokens.rows() * slots;
  SplitTokens out{Matrix(n, od + 1), Matrix(n, kActionDim + 1), Matrix(n, 1),
                  std::vector<std::uint8_t>(n)};
  for (std::size_t s = 0; s < tokens.rows(); ++s) {
    for (std::size_t k = 0; k < slots; ++k) {
      const std::size_t r = s * slots + k;
      const double* src = tokens.data() + s * tokens.cols() + k * tw;
      std::copy(src, src + od + 1, out.obs.data() + r * (od + 1));
      std::copy(src + od + 1, src + od + 1 + kActionDim + 1, out.act.data() + r * (kActionDim + 1));
      out.rew[r] = src[od + 1 + kActionDim + 1];
      out.present[r] = src[od] != 0.0 ? 1 : 0;
    }
  }
  return out;
}

}  // namespace

Var DualTransformer::spatial_forward(Graph& g, const ParamStore& p, const Matrix& tokens) const {
  if (cfg_.ablation.plain_ppo) {
    throw Error(ErrorCode::kConfigError, "plain_ppo has no spatial encoder");
  }
  if (cfg_.ablation.no_spatial) return spatial_pool_forward(g, p, tokens);
  const std::size_t S = tokens.rows(), slots = this->slots(), T = spatial_token_count();
  SplitTokens split = split_tokens(tokens, slots, obs_dim());
  const std::size_t n = S * slots;

  const Var po = matmul(g.constant(std::move(split.obs)), g.parameter(p, "spatial.W_o"));
  const Var pa = matmul(g.constant(std::move(split.act)), g.parameter(p, "spatial.W_a"));
  const Var pr = matmul(g.constant(std::move(split.rew)), g.parameter(p, "spatial.W_r"));
  const Var pool = ad::concat_rows({g.parameter(p, "spatial.decision"), po, pa, pr});

  // Per step: [decision, o_0, a_0, r_0, o_1, a_1, r_1, ...].
  std::vector<std::int64_t> index(S * T);
  std::vector<std::uint8_t> valid(S * T);
  for (std::size_t s = 0; s < S; ++s) {
    index[s * T] = 0;
    valid[s * T] = 1;
    for (std::size_t k = 0; k < slots; ++k) {
      for (std::size_t c = 0; c < 3; ++c) {
        const std::size_t t = 1 + 3 * k + c;
        index[s * T + t] = static_cast<std::int64_t>(1 + c * n + s * slots + k);
        valid[s * T + t] = split.present[s * slots + k];
      }
    }
  }
  Var x = add_tiled(gather_rows(pool, std::move(index)), g.parameter(p, "spatial.pos_emb"));
  ad::AttentionLayout layout;
  layout.block = T;
  layout.heads = static_cast<std::size_t>(cfg_.encoder.spatial_heads);
  layout.valid = std::move(valid);
  for (int k = 0; k < cfg_.encoder.spatial_layers; ++k) {
    x = ad::transformer_block(g, p, "spatial.block" + std::to_string(k), x, layout);
  }
  x = ad::layer_norm_named(g, p, "spatial.ln_f", x);
  std::vector<std::int64_t> decision(S);
  for (std::size_t s = 0; s < S; ++s) decision[s] = static_cast<std::int64_t>(s * T);
  return gather_rows(x, std::move(decision));
}

Var DualTransformer::spatial_pool_forward(Graph& g, const ParamStore& p,
                                          const Matrix& tokens) const {
  const std::size_t S = tokens.rows(), slots = this->slots(), T = 3 * slots;
  SplitTokens split = split_tokens(tokens, slots, obs_dim());
  const std::size_t n = S * slots;
  const Var po = matmul(g.constant(std::move(split.obs)), g.parameter(p, "spatial.W_o"));
  const Var pa = matmul(g.constant(std::move(split.act)), g.parameter(p, "spatial.W_a"));
  const Var pr = matmul(g.constant(std::move(split.rew)), g.parameter(p, "spatial.W_r"));
  const Var pool = ad::concat_rows({po, pa, pr});
  std::vector<std::int64_t> index(S * T);
  std::vector<std::uint8_t> valid(S * T);
  for (std::size_t s = 0; s < S; ++s) {
    for (std::size_t k = 0; k < slots; ++k) {
      for (std::size_t c = 0; c < 3; ++c) {
        index[s * T + 3 * k + c] = static_cast<std::int64_t>(c * n + s * slots + k);
        valid[s * T + 3 * k + c] = split.present[s * slots + k];
      }
    }
  }
  const Var mean = block_masked_mean(gather_rows(pool, std::move(index)), T, valid);
  const Var h = gelu(linear(mean, g.parameter(p, "spatial.pool.W1"), g.parameter(p, "spatial.pool.b1")));
  return linear(h, g.parameter(p, "spatial.pool.W2"), g.parameter(p, "spatial.pool.b2"));
}

TemporalOutput DualTransformer::temporal_forward(
    Graph& g, const ParamStore& p, Var spatial,
    const std::vector<std::vector<std::int64_t>>& windows) const {
  const std::size_t L = horizon(), B = windows.size();
  if (B == 0) throw Error(ErrorCode::kEmptyBatch, "temporal_forward needs at least one window");
  std::vector<std::int64_t> index(B * L, -1);
  for (std::size_t b = 0; b < B; ++b) {
    const auto& w = windows[b];
    if (w.size() > L) {
      throw Error(ErrorCode::kWindowTooLong, "window of " + std::to_string(w.size()) +
                                                 " steps exceeds horizon " + std::to_string(L));
    }
    const std::size_t pad = L - w.size();
    for (std::size_t j = 0; j < w.size(); ++j) index[b * L + pad + j] = w[j];
  }
  TemporalOutput out;
  out.horizon = L;
  out.valid.resize(B * L);
  for (std::size_t i = 0; i < index.size(); ++i) out.valid[i] = index[i] >= 0 ? 1 : 0;

  if (cfg_.ablation.no_temporal_gru) {
    out.all = gru_forward(g, p, gather_rows(spatial, std::move(index)), out.valid, B);
  } else {
    const Var proj = matmul(spatial, g.parameter(p, "temporal.W_proj"));
    Var x = add_tiled(gather_rows(proj, std::move(index)), g.parameter(p, "temporal.pos_emb"));
    ad::AttentionLayout layout;
    layout.block = L;
    layout.heads = static_cast<std::size_t>(cfg_.encoder.temporal_heads);
    layout.valid = out.valid;
    layout.causal = true;
    for (int k = 0; k < cfg_.encoder.temporal_layers; ++k) {
      x = ad::transformer_block(g, p, "temporal.block" + std::to_string(k), x, layout);
    }
    out.all = mask_rows(ad::layer_norm_named(g, p, "temporal.ln_f", x), out.valid);
  }
  std::vector<std::int64_t> last(B);
  for (std::size_t b = 0; b < B; ++b) last[b] = static_cast<std::int64_t>(b * L + L - 1);
  out.last = gather_rows(out.all, std::move(last));
  return out;
}

Var DualTransformer::gru_forward(Graph& g, const ParamStore& p, Var x,
                                 const std::vector<std::uint8_t>& valid, std::size_t B) const {
  const std::size_t L = horizon(), dp = cfg_.encoder.d_prime;
  auto w = [&](const std::string& n) { return g.parameter(p, "temporal_gru." + n); };
  Var h = g.constant(Matrix(B, dp));
  std::vector<Var> steps;
  steps.reserve(L);
  for (std::size_t l = 0; l < L; ++l) {
    std::vector<std::int64_t> rows(B);
    std::vector<std::uint8_t> on(B), off(B);
    for (std::size_t b = 0; b < B; ++b) {
      rows[b] = static_cast<std::int64_t>(b * L + l);
      on[b] = valid[b * L + l];
      off[b] = on[b] ? 0 : 1;
    }
    const Var xl = gather_rows(x, std::move(rows));
    const Var z = sigmoid(add(linear(xl, w("W_z"), w("b_z")), matmul(h, w("U_z"))));
    const Var r = sigmoid(add(linear(xl, w("W_r"), w("b_r")), matmul(h, w("U_r"))));
    const Var cand = tanh(add(linear(xl, w("W_h"), w("b_h")), matmul(mul(r, h), w("U_h"))));
    const Var next = add(h, mul(z, sub(cand, h)));
    // Empty positions carry the state through unchanged.
    h = add(mask_rows(next, on), mask_rows(h, off));
    steps.push_back(h);
  }
  std::vector<std::int64_t> order(B * L);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t l = 0; l < L; ++l) order[b * L + l] = static_cast<std::int64_t>(l * B + b);
  }
  return gather_rows(ad::concat_rows(steps), std::move(order));
}

Var DualTransformer::predict_dynamics(Graph& g, const ParamStore& p, Var h_prev, Var joint) const {
  if (!has_predictor()) throw Error(ErrorCode::kConfigError, "plain_ppo has no dynamics predictor");
  if (joint.cols() != joint_width()) {
    throw Error(ErrorCode::kShapeMismatch, "joint action/reward features " +
                                               joint.value().shape_string() + ", expected " +
                                               std::to_string(joint_width()) + " columns");
  }
  const Var in = ad::concat_cols({h_prev, joint});
  return gelu(linear(in, g.parameter(p, "predictor.W"), g.parameter(p, "predictor.b")));
}

Var DualTransformer::policy_input(Graph& g, const ParamStore& p, Var h_out,
                                  const Matrix& obs_self) const {
  const AblationFlags& ab = cfg_.ablation;
  if (ab.no_residual) return h_out;
  if (obs_self.cols() != obs_dim()) {
    throw Error(ErrorCode::kShapeMismatch, "own observation " + obs_self.shape_string() +
                                               ", expected " + std::to_string(obs_dim()) +
                                               " columns");
  }
  Var proj = g.constant(obs_self);
  if (p.contains("residual.P_o")) proj = matmul(proj, g.parameter(p, "residual.P_o"));
  if (ab.plain_ppo) return proj;
  if (h_out.rows() != obs_self.rows()) {
    throw Error(ErrorCode::kShapeMismatch, "temporal embedding " + h_out.value().shape_string() +
                                               " vs own observation " + obs_self.shape_string());
  }
  return add(h_out, proj);
}

PolicyHeads DualTransformer::heads(Graph& g, const ParamStore& p, Var x) const {
  auto w = [&](const char* n) { return g.parameter(p, n); };
  PolicyHeads out;
  const Var ah = tanh(linear(x, w("actor.W1"), w("actor.b1")));
  out.mean = tanh(linear(ah, w("actor.W2"), w("actor.b2")));
  out.log_std = clamp(w("actor.log_std"), kLogStdMin, kLogStdMax);
  const Var ch = tanh(linear(x, w("critic.W1"), w("critic.b1")));
  out.value = linear(ch, w("critic.W2"), w("critic.b2"));
  return out;
}

ForwardResult DualTransformer::forward(Graph& g, const ParamStore& p,
                                       const ForwardBatch& batch) const {
  if (batch.obs_self.rows() == 0) throw Error(ErrorCode::kEmptyBatch, "forward on an empty batch");
  ForwardResult r;
  if (cfg_.ablation.plain_ppo) {
    r.policy_input = policy_input(g, p, Var{}, batch.obs_self);
  } else {
    if (batch.windows.size() != batch.obs_self.rows()) {
      throw Error(ErrorCode::kShapeMismatch,
                  std::to_string(batch.windows.size()) + " windows but " +
                      std::to_string(batch.obs_self.rows()) + " observation rows");
    }
    r.spatial = spatial_forward(g, p, batch.tokens);
    r.temporal = temporal_forward(g, p, r.spatial, batch.windows);
    r.policy_input = policy_input(g, p, r.temporal.last, batch.obs_self);
  }
  r.heads = heads(g, p, r.policy_input);
  return r;
}

std::vector<double> DualTransformer::joint_features(std::span<const double> token_row) const {
  const std::size_t tw = token_width(), od = obs_dim(), n = slots();
  if (token_row.size() != n * tw) {
    throw Error(ErrorCode::kShapeMismatch, "token row of " + std::to_string(token_row.size()) +
                                               " values, expected " + std::to_string(n * tw));
  }
  std::vector<double> out(joint_width());
  for (std::size_t k = 0; k < n; ++k) {
    const double* src = token_row.data() + k * tw + od + 1;
    std::copy(src, src + kActionDim + 1, out.begin() + k * (kActionDim + 1));
    out[n * (kActionDim + 1) + k] = src[kActionDim + 1];
  }
  return out;
}

Var gaussian_log_prob(Var mean, Var log_std, const Matrix& actions) {
  Graph& g = mean.graph();
  const Var diff = sub(g.constant(actions), mean);
  const Var z = mul_row(diff, exp(scale(log_std, -1.0)));
  const Var quad = scale(row_sum(square(z)), -0.5);
  const double norm = -0.5 * kActionDim * std::log(2.0 * std::numbers::pi);
  return add_scalar(add_row(quad, scale(sum(log_std), -1.0)), norm);
}

Var gaussian_entropy(Var log_std) {
  const double per_dim = 0.5 + 0.5 * std::log(2.0 * std::numbers::pi);
  return add_scalar(sum(log_std), per_dim * log_std.cols());
}

bool has_parameter_group(const ParamStore& p, const std::string& prefix) {
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p.name(i).rfind(prefix, 0) == 0) return true;
  }
  return false;
}

}  // namespace dtppo
