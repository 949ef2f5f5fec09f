#pragma once

// Spatial transformer over per-drone MDP tokens, temporal transformer over a
// window of spatial embeddings, dynamics predictor and the residual policy
// input. Ablated variants swap components while keeping the same interface.

#include <cstdint>
#include <string>
#include <vector>

#include "dtppo/autodiff.hpp"
#include "dtppo/observation.hpp"
#include "dtppo/param_store.hpp"

namespace dtppo {

struct EncoderConfig {
  int d = 149;        // spatial embedding width
  int d_prime = 149;  // temporal embedding width
  int spatial_layers = 3;
  int spatial_heads = 6;
  int temporal_layers = 3;
  int temporal_heads = 6;
  int horizon = 20;  // L
  int actor_hidden = 64;
  int critic_hidden = 64;
};

struct AblationFlags {
  bool no_spatial = false;       // mean-pool + perceptron instead of the spatial transformer
  bool no_temporal_gru = false;  // GRU instead of the temporal transformer
  bool no_residual = false;      // drop the observation term from the policy input
  bool plain_ppo = false;        // policy acts on the projected own observation only
  bool literal_pred_target = false;  // regress the prediction onto the previous embedding
};

/// Throws Error(kConflictingFlags) for more than one of
/// {no_spatial, no_temporal_gru, plain_ppo}, or plain_ppo with no_residual.
void validate(const AblationFlags& flags);

struct ModelConfig {
  ObsConfig obs;
  EncoderConfig encoder;
  AblationFlags ablation;
};

void validate(const ModelConfig& cfg);

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;

/// Output of the temporal stage. Row b*L + j of `all` is position j of
/// window b; `valid` flags the rows that hold a real step.
struct TemporalOutput {
  ad::Var all;
  ad::Var last;  // one row per window: position L-1
  std::vector<std::uint8_t> valid;
  std::size_t horizon = 0;
};

struct PolicyHeads {
  ad::Var mean;     // B x 4, tanh-squashed
  ad::Var log_std;  // 1 x 4, clamped
  ad::Var value;    // B x 1
};

/// Inputs for a batched forward pass. Each window lists row indices into
/// `tokens` in chronological order; a window shorter than L is aligned to
/// the end, and -1 marks an empty position.
struct ForwardBatch {
  ad::Matrix tokens;    // unique agent-steps x (slots * token_width)
  std::vector<std::vector<std::int64_t>> windows;
  ad::Matrix obs_self;  // one row per window
};

struct ForwardResult {
  ad::Var spatial;
  TemporalOutput temporal;
  ad::Var policy_input;
  PolicyHeads heads;
};

class DualTransformer {
 public:
  explicit DualTransformer(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  std::size_t slots() const { return static_cast<std::size_t>(cfg_.obs.slots()); }
  std::size_t token_width() const { return static_cast<std::size_t>(cfg_.obs.token_width()); }
  std::size_t obs_dim() const { return static_cast<std::size_t>(cfg_.obs.obs_dim()); }
  /// 1 + 3(n+1): decision token plus three tokens per slot.
  std::size_t spatial_token_count() const { return 1 + 3 * slots(); }
  std::size_t horizon() const { return static_cast<std::size_t>(cfg_.encoder.horizon); }
  /// Width of the predictor's action/reward input: 5 per slot + 1 per slot.
  std::size_t joint_width() const { return 6 * slots(); }
  bool has_predictor() const { return !cfg_.ablation.plain_ppo; }

  /// Fresh parameters for this architecture, deterministic in `seed`.
  ad::ParamStore init(std::uint64_t seed) const;

  /// One embedding row per token row (S x d).
  ad::Var spatial_forward(ad::Graph& g, const ad::ParamStore& p, const ad::Matrix& tokens) const;

  /// Throws Error(kWindowTooLong) if a window has more than L entries.
  TemporalOutput temporal_forward(ad::Graph& g, const ad::ParamStore& p, ad::Var spatial,
                                  const std::vector<std::vector<std::int64_t>>& windows) const;

  /// gelu(W [h_prev | joint] + b), one prediction per row.
  ad::Var predict_dynamics(ad::Graph& g, const ad::ParamStore& p, ad::Var h_prev,
                           ad::Var joint) const;

  /// h_out + P_o o_self (P_o is the identity when widths match). With
  /// no_residual returns h_out; with plain_ppo `h_out` is ignored.
  ad::Var policy_input(ad::Graph& g, const ad::ParamStore& p, ad::Var h_out,
                       const ad::Matrix& obs_self) const;

  PolicyHeads heads(ad::Graph& g, const ad::ParamStore& p, ad::Var x) const;

  ForwardResult forward(ad::Graph& g, const ad::ParamStore& p, const ForwardBatch& batch) const;

  /// The predictor's action/reward features extracted from one token row:
  /// [act_aug of every slot | rew of every slot].
  std::vector<double> joint_features(std::span<const double> token_row) const;

 private:
  ad::Var spatial_pool_forward(ad::Graph& g, const ad::ParamStore& p, const ad::Matrix& tokens) const;
  ad::Var gru_forward(ad::Graph& g, const ad::ParamStore& p, ad::Var x,
                      const std::vector<std::uint8_t>& valid, std::size_t windows) const;

  ModelConfig cfg_;
};

/// Row-wise Gaussian log-density of raw actions under N(mean, exp(log_std)^2).
ad::Var gaussian_log_prob(ad::Var mean, ad::Var log_std, const ad::Matrix& actions);
/// Differential entropy of the diagonal Gaussian (1 x 1).
ad::Var gaussian_entropy(ad::Var log_std);

/// True when some parameter name starts with `prefix`.
bool has_parameter_group(const ad::ParamStore& p, const std::string& prefix);

}  // namespace dtppo
