#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dtppo/encoder.hpp"
#include "dtppo/rollout.hpp"

namespace dtppo {

struct PpoConfig {
  double gamma = 0.99;
  double clip = 0.2;
  double entropy_coef = 1e-2;
  double lr = 5e-4;
  double delta1 = 1.0;   // actor
  double delta2 = 1.0;   // critic
  double delta3 = 1e-2;  // prediction
  double gae_lambda = 0.95;
  int epochs = 10;
  int minibatch = 256;
  int horizon = 512;  // environment steps per scenario per update
  std::int64_t total_episodes = 0;
  int segment = 16;  // consecutive steps kept together in a minibatch
  double max_grad_norm = 0.5;  // <= 0 disables clipping
};

void validate(const PpoConfig& cfg);

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

/// GAE over one trajectory. `dones[t]` cuts the bootstrap after step t;
/// `last_value` is V of the state after the final step (ignored when the
/// final step is done). Throws Error(kLengthMismatch).
GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                      std::span<const std::uint8_t> dones, double last_value, double gamma,
                      double lambda);

/// In place: zero mean, unit (population) standard deviation.
void normalize_advantages(std::vector<double>& adv);

/// Fills advantage/return on every record by running GAE along each
/// agent-episode chain, then normalizes the advantages over the batch.
void assign_advantages(RolloutBatch& batch, double gamma, double lambda);

struct LossReport {
  double l_actor = 0.0;
  double l_critic = 0.0;
  double l_pred = 0.0;
  double l_total = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
};

struct LossEvaluation {
  ad::Var total;
  LossReport report;
  std::vector<double> ratios;
  std::vector<double> log_probs;
  ad::Matrix pred_target;  // value the prediction loss regressed onto
};

/// Builds the forward inputs for a set of records: one window of at most L
/// steps ending at each sample, with spatial rows shared between windows.
ForwardBatch make_forward_batch(const DualTransformer& model, const RolloutBatch& batch,
                                std::span<const std::size_t> samples,
                                std::vector<std::size_t>* unique_records = nullptr);

/// Combined objective for the given samples. Throws Error(kEmptyBatch).
/// The prediction target is a constant; `frozen_target` pins it to a value
/// from an earlier evaluation (finite-difference checks need that).
LossEvaluation ppo_losses(ad::Graph& g, const ad::ParamStore& params, const DualTransformer& model,
                          const RolloutBatch& batch, std::span<const std::size_t> samples,
                          const PpoConfig& cfg, const ad::Matrix* frozen_target = nullptr);

/// Clipped surrogate for given ratios/advantages, as a plain number.
double clipped_surrogate_loss(std::span<const double> ratios, std::span<const double> advantages,
                              double clip);

/// Minibatches of whole segments (at most `segment` consecutive steps of one
/// agent-episode), shuffled with `rng`.
std::vector<std::vector<std::size_t>> make_minibatches(const RolloutBatch& batch, int segment,
                                                       int minibatch, std::mt19937_64& rng);

}  // namespace dtppo
