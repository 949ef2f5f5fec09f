#pragma once

#include <random>
#include <vector>

#include "dtppo/encoder.hpp"

namespace fixtures {

inline dtppo::ModelConfig tiny_model(int d = 8, int neighbors = 2, int horizon = 4) {
  dtppo::ModelConfig m;
  m.obs.history = 2;
  m.obs.neighbors = neighbors;
  m.encoder.d = d;
  m.encoder.d_prime = d;
  m.encoder.spatial_layers = 1;
  m.encoder.temporal_layers = 1;
  m.encoder.spatial_heads = 2;
  m.encoder.temporal_heads = 2;
  m.encoder.horizon = horizon;
  m.encoder.actor_hidden = 6;
  m.encoder.critic_hidden = 5;
  return m;
}

// Token row with the first `present` slots filled and the rest padded.
inline std::vector<double> token_row(const dtppo::ObsConfig& obs, int present, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  const int od = obs.obs_dim();
  std::vector<double> row;
  for (int s = 0; s < obs.slots(); ++s) {
    const bool on = s < present;
    for (int k = 0; k < od; ++k) row.push_back(on ? n(rng) : 0.0);
    row.push_back(on ? 1.0 : 0.0);
    for (int k = 0; k < dtppo::kActionDim; ++k) row.push_back(on ? 0.5 * n(rng) : 0.0);
    row.push_back(on ? 1.0 : 0.0);
    row.push_back(on ? 0.3 * n(rng) : 0.0);
  }
  return row;
}

inline dtppo::ad::Matrix token_matrix(const dtppo::ObsConfig& obs, int rows, std::mt19937_64& rng) {
  std::vector<double> flat;
  for (int r = 0; r < rows; ++r) {
    const auto row = token_row(obs, 1 + r % obs.slots(), rng);
    flat.insert(flat.end(), row.begin(), row.end());
  }
  return dtppo::ad::Matrix(rows, obs.slots() * obs.token_width(), std::move(flat));
}

inline dtppo::ad::Matrix random_rows(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  dtppo::ad::Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = n(rng);
  return m;
}

// Adds a deterministic perturbation so gradient checks see non-degenerate
// weights (the default init is tiny and biases start at zero).
inline void roughen(dtppo::ad::ParamStore& p, double amount = 0.2) {
  for (std::size_t k = 0; k < p.size(); ++k) {
    dtppo::ad::Matrix& w = p.value(k);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] += amount * std::sin(0.7 * i + 1.3 * k + 0.1);
  }
}

}  // namespace fixtures
