#pragma once

// Transformer building blocks on top of the autodiff graph. Parameters live
// in a ParamStore under dotted names rooted at a caller-chosen prefix.

#include <random>
#include <string>

#include "dtppo/autodiff.hpp"
#include "dtppo/param_store.hpp"

namespace dtppo::ad {

inline constexpr double kInitStd = 0.02;

/// Attention inner width: heads * ceil(d / heads).
std::size_t attention_width(std::size_t d, std::size_t heads);

// Registration helpers. Weights use the truncated-normal init, biases start
// at zero and norm gains at one.
void add_linear(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                std::mt19937_64& rng, bool bias = true, const std::string& w = "W",
                const std::string& b = "b");
void add_layer_norm(ParamStore& store, const std::string& prefix, std::size_t d);
void add_attention(ParamStore& store, const std::string& prefix, std::size_t d,
                   std::size_t heads, std::mt19937_64& rng);
void add_transformer_block(ParamStore& store, const std::string& prefix, std::size_t d,
                           std::size_t heads, std::mt19937_64& rng);

/// Multi-head self-attention sublayer (`prefix.Wq` ... `prefix.bo`).
/// Throws Error(kHeadDivisibility) if the stored inner width does not split
/// across `layout.heads`.
Var multi_head_self_attention(Graph& g, const ParamStore& store, const std::string& prefix,
                              Var tokens, const AttentionLayout& layout);

/// Pre-norm block: x + MHSA(LN(x)), then + FFN(LN(.)) with a gelu hidden layer.
Var transformer_block(Graph& g, const ParamStore& store, const std::string& prefix, Var x,
                      const AttentionLayout& layout);

Var layer_norm_named(Graph& g, const ParamStore& store, const std::string& prefix, Var x);

}  // namespace dtppo::ad
