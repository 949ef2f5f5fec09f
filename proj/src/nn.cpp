#include "dtppo/nn.hpp"

namespace dtppo::ad {

std::size_t attention_width(std::size_t d, std::size_t heads) {
  return heads * ((d + heads - 1) / heads);
}

void add_linear(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                std::mt19937_64& rng, bool bias, const std::string& w, const std::string& b) {
  store.add(prefix + "." + w, truncated_normal(in, out, kInitStd, rng));
  if (bias) store.add(prefix + "." + b, Matrix(1, out));
}

void add_layer_norm(ParamStore& store, const std::string& prefix, std::size_t d) {
  store.add(prefix + ".gamma", Matrix(1, d, 1.0));
  store.add(prefix + ".beta", Matrix(1, d));
}

void add_attention(ParamStore& store, const std::string& prefix, std::size_t d,
                   std::size_t heads, std::mt19937_64& rng) {
  const std::size_t inner = attention_width(d, heads);
  add_linear(store, prefix, d, inner, rng, true, "Wq", "bq");
  add_linear(store, prefix, d, inner, rng, true, "Wk", "bk");
  add_linear(store, prefix, d, inner, rng, true, "Wv", "bv");
  add_linear(store, prefix, inner, d, rng, true, "Wo", "bo");
}

void add_transformer_block(ParamStore& store, const std::string& prefix, std::size_t d,
                           std::size_t heads, std::mt19937_64& rng) {
  add_layer_norm(store, prefix + ".ln1", d);
  add_attention(store, prefix + ".attn", d, heads, rng);
  add_layer_norm(store, prefix + ".ln2", d);
  add_linear(store, prefix + ".ffn", d, 4 * d, rng, true, "W1", "b1");
  add_linear(store, prefix + ".ffn", 4 * d, d, rng, true, "W2", "b2");
}

Var layer_norm_named(Graph& g, const ParamStore& store, const std::string& prefix, Var x) {
  return layer_norm(x, g.parameter(store, prefix + ".gamma"), g.parameter(store, prefix + ".beta"));
}

Var multi_head_self_attention(Graph& g, const ParamStore& store, const std::string& prefix,
                              Var tokens, const AttentionLayout& layout) {
  auto p = [&](const char* n) { return g.parameter(store, prefix + "." + n); };
  const Var q = linear(tokens, p("Wq"), p("bq"));
  const Var k = linear(tokens, p("Wk"), p("bk"));
  const Var v = linear(tokens, p("Wv"), p("bv"));
  const Var att = attention(q, k, v, layout);
  Var out = linear(att, p("Wo"), p("bo"));
  // The output bias would otherwise leak into masked rows.
  if (!layout.valid.empty()) out = mask_rows(out, layout.valid);
  return out;
}

Var transformer_block(Graph& g, const ParamStore& store, const std::string& prefix, Var x,
                      const AttentionLayout& layout) {
  const Var a = multi_head_self_attention(g, store, prefix + ".attn",
                                          layer_norm_named(g, store, prefix + ".ln1", x), layout);
  const Var h = add(x, a);
  const Var n2 = layer_norm_named(g, store, prefix + ".ln2", h);
  const Var f1 = gelu(linear(n2, g.parameter(store, prefix + ".ffn.W1"),
                             g.parameter(store, prefix + ".ffn.b1")));
  const Var f2 = linear(f1, g.parameter(store, prefix + ".ffn.W2"),
                        g.parameter(store, prefix + ".ffn.b2"));
  return add(h, f2);
}

}  // namespace dtppo::ad
