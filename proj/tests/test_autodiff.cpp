#include <cmath>
#include <random>

#include "doctest.h"
#include "dtppo/autodiff.hpp"
#include "dtppo/checkpoint.hpp"
#include "dtppo/errors.hpp"
#include "dtppo/nn.hpp"
#include "dtppo/param_store.hpp"
#include "fd_check.hpp"

using namespace dtppo;
using namespace dtppo::ad;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = -1.0,
                     double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = u(rng);
  return m;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error raised");
  return ErrorCode::kConfigError;
}

}  // namespace

TEST_SUITE("autodiff") {
  TEST_CASE("primitive values") {
    Graph g;
    const Var s = softmax_rows(g.constant(Matrix{{0.0, 0.0}}));
    CHECK(s.value()(0, 0) == 0.5);
    CHECK(s.value()(0, 1) == 0.5);

    std::mt19937_64 rng(1);
    const Var big = softmax_rows(g.constant(random_matrix(6, 9, rng, -30, 30)));
    for (std::size_t r = 0; r < 6; ++r) {
      double total = 0.0;
      for (double v : big.value().row(r)) total += v;
      CHECK(std::abs(total - 1.0) < 1e-12);
    }

    const Var x = g.constant(Matrix{{3.0, 3.0, 3.0, 3.0}});
    const Var ln = layer_norm(x, g.constant(Matrix{{1, 1, 1, 1}}), g.constant(Matrix{{0, 0, 0, 0}}));
    for (double v : ln.value().values()) CHECK(v == 0.0);

    const Var y = g.constant(random_matrix(3, 3, rng));
    CHECK(mse(y, y).value()[0] == 0.0);
  }

  TEST_CASE("linear case gradient is the input") {
    ParamStore store;
    store.add("W", Matrix{{0.3, -0.2}, {0.1, 0.7}, {0.5, 0.5}});
    store.add("unused", Matrix{{1.0}});
    Graph g;
    const Var x = g.constant(Matrix{{2.0, -1.0, 4.0}});
    const Gradients gr = grad(sum(matmul(x, g.parameter(store, "W"))), store);
    const Matrix& gw = gr.at("W");
    CHECK(gw(0, 0) == 2.0);
    CHECK(gw(0, 1) == 2.0);
    CHECK(gw(1, 0) == -1.0);
    CHECK(gw(2, 1) == 4.0);
    CHECK(gr.at("unused")[0] == 0.0);
  }

  TEST_CASE("elementwise and reduction ops match finite differences") {
    std::mt19937_64 rng(2);
    ParamStore store;
    store.add("a", random_matrix(3, 4, rng));
    store.add("b", random_matrix(3, 4, rng));
    store.add("p", random_matrix(3, 4, rng, 0.5, 2.0));
    store.add("row", random_matrix(1, 4, rng));
    store.add("w", random_matrix(4, 2, rng));
    store.add("bias", random_matrix(1, 2, rng));
    const auto f = [](Graph& g, const ParamStore& s) {
      const Var a = g.parameter(s, "a"), b = g.parameter(s, "b"), p = g.parameter(s, "p");
      const Var row = g.parameter(s, "row");
      Var t = add(mul(tanh(a), sigmoid(b)), gelu(sub(a, b)));
      t = add(t, log(p));
      t = add(t, scale(exp(scale(b, 0.5)), 0.3));
      t = mul_row(add_row(t, row), row);
      t = add(t, square(add_scalar(a, 0.1)));
      const Var lin = tanh(linear(t, g.parameter(s, "w"), g.parameter(s, "bias")));
      const Var soft = softmax_rows(concat_cols({lin, slice_cols(t, 1, 2)}));
      const Var rs = row_sum(mul(soft, concat_cols({lin, slice_cols(a, 0, 2)})));
      return add(add(mean(rs), scale(sum(scale_rows(t, {1.0, -2.0, 0.5})), 0.1)),
                 mse(slice_rows(t, 0, 2), slice_rows(b, 1, 2)));
    };
    // w[3] has a true gradient near 1e-6, below the FD noise; hence the floor.
    const auto r = fdcheck::check(store, f, 1e-5, 1e-4);
    INFO(r.worst);
    CHECK(r.max_rel < 1e-6);
  }

  TEST_CASE("layer norm, gather, masks and pooling match finite differences") {
    std::mt19937_64 rng(3);
    ParamStore store;
    store.add("x", random_matrix(6, 6, rng));
    store.add("gamma", random_matrix(1, 6, rng, 0.5, 1.5));
    store.add("beta", random_matrix(1, 6, rng));
    store.add("table", random_matrix(2, 6, rng));
    const auto f = [](Graph& g, const ParamStore& s) {
      Var x = layer_norm(g.parameter(s, "x"), g.parameter(s, "gamma"), g.parameter(s, "beta"));
      x = add_tiled(x, g.parameter(s, "table"));
      const Var gathered = gather_rows(x, {4, -1, 0, 0, 2, 3});
      const Var masked = mask_rows(gathered, {1, 0, 1, 1, 0, 1});
      const Var pooled = block_masked_mean(tanh(masked), 3, {1, 0, 1, 1, 1, 0});
      return add(sum(square(pooled)), mean(x));
    };
    const auto r = fdcheck::check(store, f);
    INFO(r.worst);
    CHECK(r.max_rel < 1e-6);
  }

  TEST_CASE("stop_gradient blocks the backward pass") {
    ParamStore store;
    store.add("x", Matrix{{0.5, -2.0}});
    Graph g;
    const Var x = g.parameter(store, "x");
    const Var loss = sum(mul(x, stop_gradient(x)));
    const Gradients gr = grad(loss, store);
    CHECK(gr.at("x")[0] == 0.5);
    CHECK(gr.at("x")[1] == -2.0);
  }

  TEST_CASE("clamp and minimum away from their kinks") {
    ParamStore store;
    store.add("x", Matrix{{-3.0, -0.5, 0.25, 2.5}});
    store.add("y", Matrix{{0.0, 1.0, -1.0, 3.0}});
    const auto f = [](Graph& g, const ParamStore& s) {
      const Var x = g.parameter(s, "x");
      return sum(mul(minimum(x, g.parameter(s, "y")), clamp(x, -1.0, 2.0)));
    };
    const auto r = fdcheck::check(store, f);
    CHECK(r.max_rel < 1e-6);
  }

  TEST_CASE("attention basics") {
    std::mt19937_64 rng(4);
    Graph g;
    const Var one = g.constant(random_matrix(1, 4, rng));
    const Var v1 = g.constant(random_matrix(1, 4, rng));
    const Var out1 = attention(one, one, v1, AttentionLayout{1, 2, {}, false});
    for (std::size_t c = 0; c < 4; ++c) CHECK(out1.value()(0, c) == v1.value()(0, c));

    Matrix dup(3, 4);
    const Matrix row = random_matrix(1, 4, rng);
    for (std::size_t r = 0; r < 3; ++r) {
      for (std::size_t c = 0; c < 4; ++c) dup(r, c) = row(0, c);
    }
    const Var d = g.constant(dup);
    const Var vv = g.constant(random_matrix(3, 4, rng));
    const Var outd = attention(d, d, vv, AttentionLayout{3, 2, {}, false});
    CHECK(outd.value().row(0)[1] == outd.value().row(2)[1]);

    CHECK(code_of([&] { attention(d, d, vv, AttentionLayout{3, 3, {}, false}); }) ==
          ErrorCode::kHeadDivisibility);
  }

  TEST_CASE("masked tokens equal the truncated sub-input") {
    std::mt19937_64 rng(5);
    ParamStore store;
    add_attention(store, "mh", 8, 2, rng);
    const Matrix tokens = random_matrix(5, 8, rng);
    Matrix sub(3, 8);
    for (std::size_t i = 0; i < 3 * 8; ++i) sub[i] = tokens[i];

    Graph g(false);
    const Var full = multi_head_self_attention(g, store, "mh", g.constant(tokens),
                                               AttentionLayout{5, 2, {1, 1, 1, 0, 0}, false});
    const Var small =
        multi_head_self_attention(g, store, "mh", g.constant(sub), AttentionLayout{3, 2, {}, false});
    for (std::size_t r = 0; r < 3; ++r) {
      for (std::size_t c = 0; c < 8; ++c) CHECK(full.value()(r, c) == small.value()(r, c));
    }
    for (std::size_t r = 3; r < 5; ++r) {
      for (std::size_t c = 0; c < 8; ++c) CHECK(full.value()(r, c) == 0.0);
    }
    // Changing masked rows changes nothing.
    Matrix noisy = tokens;
    for (std::size_t c = 0; c < 8; ++c) noisy(4, c) = 1e3 * (c + 1.0);
    const Var again = multi_head_self_attention(g, store, "mh", g.constant(noisy),
                                                AttentionLayout{5, 2, {1, 1, 1, 0, 0}, false});
    CHECK(again.value() == full.value());
  }

  TEST_CASE("transformer block gradients, masked and causal") {
    std::mt19937_64 rng(6);
    ParamStore store;
    add_transformer_block(store, "blk", 6, 2, rng);
    // Larger weights than the default init so every path carries signal.
    for (std::size_t p = 0; p < store.size(); ++p) {
      Matrix& w = store.value(p);
      for (std::size_t i = 0; i < w.size(); ++i) w[i] += 0.3 * std::sin(1.7 * i + p);
    }
    store.add("x", random_matrix(8, 6, rng));
    const auto f = [](Graph& g, const ParamStore& s) {
      const Var x = g.parameter(s, "x");
      const Var a = transformer_block(g, s, "blk", x, AttentionLayout{4, 2, {1, 1, 0, 1, 1, 1, 1, 0}, false});
      const Var b = transformer_block(g, s, "blk", x, AttentionLayout{4, 2, {}, true});
      return add(sum(square(a)), mean(tanh(b)));
    };
    const auto r = fdcheck::check(store, f);
    INFO(r.worst);
    CHECK(r.max_rel < 1e-5);
  }

  TEST_CASE("causal attention ignores the future") {
    std::mt19937_64 rng(7);
    ParamStore store;
    add_attention(store, "mh", 4, 1, rng);
    Matrix x = random_matrix(4, 4, rng);
    Graph g(false);
    const Var a = multi_head_self_attention(g, store, "mh", g.constant(x), AttentionLayout{4, 1, {}, true});
    x(3, 0) += 5.0;
    const Var b = multi_head_self_attention(g, store, "mh", g.constant(x), AttentionLayout{4, 1, {}, true});
    for (std::size_t r = 0; r < 3; ++r) {
      for (std::size_t c = 0; c < 4; ++c) CHECK(a.value()(r, c) == b.value()(r, c));
    }
  }

  TEST_CASE("errors") {
    Graph g;
    const Var a = g.constant(Matrix(2, 3));
    const Var b = g.constant(Matrix(2, 2));
    CHECK(code_of([&] { matmul(a, a); }) == ErrorCode::kShapeMismatch);
    CHECK(code_of([&] { add(a, b); }) == ErrorCode::kShapeMismatch);
    ParamStore store;
    CHECK(code_of([&] { grad(a, store); }) == ErrorCode::kNotScalarLoss);
    Graph checked;
    checked.set_check_finite(true);
    CHECK(code_of([&] { log(checked.constant(Matrix{{-1.0}})); }) == ErrorCode::kNonFiniteLoss);
    store.add("w", Matrix{{1.0}});
    CHECK(code_of([&] { store.add("w", Matrix{{2.0}}); }) == ErrorCode::kConfigError);
  }

  TEST_CASE("adam") {
    ParamStore store;
    store.add("w", Matrix{{1.0, -2.0}});
    Gradients zero(store);
    adam_step(store, zero, AdamConfig{0.1});
    CHECK(store.value("w") == Matrix{{1.0, -2.0}});
    CHECK(store.step() == 1);

    ParamStore fresh;
    fresh.add("w", Matrix{{1.0, -2.0}});
    Gradients g(fresh);
    g[0] = Matrix{{3.0, -0.5}};
    adam_step(fresh, g, AdamConfig{0.01});
    CHECK(fresh.value("w")(0, 0) == doctest::Approx(1.0 - 0.01).epsilon(1e-6));
    CHECK(fresh.value("w")(0, 1) == doctest::Approx(-2.0 + 0.01).epsilon(1e-6));

    ParamStore q;
    q.add("w", Matrix{{1.0}});
    for (int t = 0; t < 100; ++t) {
      Gradients gq(q);
      gq[0] = Matrix{{2.0 * q.value("w")[0]}};
      adam_step(q, gq, AdamConfig{0.05});
    }
    CHECK(std::abs(q.value("w")[0]) < 0.2);

    Gradients wrong;
    CHECK(code_of([&] { adam_step(q, wrong, AdamConfig{}); }) == ErrorCode::kShapeMismatch);
  }

  TEST_CASE("truncated normal stays within two sigma") {
    std::mt19937_64 rng(8);
    const Matrix m = truncated_normal(50, 50, 0.02, rng);
    for (double v : m.values()) CHECK(std::abs(v) <= 0.04);
  }

  TEST_CASE("checkpoint round trip and corruption") {
    std::mt19937_64 rng(9);
    Checkpoint ck;
    ck.params.add("a.W", random_matrix(3, 2, rng));
    ck.params.add("b", random_matrix(1, 5, rng));
    ck.params.first_moment(0) = random_matrix(3, 2, rng);
    ck.params.second_moment(1) = random_matrix(1, 5, rng, 0.0, 1.0);
    ck.params.set_step(17);
    ck.config_hash = 0x0123456789abcdefULL;
    ck.metadata = R"({"update":3})";
    const auto bytes = serialize_checkpoint(ck);
    const Checkpoint back = deserialize_checkpoint(bytes);
    CHECK(back.params == ck.params);
    CHECK(back.config_hash == ck.config_hash);
    CHECK(back.metadata == ck.metadata);
    CHECK(serialize_checkpoint(back) == bytes);

    auto truncated = bytes;
    truncated.resize(bytes.size() - 5);
    try {
      deserialize_checkpoint(truncated);
      FAIL("expected corruption");
    } catch (const CorruptFileError& e) {
      CHECK(e.byte_offset() <= truncated.size());
    }
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(deserialize_checkpoint(bad_magic), CorruptFileError);
    auto bad_version = bytes;
    bad_version[8] = 2;
    CHECK(code_of([&] { deserialize_checkpoint(bad_version); }) == ErrorCode::kFormatVersionMismatch);
    CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  }
}
