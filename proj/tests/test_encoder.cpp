#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "dtppo/encoder.hpp"
#include "dtppo/errors.hpp"
#include "fd_check.hpp"
#include "fixtures.hpp"

using namespace dtppo;
using namespace dtppo::ad;

namespace {

ForwardBatch small_batch(const DualTransformer& model, std::mt19937_64& rng) {
  ForwardBatch b;
  b.tokens = fixtures::token_matrix(model.config().obs, 6, rng);
  b.windows = {{0, 1, 2, 3}, {-1, -1, 4, 5}, {-1, -1, -1, 2}};
  b.obs_self = fixtures::random_rows(3, model.obs_dim(), rng);
  return b;
}

// Scalar that touches every output of the forward pass.
Var probe(Graph& g, const ParamStore& p, const DualTransformer& model, const ForwardBatch& b) {
  const ForwardResult r = model.forward(g, p, b);
  Matrix actions(3, kActionDim);
  for (std::size_t i = 0; i < actions.size(); ++i) actions[i] = 0.3 * std::cos(1.1 * i);
  Var total = add(sum(gaussian_log_prob(r.heads.mean, r.heads.log_std, actions)),
                  sum(square(r.heads.value)));
  if (model.has_predictor()) {
    std::mt19937_64 jr(5);
    const Var joint = g.constant(fixtures::random_rows(3, model.joint_width(), jr));
    total = add(total, sum(square(model.predict_dynamics(g, p, r.temporal.last, joint))));
  }
  return total;
}

}  // namespace

TEST_SUITE("encoder") {
  TEST_CASE("token count") {
    for (int n : {0, 2, 4, 7}) {
      ModelConfig m = fixtures::tiny_model(8, n);
      const DualTransformer model(m);
      CHECK(model.spatial_token_count() == static_cast<std::size_t>(1 + 3 * (n + 1)));
    }
  }

  TEST_CASE("padded slots do not affect the spatial embedding") {
    const DualTransformer model(fixtures::tiny_model(8, 3));
    ParamStore p = model.init(1);
    fixtures::roughen(p);
    std::mt19937_64 rng(2);
    const auto row = fixtures::token_row(model.config().obs, 2, rng);
    auto noisy = row;
    const std::size_t w = model.token_width();
    const std::size_t od = model.obs_dim();
    // Garbage everywhere in slots 2 and 3 except the presence flags.
    for (std::size_t s = 2; s < 4; ++s) {
      for (std::size_t k = 0; k < w; ++k) {
        if (k == od || k == od + 1 + kActionDim) continue;
        noisy[s * w + k] = 100.0 * std::sin(static_cast<double>(k + s));
      }
    }
    Graph g(false);
    const Var a = model.spatial_forward(g, p, Matrix(1, row.size(), row));
    const Var b = model.spatial_forward(g, p, Matrix(1, noisy.size(), noisy));
    CHECK(a.value() == b.value());
  }

  TEST_CASE("temporal output depends only on the prefix") {
    const DualTransformer model(fixtures::tiny_model(8, 2, 6));
    ParamStore p = model.init(3);
    fixtures::roughen(p);
    std::mt19937_64 rng(4);
    const Matrix tokens = fixtures::token_matrix(model.config().obs, 6, rng);
    Graph g(false);
    const Var spatial = model.spatial_forward(g, p, tokens);
    const TemporalOutput full = model.temporal_forward(g, p, spatial, {{0, 1, 2, 3, 4, 5}});
    for (int len = 1; len <= 6; ++len) {
      std::vector<std::int64_t> w(6, -1);
      for (int j = 0; j < len; ++j) w[j] = j;
      const TemporalOutput pre = model.temporal_forward(g, p, spatial, {w});
      for (int j = 0; j < len; ++j) {
        for (std::size_t c = 0; c < 8; ++c) CHECK(pre.all.value()(j, c) == full.all.value()(j, c));
      }
      for (int j = len; j < 6; ++j) CHECK(pre.valid[j] == 0);
    }
    CHECK_THROWS_AS(model.temporal_forward(g, p, spatial, {{0, 1, 2, 3, 4, 5, 0}}), Error);
  }

  TEST_CASE("batched forward equals one window at a time") {
    const DualTransformer model(fixtures::tiny_model());
    ParamStore p = model.init(5);
    fixtures::roughen(p);
    std::mt19937_64 rng(6);
    const ForwardBatch b = small_batch(model, rng);
    Graph g(false);
    const ForwardResult all = model.forward(g, p, b);
    for (std::size_t i = 0; i < b.windows.size(); ++i) {
      ForwardBatch one;
      one.tokens = b.tokens;
      one.windows = {b.windows[i]};
      one.obs_self = Matrix(1, b.obs_self.cols());
      for (std::size_t c = 0; c < b.obs_self.cols(); ++c) one.obs_self(0, c) = b.obs_self(i, c);
      const ForwardResult r = model.forward(g, p, one);
      for (std::size_t c = 0; c < kActionDim; ++c) {
        CHECK(r.heads.mean.value()(0, c) == all.heads.mean.value()(i, c));
      }
      CHECK(r.heads.value.value()[0] == all.heads.value.value()(i, 0));
    }
    const Var h = g.constant(fixtures::random_rows(4, 8, rng));
    const Var joint = g.constant(fixtures::random_rows(4, model.joint_width(), rng));
    const Var batched = model.predict_dynamics(g, p, h, joint);
    const Var single = model.predict_dynamics(g, p, slice_rows(h, 2, 1), slice_rows(joint, 2, 1));
    for (std::size_t c = 0; c < 8; ++c) CHECK(single.value()(0, c) == batched.value()(2, c));
  }

  TEST_CASE("forward gradients for every variant") {
    const char* names[] = {"full", "no_spatial", "no_temporal_gru", "no_residual", "plain_ppo"};
    for (int v = 0; v < 5; ++v) {
      ModelConfig m = fixtures::tiny_model();
      m.encoder.d_prime = 6;  // exercise the residual projection
      m.encoder.temporal_heads = 3;
      if (v == 1) m.ablation.no_spatial = true;
      if (v == 2) m.ablation.no_temporal_gru = true;
      if (v == 3) m.ablation.no_residual = true;
      if (v == 4) m.ablation.plain_ppo = true;
      const DualTransformer model(m);
      ParamStore p = model.init(7);
      fixtures::roughen(p);
      std::mt19937_64 rng(8);
      const ForwardBatch b = small_batch(model, rng);
      const auto r = fdcheck::check(p, [&](Graph& g, const ParamStore& s) { return probe(g, s, model, b); });
      INFO(names[v], " ", r.worst);
      CHECK(r.max_rel < 1e-4);
    }
  }

  TEST_CASE("no_residual ignores the own observation") {
    ModelConfig m = fixtures::tiny_model();
    m.ablation.no_residual = true;
    const DualTransformer model(m);
    ParamStore p = model.init(9);
    std::mt19937_64 rng(10);
    ForwardBatch b = small_batch(model, rng);
    Graph g(false);
    const Matrix before = model.forward(g, p, b).heads.mean.value();
    b.obs_self = fixtures::random_rows(3, model.obs_dim(), rng);
    CHECK(model.forward(g, p, b).heads.mean.value() == before);
  }

  TEST_CASE("parameter manifests") {
    ModelConfig m = fixtures::tiny_model();
    m.encoder.d_prime = 6;
    const ParamStore full = DualTransformer(m).init(1);
    CHECK(has_parameter_group(full, "temporal.pos_emb"));
    CHECK(has_parameter_group(full, "spatial.block0"));
    CHECK(has_parameter_group(full, "residual.P_o"));
    CHECK_FALSE(has_parameter_group(full, "temporal_gru"));

    ModelConfig gru = m;
    gru.ablation.no_temporal_gru = true;
    const ParamStore pg = DualTransformer(gru).init(1);
    CHECK(has_parameter_group(pg, "temporal_gru.W_z"));
    CHECK(has_parameter_group(pg, "temporal_gru.U_h"));
    CHECK_FALSE(has_parameter_group(pg, "temporal.pos_emb"));

    ModelConfig ns = m;
    ns.ablation.no_spatial = true;
    const ParamStore pn = DualTransformer(ns).init(1);
    CHECK(pn.scalar_count() < full.scalar_count());
    CHECK_FALSE(has_parameter_group(pn, "spatial.block"));
    CHECK(has_parameter_group(pn, "spatial.pool"));

    ModelConfig nr = m;
    nr.ablation.no_residual = true;
    CHECK_FALSE(has_parameter_group(DualTransformer(nr).init(1), "residual"));

    ModelConfig pp = m;
    pp.ablation.plain_ppo = true;
    const ParamStore pl = DualTransformer(pp).init(1);
    CHECK_FALSE(has_parameter_group(pl, "spatial"));
    CHECK_FALSE(has_parameter_group(pl, "temporal"));
    CHECK_FALSE(has_parameter_group(pl, "predictor"));
    CHECK(has_parameter_group(pl, "residual.P_o"));
  }

  TEST_CASE("conflicting ablations") {
    AblationFlags a;
    a.no_spatial = true;
    a.no_temporal_gru = true;
    try {
      validate(a);
      FAIL("expected ConflictingFlags");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kConflictingFlags);
    }
    AblationFlags b;
    b.plain_ppo = true;
    b.no_residual = true;
    CHECK_THROWS_AS(validate(b), Error);
  }

  TEST_CASE("gaussian log-density and entropy in closed form") {
    Graph g(false);
    const Var mu = g.constant(Matrix{{0.1, -0.2, 0.3, 0.0}});
    const Var ls = g.constant(Matrix{{-0.5, 0.0, 0.25, 1.0}});
    const Matrix a{{0.4, 0.1, -0.3, 2.0}};
    double expect = 0.0, ent = 0.0;
    const double m[] = {0.1, -0.2, 0.3, 0.0}, s[] = {-0.5, 0.0, 0.25, 1.0};
    for (int k = 0; k < 4; ++k) {
      const double sd = std::exp(s[k]);
      const double z = (a(0, k) - m[k]) / sd;
      expect += -0.5 * z * z - std::log(sd) - 0.5 * std::log(2.0 * std::numbers::pi);
      ent += 0.5 + 0.5 * std::log(2.0 * std::numbers::pi) + s[k];
    }
    CHECK(gaussian_log_prob(mu, ls, a).value()[0] == doctest::Approx(expect).epsilon(1e-13));
    CHECK(gaussian_entropy(ls).value()[0] == doctest::Approx(ent).epsilon(1e-13));
  }

  TEST_CASE("init is deterministic in the seed") {
    const DualTransformer model(fixtures::tiny_model());
    CHECK(model.init(4) == model.init(4));
    CHECK_FALSE(model.init(4) == model.init(5));
  }
}
