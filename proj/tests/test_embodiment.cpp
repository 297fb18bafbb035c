#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "forge/dit.hpp"
#include "forge/embodiment.hpp"
#include "forge/error.hpp"

using namespace forge;
using diff::ParamStore;
using diff::Tensor;

namespace {

void expect_code(forge_status want, const std::function<void()>& fn) {
  try {
    fn();
    FAIL_CHECK("expected error " << status_name(want));
  } catch (const Error& e) {
    CHECK(e.code() == want);
  }
}

ModelConfig small_config() {
  ModelConfig c;
  c.d = 8;
  c.layers = 1;
  c.heads = 2;
  c.ctx_tokens = 2;
  c.mlp_hidden = 16;
  c.adapter_hidden = 8;
  c.ctx_hidden = 8;
  c.res_h = 4;
  c.res_w = 4;
  c.instructions = 3;
  return c;
}

EmbodimentSpec arm_spec(const std::string& name, int state_dim = 3,
                        int action_dim = 3, int horizon = 4) {
  EmbodimentSpec s;
  s.name = name;
  s.state_dim = state_dim;
  s.action_dim = action_dim;
  s.horizon = horizon;
  return s;
}

bool same_values(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  auto av = a.data();
  auto bv = b.data();
  for (size_t i = 0; i < av.size(); ++i)
    if (av[i] != bv[i]) return false;
  return true;
}

}  // namespace

TEST_CASE("registry answers for every registered embodiment and no other") {
  Registry r;
  r.add(arm_spec("left_arm"));
  r.add(arm_spec("lapa", 3, 8, 16));
  r.add(arm_spec("idm:gr1", 3, 3, 16));
  CHECK(r.has("left_arm"));
  CHECK(r.has("lapa"));
  CHECK(r.has("idm:gr1"));
  CHECK_FALSE(r.has("right_arm"));
  CHECK(r.get("lapa").action_dim == 8);
  expect_code(FORGE_ERR_UNKNOWN_EMBODIMENT, [&] { r.get("right_arm"); });
  expect_code(FORGE_ERR_BAD_CONFIG, [&] { r.add(arm_spec("lapa")); });
  expect_code(FORGE_ERR_BAD_CONFIG, [&] { r.add(arm_spec("bad", 0, 3)); });

  Registry back = Registry::from_json(r.to_json());
  REQUIRE(back.specs().size() == 3);
  CHECK(back.get("idm:gr1").horizon == 16);
  CHECK(back.get("lapa").action_dim == 8);
}

TEST_CASE("timestep embedding interleaves sin and cos over geometric bands") {
  std::vector<double> e = timestep_embedding(0.0, 16);
  REQUIRE(e.size() == 16);
  for (int i = 0; i < 8; ++i) {
    CHECK(e[static_cast<size_t>(2 * i)] == 0.0);
    CHECK(e[static_cast<size_t>(2 * i + 1)] == 1.0);
  }
  double tau = 0.37;
  e = timestep_embedding(tau, 16);
  for (int i = 0; i < 8; ++i) {
    double freq = std::pow(1000.0, i / 7.0);
    CHECK(e[static_cast<size_t>(2 * i)] ==
          doctest::Approx(std::sin(freq * tau)).epsilon(1e-15));
    CHECK(e[static_cast<size_t>(2 * i + 1)] ==
          doctest::Approx(std::cos(freq * tau)).epsilon(1e-15));
  }
  expect_code(FORGE_ERR_TAU_RANGE, [] { timestep_embedding(-0.01, 16); });
  expect_code(FORGE_ERR_TAU_RANGE, [] { timestep_embedding(1.01, 16); });
  expect_code(FORGE_ERR_BAD_CONFIG, [] { timestep_embedding(0.5, 7); });
}

TEST_CASE("zeroed final layer maps any state to the zero token") {
  ModelConfig config = small_config();
  EmbodimentSpec spec = arm_spec("arm");
  ParamStore params;
  Rng rng(11);
  init_adapter_params(params, config, spec, rng);
  // push the hidden layer away from zero so only the final layer can kill it
  for (double& v : params["emb/arm/state_b1"].data()) v = 0.7;
  for (double& v : params["emb/arm/state_w2"].data()) v = 0.0;
  for (double& v : params["emb/arm/state_b2"].data()) v = 0.0;
  Tensor tok = encode_state(params, config, spec,
                            Tensor::from_data({1, 3}, {0.4, -0.2, 0.9}));
  REQUIRE(tok.shape() == std::vector<int>{1, config.d});
  for (double v : tok.data()) CHECK(v == 0.0);
}

TEST_CASE("equal-dimension embodiments still encode through their own weights") {
  ModelConfig config = small_config();
  ParamStore params;
  Rng rng(5);
  init_adapter_params(params, config, arm_spec("a"), rng);
  init_adapter_params(params, config, arm_spec("b"), rng);
  Tensor q = Tensor::from_data({1, 3}, {0.1, 0.2, 0.3});
  Tensor ta = encode_state(params, config, arm_spec("a"), q);
  Tensor tb = encode_state(params, config, arm_spec("b"), q);
  CHECK_FALSE(same_values(ta, tb));
}

TEST_CASE("state width is checked against the spec") {
  ModelConfig config = small_config();
  ParamStore params;
  Rng rng(5);
  init_adapter_params(params, config, arm_spec("a"), rng);
  expect_code(FORGE_ERR_DIM_MISMATCH, [&] {
    encode_state(params, config, arm_spec("a"),
                 Tensor::from_data({1, 4}, {1, 2, 3, 4}));
  });
}

TEST_CASE("registering an embodiment leaves existing parameters untouched") {
  ModelConfig config = small_config();
  ParamStore params;
  Rng rng(9);
  init_adapter_params(params, config, arm_spec("first"), rng);
  std::map<std::string, std::vector<double>> before;
  for (const auto& [name, t] : params)
    before[name] = std::vector<double>(t.data().begin(), t.data().end());

  init_adapter_params(params, config, arm_spec("second", 5, 2, 4), rng);
  for (const auto& [name, vals] : before) {
    REQUIRE(params.count(name) == 1);
    auto now = params[name].data();
    REQUIRE(now.size() == vals.size());
    for (size_t i = 0; i < vals.size(); ++i) CHECK(now[i] == vals[i]);
  }
  for (const auto& [name, t] : params)
    if (!before.count(name))
      CHECK(name.rfind("emb/second/", 0) == 0);
}

TEST_CASE("action encoder sees the timestep") {
  ModelConfig config = small_config();
  EmbodimentSpec spec = arm_spec("arm");
  ParamStore params;
  Rng rng(21);
  init_adapter_params(params, config, spec, rng);
  Tensor chunk = Tensor::randn({1, spec.horizon, spec.action_dim}, rng, 1.0);

  auto embed = [&](double tau) {
    std::vector<double> e = timestep_embedding(tau, config.tau_embed_dim);
    return Tensor::from_data({1, config.tau_embed_dim}, e);
  };
  Tensor t0 = encode_action(params, config, spec, chunk, embed(0.0));
  Tensor t5 = encode_action(params, config, spec, chunk, embed(0.5));
  REQUIRE(t0.shape() == std::vector<int>{1, spec.horizon, config.d});
  CHECK_FALSE(same_values(t0, t5));

  expect_code(FORGE_ERR_DIM_MISMATCH, [&] {
    encode_action(params, config, spec,
                  Tensor::zeros({1, spec.horizon, spec.action_dim + 1}),
                  embed(0.0));
  });
}

TEST_CASE("decoder returns one action row per token") {
  ModelConfig config = small_config();
  config.d = 8;
  ParamStore params;
  Rng rng(31);

  EmbodimentSpec wide = arm_spec("gr1", 3, 3, 16);
  init_adapter_params(params, config, wide, rng);
  Tensor out = decode_actions(params, config, wide,
                              Tensor::randn({2, 16, config.d}, rng, 1.0));
  CHECK(out.shape() == std::vector<int>{2, 16, 3});

  EmbodimentSpec lapa = arm_spec("lapa", 3, 8, 16);
  init_adapter_params(params, config, lapa, rng);
  Tensor lat = decode_actions(params, config, lapa,
                              Tensor::randn({1, 16, config.d}, rng, 1.0));
  CHECK(lat.shape() == std::vector<int>{1, 16, 8});

  // identical tokens decode to identical rows
  std::vector<double> row(static_cast<size_t>(config.d));
  for (int i = 0; i < config.d; ++i) row[static_cast<size_t>(i)] = 0.1 * i;
  std::vector<double> tokens;
  for (int t = 0; t < 16; ++t) tokens.insert(tokens.end(), row.begin(),
                                             row.end());
  Tensor dec = decode_actions(params, config, wide,
                              Tensor::from_data({1, 16, config.d}, tokens));
  auto v = dec.data();
  for (int t = 1; t < 16; ++t)
    for (int c = 0; c < 3; ++c)
      CHECK(v[static_cast<size_t>(t * 3 + c)] == v[static_cast<size_t>(c)]);

  expect_code(FORGE_ERR_DIM_MISMATCH, [&] {
    decode_actions(params, config, wide,
                   Tensor::zeros({1, 15, config.d}));
  });
}

TEST_CASE("context encoder separates instructions and honors the layer knob") {
  ModelConfig config = small_config();
  ParamStore params;
  Rng rng(41);
  init_context_params(params, config, rng);

  Tensor image = Tensor::randn({1, config.pixels()}, rng, 1.0);
  Tensor phi0 = encode_context(params, config, image, {0});
  Tensor phi1 = encode_context(params, config, image, {1});
  REQUIRE(phi0.shape() ==
          std::vector<int>{1, config.ctx_tokens, config.d});
  CHECK_FALSE(same_values(phi0, phi1));
  CHECK(same_values(phi0, encode_context(params, config, image, {0})));

  ModelConfig mid = config;
  mid.context_layer = 1;
  Tensor phi_mid = encode_context(params, mid, image, {0});
  CHECK_FALSE(same_values(phi0, phi_mid));

  expect_code(FORGE_ERR_UNKNOWN_INSTRUCTION,
              [&] { encode_context(params, config, image, {3}); });
  expect_code(FORGE_ERR_DIM_MISMATCH, [&] {
    encode_context(params, config, Tensor::zeros({1, 5}), {0});
  });
}

TEST_CASE("fresh trunk is the identity and self-attention never reads phi") {
  ModelConfig config = small_config();
  config.layers = 2;
  ParamStore params;
  Rng rng(51);
  init_trunk_params(params, config, rng);

  int b = 2, t = 5;
  Tensor tokens = Tensor::randn({b, t, config.d}, rng, 1.0);
  Tensor phi = Tensor::randn({b, config.ctx_tokens, config.d}, rng, 1.0);
  Tensor tau_emb = Tensor::randn({b, config.tau_embed_dim}, rng, 1.0);

  TrunkProbe with_phi;
  Tensor out = trunk_forward(params, config, tokens, phi, tau_emb, &with_phi);
  REQUIRE(out.shape() == std::vector<int>{b, t, config.d});

  // gates are born zero: every residual update is suppressed, so the block
  // stack passes tokens through and the probe cannot depend on phi
  TrunkProbe no_phi;
  trunk_forward(params, config, tokens,
                Tensor::zeros({b, config.ctx_tokens, config.d}), tau_emb,
                &no_phi);
  REQUIRE(with_phi.self_attn_out.size() == 2);
  for (size_t l = 0; l < 2; ++l)
    CHECK(with_phi.self_attn_out[l] == no_phi.self_attn_out[l]);

  // with live gates only the first block's self-attention stays phi-blind
  Rng jitter(52);
  for (int l = 0; l < config.layers; ++l) {
    std::string k = "trunk/l" + std::to_string(l) + "/mod_w2";
    for (double& v : params[k].data()) v = 0.3 * jitter.normal();
  }
  TrunkProbe live_phi, live_zero;
  trunk_forward(params, config, tokens, phi, tau_emb, &live_phi);
  trunk_forward(params, config, tokens,
                Tensor::zeros({b, config.ctx_tokens, config.d}), tau_emb,
                &live_zero);
  CHECK(live_phi.self_attn_out[0] == live_zero.self_attn_out[0]);
  CHECK(live_phi.self_attn_out[1] != live_zero.self_attn_out[1]);
  CHECK(live_phi.cross_attn_out[0] != live_zero.cross_attn_out[0]);
}

TEST_CASE("trunk rejects tokens and phi of the wrong shape") {
  ModelConfig config = small_config();
  ParamStore params;
  Rng rng(61);
  init_trunk_params(params, config, rng);
  Tensor tau_emb = Tensor::zeros({1, config.tau_embed_dim});
  expect_code(FORGE_ERR_SHAPE_MISMATCH, [&] {
    trunk_forward(params, config, Tensor::zeros({1, 4, config.d + 1}),
                  Tensor::zeros({1, config.ctx_tokens, config.d}), tau_emb);
  });
  expect_code(FORGE_ERR_SHAPE_MISMATCH, [&] {
    trunk_forward(params, config, Tensor::zeros({1, 4, config.d}),
                  Tensor::zeros({1, config.ctx_tokens + 1, config.d}),
                  tau_emb);
  });
}

TEST_CASE("detection head pools context tokens into two coordinates") {
  ModelConfig config = small_config();
  ParamStore params;
  Rng rng(71);
  init_context_params(params, config, rng);
  Tensor phi = Tensor::randn({3, config.ctx_tokens, config.d}, rng, 1.0);
  Tensor pred = detection_head(params, config, phi);
  CHECK(pred.shape() == std::vector<int>{3, 2});

  // token order cannot matter under mean pooling
  std::vector<double> swapped(phi.data().begin(), phi.data().end());
  int stride = config.d;
  for (int i = 0; i < stride; ++i)
    std::swap(swapped[static_cast<size_t>(i)],
              swapped[static_cast<size_t>(stride + i)]);
  Tensor pred2 = detection_head(
      params, config,
      Tensor::from_data({3, config.ctx_tokens, config.d}, swapped));
  auto a = pred.data();
  auto b2 = pred2.data();
  for (size_t i = 0; i < a.size(); ++i)
    CHECK(a[i] == doctest::Approx(b2[i]).epsilon(1e-12));

  ModelConfig off = config;
  off.detection = false;
  expect_code(FORGE_ERR_BAD_CONFIG,
              [&] { detection_head(params, off, phi); });
}
