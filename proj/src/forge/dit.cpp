#include "forge/dit.hpp"

#include <cmath>

#include "forge/error.hpp"

namespace forge {

using diff::ParamStore;
using diff::Tensor;

namespace {

void init_linear(ParamStore& params, const std::string& w, const std::string& b,
                 int in, int out, Rng& rng, bool zero = false) {
  params[w] = zero ? Tensor::zeros({in, out}, true)
                   : Tensor::randn(
                         {in, out}, rng,
                         1.0 / std::sqrt(static_cast<double>(in)), true);
  params[b] = Tensor::zeros({out}, true);
}

const Tensor& pick(const ParamStore& params, const std::string& name) {
  auto it = params.find(name);
  if (it == params.end())
    raise(FORGE_ERR_INTERNAL, "missing parameter '" + name + "'");
  return it->second;
}

Tensor linear(const ParamStore& params, const std::string& prefix,
              const Tensor& x) {
  return diff::add(diff::matmul(x, pick(params, prefix + "w")),
                   pick(params, prefix + "b"));
}

std::string block_prefix(int layer) {
  return "trunk/l" + std::to_string(layer) + "/";
}

// y * (1 + scale) + shift, with scale/shift (B,d) spread over the token axis.
Tensor modulate(const Tensor& y, const Tensor& shift, const Tensor& scale) {
  int t = y.shape()[1];
  Tensor ones_scale = diff::add_scalar(scale, 1.0);
  return diff::add(diff::mul(y, diff::expand_tokens(ones_scale, t)),
                   diff::expand_tokens(shift, t));
}

Tensor gate_mul(const Tensor& y, const Tensor& gate) {
  return diff::mul(y, diff::expand_tokens(gate, y.shape()[1]));
}

void check_finite(const Tensor& x, const std::string& where) {
  for (double v : x.data())
    if (!std::isfinite(v))
      raise(FORGE_ERR_NON_FINITE, "non-finite activation in " + where);
}

}  // namespace

void init_trunk_params(ParamStore& params, const ModelConfig& config,
                       Rng& rng) {
  int d = config.d;
  for (int l = 0; l < config.layers; ++l) {
    std::string p = block_prefix(l);
    init_linear(params, p + "mod_w1", p + "mod_b1", config.tau_embed_dim, d,
                rng);
    // zero output layer: shift, scale, and gates all start at zero
    init_linear(params, p + "mod_w2", p + "mod_b2", d, 9 * d, rng,
                /*zero=*/true);
    for (const char* a : {"sa_q", "sa_k", "sa_v", "sa_o", "ca_q", "ca_k",
                          "ca_v", "ca_o"})
      init_linear(params, p + a + "w", p + a + "b", d, d, rng);
    init_linear(params, p + "mlp1_w", p + "mlp1_b", d, config.mlp_width(),
                rng);
    init_linear(params, p + "mlp2_w", p + "mlp2_b", config.mlp_width(), d,
                rng);
  }
  init_linear(params, "trunk/final/mod_w1", "trunk/final/mod_b1",
              config.tau_embed_dim, d, rng);
  init_linear(params, "trunk/final/mod_w2", "trunk/final/mod_b2", d, 2 * d,
              rng, /*zero=*/true);
}

void init_context_params(ParamStore& params, const ModelConfig& config,
                         Rng& rng) {
  int md = config.ctx_tokens * config.d;
  init_linear(params, "ctx/img1_w", "ctx/img1_b", config.pixels(),
              config.ctx_hidden, rng);
  init_linear(params, "ctx/img2_w", "ctx/img2_b", config.ctx_hidden,
              config.ctx_hidden, rng);
  init_linear(params, "ctx/proj_w", "ctx/proj_b", config.ctx_hidden, md, rng);
  params["ctx/instr"] = Tensor::randn({config.instructions, md}, rng,
                                      1.0 / std::sqrt(static_cast<double>(md)),
                                      true);
  if (config.detection)
    init_linear(params, "det/w", "det/b", config.d, 2, rng);
}

Tensor trunk_forward(const ParamStore& params, const ModelConfig& config,
                     const Tensor& tokens, const Tensor& phi,
                     const Tensor& tau_emb, TrunkProbe* probe) {
  const auto& ts = tokens.shape();
  if (ts.size() != 3 || ts[2] != config.d)
    raise(FORGE_ERR_SHAPE_MISMATCH, "trunk tokens must be (B,T,d)");
  if (phi.shape().size() != 3 || phi.shape()[0] != ts[0] ||
      phi.shape()[1] != config.ctx_tokens || phi.shape()[2] != config.d)
    raise(FORGE_ERR_SHAPE_MISMATCH, "trunk phi must be (B,M,d)");
  int d = config.d;

  Tensor x = tokens;
  for (int l = 0; l < config.layers; ++l) {
    std::string p = block_prefix(l);
    Tensor cond = diff::add(
        diff::matmul(
            diff::gelu(diff::add(
                diff::matmul(tau_emb, pick(params, p + "mod_w1")),
                pick(params, p + "mod_b1"))),
            pick(params, p + "mod_w2")),
        pick(params, p + "mod_b2"));
    auto part = [&](int i) { return diff::slice(cond, 1, i * d, (i + 1) * d); };
    Tensor shift1 = part(0), scale1 = part(1), gate1 = part(2);
    Tensor shift2 = part(3), scale2 = part(4), gate2 = part(5);
    Tensor shift3 = part(6), scale3 = part(7), gate3 = part(8);

    Tensor h = modulate(diff::layer_norm(x), shift1, scale1);
    Tensor sa = diff::attention(linear(params, p + "sa_q", h),
                                linear(params, p + "sa_k", h),
                                linear(params, p + "sa_v", h), config.heads);
    sa = linear(params, p + "sa_o", sa);
    if (probe) {
      auto v = sa.data();
      probe->self_attn_out.emplace_back(v.begin(), v.end());
    }
    x = diff::add(x, gate_mul(sa, gate1));

    Tensor h2 = modulate(diff::layer_norm(x), shift2, scale2);
    Tensor ca = diff::attention(linear(params, p + "ca_q", h2),
                                linear(params, p + "ca_k", phi),
                                linear(params, p + "ca_v", phi), config.heads);
    ca = linear(params, p + "ca_o", ca);
    if (probe) {
      auto v = ca.data();
      probe->cross_attn_out.emplace_back(v.begin(), v.end());
    }
    x = diff::add(x, gate_mul(ca, gate2));

    Tensor h3 = modulate(diff::layer_norm(x), shift3, scale3);
    Tensor m = linear(params, p + "mlp2_",
                      diff::gelu(linear(params, p + "mlp1_", h3)));
    x = diff::add(x, gate_mul(m, gate3));
    check_finite(x, "block " + std::to_string(l));
  }

  Tensor cond = diff::add(
      diff::matmul(
          diff::gelu(diff::add(
              diff::matmul(tau_emb, pick(params, "trunk/final/mod_w1")),
              pick(params, "trunk/final/mod_b1"))),
          pick(params, "trunk/final/mod_w2")),
      pick(params, "trunk/final/mod_b2"));
  Tensor shift = diff::slice(cond, 1, 0, d);
  Tensor scale = diff::slice(cond, 1, d, 2 * d);
  Tensor out = modulate(diff::layer_norm(x), shift, scale);
  check_finite(out, "final modulation");
  return out;
}

Tensor encode_context(const ParamStore& params, const ModelConfig& config,
                      const Tensor& images,
                      const std::vector<int>& instruction_ids) {
  const auto& is = images.shape();
  if (is.size() != 2 || is[1] != config.pixels())
    raise(FORGE_ERR_DIM_MISMATCH,
          "encode_context: images must be (B," +
              std::to_string(config.pixels()) + ")");
  if (static_cast<int>(instruction_ids.size()) != is[0])
    raise(FORGE_ERR_DIM_MISMATCH,
          "encode_context: one instruction id per image row");
  for (int id : instruction_ids)
    if (id < 0 || id >= config.instructions)
      raise(FORGE_ERR_UNKNOWN_INSTRUCTION,
            "instruction id " + std::to_string(id) + " outside vocabulary of " +
                std::to_string(config.instructions));

  Tensor h1 = diff::gelu(linear(params, "ctx/img1_", images));
  Tensor h2 = diff::gelu(linear(params, "ctx/img2_", h1));
  const Tensor& feed = config.context_layer == 1 ? h1 : h2;
  Tensor img_tokens = linear(params, "ctx/proj_", feed);
  Tensor instr = diff::take_rows(pick(params, "ctx/instr"), instruction_ids);
  Tensor flat = diff::add(img_tokens, instr);
  return diff::reshape(flat, {is[0], config.ctx_tokens, config.d});
}

Tensor detection_head(const ParamStore& params, const ModelConfig& config,
                      const Tensor& phi) {
  if (!config.detection)
    raise(FORGE_ERR_BAD_CONFIG, "detection head disabled in config");
  const auto& s = phi.shape();
  if (s.size() != 3)
    raise(FORGE_ERR_SHAPE_MISMATCH, "detection head wants (B,M,d) phi");
  Tensor acc = diff::reshape(diff::slice(phi, 1, 0, 1), {s[0], s[2]});
  for (int m = 1; m < s[1]; ++m)
    acc = diff::add(acc,
                    diff::reshape(diff::slice(phi, 1, m, m + 1), {s[0], s[2]}));
  Tensor pooled = diff::scale(acc, 1.0 / static_cast<double>(s[1]));
  return linear(params, "det/", pooled);
}

}  // namespace forge
