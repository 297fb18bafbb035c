#include "forge/embodiment.hpp"

#include <cmath>

#include "forge/error.hpp"

namespace forge {

using diff::ParamStore;
using diff::Tensor;

nlohmann::ordered_json ModelConfig::to_json() const {
  nlohmann::ordered_json j;
  j["d"] = d;
  j["layers"] = layers;
  j["heads"] = heads;
  j["ctx_tokens"] = ctx_tokens;
  j["mlp_hidden"] = mlp_hidden;
  j["adapter_hidden"] = adapter_hidden;
  j["ctx_hidden"] = ctx_hidden;
  j["tau_embed_dim"] = tau_embed_dim;
  j["context_layer"] = context_layer;
  j["res_h"] = res_h;
  j["res_w"] = res_w;
  j["instructions"] = instructions;
  j["detection"] = detection;
  return j;
}

ModelConfig ModelConfig::from_json(const nlohmann::ordered_json& j) {
  ModelConfig c;
  c.d = j.value("d", c.d);
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.ctx_tokens = j.value("ctx_tokens", c.ctx_tokens);
  c.mlp_hidden = j.value("mlp_hidden", c.mlp_hidden);
  c.adapter_hidden = j.value("adapter_hidden", c.adapter_hidden);
  c.ctx_hidden = j.value("ctx_hidden", c.ctx_hidden);
  c.tau_embed_dim = j.value("tau_embed_dim", c.tau_embed_dim);
  c.context_layer = j.value("context_layer", c.context_layer);
  c.res_h = j.value("res_h", c.res_h);
  c.res_w = j.value("res_w", c.res_w);
  c.instructions = j.value("instructions", c.instructions);
  c.detection = j.value("detection", c.detection);
  return c;
}

void Registry::add(EmbodimentSpec spec) {
  if (spec.name.empty() || spec.state_dim < 1 || spec.action_dim < 1 ||
      spec.horizon < 1)
    raise(FORGE_ERR_BAD_CONFIG,
          "embodiment '" + spec.name + "': dims and horizon must be >= 1");
  if (has(spec.name))
    raise(FORGE_ERR_BAD_CONFIG,
          "embodiment '" + spec.name + "' registered twice");
  specs_.push_back(std::move(spec));
}

bool Registry::has(const std::string& name) const {
  for (const auto& s : specs_)
    if (s.name == name) return true;
  return false;
}

const EmbodimentSpec& Registry::get(const std::string& name) const {
  for (const auto& s : specs_)
    if (s.name == name) return s;
  raise(FORGE_ERR_UNKNOWN_EMBODIMENT, "embodiment '" + name + "'");
}

nlohmann::ordered_json Registry::to_json() const {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& s : specs_) {
    nlohmann::ordered_json e;
    e["name"] = s.name;
    e["state_dim"] = s.state_dim;
    e["action_dim"] = s.action_dim;
    e["horizon"] = s.horizon;
    arr.push_back(std::move(e));
  }
  return arr;
}

Registry Registry::from_json(const nlohmann::ordered_json& j) {
  Registry r;
  for (const auto& e : j) {
    EmbodimentSpec s;
    s.name = e.at("name").get<std::string>();
    s.state_dim = e.at("state_dim").get<int>();
    s.action_dim = e.at("action_dim").get<int>();
    s.horizon = e.at("horizon").get<int>();
    r.add(std::move(s));
  }
  return r;
}

std::vector<double> timestep_embedding(double tau, int dim) {
  if (!(tau >= 0.0 && tau <= 1.0))
    raise(FORGE_ERR_TAU_RANGE, "tau " + std::to_string(tau));
  if (dim < 2 || dim % 2 != 0)
    raise(FORGE_ERR_BAD_CONFIG, "timestep embedding dim must be even");
  int bands = dim / 2;
  std::vector<double> out(static_cast<size_t>(dim));
  for (int i = 0; i < bands; ++i) {
    double freq = bands == 1
                      ? 1.0
                      : std::pow(1000.0, static_cast<double>(i) / (bands - 1));
    out[static_cast<size_t>(2 * i)] = std::sin(freq * tau);
    out[static_cast<size_t>(2 * i + 1)] = std::cos(freq * tau);
  }
  return out;
}

namespace {

std::string key(const EmbodimentSpec& spec, const char* leaf) {
  return "emb/" + spec.name + "/" + leaf;
}

void init_linear(ParamStore& params, const std::string& w_name,
                 const std::string& b_name, int in, int out, Rng& rng) {
  params[w_name] =
      Tensor::randn({in, out}, rng, 1.0 / std::sqrt(static_cast<double>(in)),
                    true);
  params[b_name] = Tensor::zeros({out}, true);
}

const Tensor& pick(const ParamStore& params, const std::string& name) {
  auto it = params.find(name);
  if (it == params.end())
    raise(FORGE_ERR_UNKNOWN_EMBODIMENT, "no parameters under '" + name + "'");
  return it->second;
}

}  // namespace

void init_adapter_params(ParamStore& params, const ModelConfig& config,
                         const EmbodimentSpec& spec, Rng& rng) {
  int h = config.adapter_hidden;
  init_linear(params, key(spec, "state_w1"), key(spec, "state_b1"),
              spec.state_dim, h, rng);
  init_linear(params, key(spec, "state_w2"), key(spec, "state_b2"), h,
              config.d, rng);
  init_linear(params, key(spec, "act_w1"), key(spec, "act_b1"),
              spec.action_dim + config.tau_embed_dim, h, rng);
  init_linear(params, key(spec, "act_w2"), key(spec, "act_b2"), h, config.d,
              rng);
  init_linear(params, key(spec, "dec_w1"), key(spec, "dec_b1"), config.d, h,
              rng);
  init_linear(params, key(spec, "dec_w2"), key(spec, "dec_b2"), h,
              spec.action_dim, rng);
}

Tensor encode_state(const ParamStore& params, const ModelConfig& config,
                    const EmbodimentSpec& spec, const Tensor& states) {
  (void)config;
  if (states.shape().size() != 2 || states.shape()[1] != spec.state_dim)
    raise(FORGE_ERR_DIM_MISMATCH,
          "encode_state for '" + spec.name + "': got width " +
              std::to_string(states.shape().empty() ? -1 : states.shape().back()) +
              ", spec says " + std::to_string(spec.state_dim));
  Tensor h = diff::gelu(diff::add(
      diff::matmul(states, pick(params, key(spec, "state_w1"))),
      pick(params, key(spec, "state_b1"))));
  return diff::add(diff::matmul(h, pick(params, key(spec, "state_w2"))),
                   pick(params, key(spec, "state_b2")));
}

Tensor encode_action(const ParamStore& params, const ModelConfig& config,
                     const EmbodimentSpec& spec, const Tensor& noised,
                     const Tensor& tau_emb) {
  const auto& s = noised.shape();
  if (s.size() != 3 || s[1] != spec.horizon || s[2] != spec.action_dim)
    raise(FORGE_ERR_DIM_MISMATCH,
          "encode_action for '" + spec.name + "': chunk must be (B," +
              std::to_string(spec.horizon) + "," +
              std::to_string(spec.action_dim) + ")");
  if (tau_emb.shape().size() != 2 || tau_emb.shape()[0] != s[0] ||
      tau_emb.shape()[1] != config.tau_embed_dim)
    raise(FORGE_ERR_DIM_MISMATCH, "encode_action: timestep embedding shape");
  Tensor tau_tokens = diff::expand_tokens(tau_emb, spec.horizon);
  Tensor x = diff::concat({noised, tau_tokens}, 2);
  Tensor h = diff::gelu(
      diff::add(diff::matmul(x, pick(params, key(spec, "act_w1"))),
                pick(params, key(spec, "act_b1"))));
  return diff::add(diff::matmul(h, pick(params, key(spec, "act_w2"))),
                   pick(params, key(spec, "act_b2")));
}

Tensor decode_actions(const ParamStore& params, const ModelConfig& config,
                      const EmbodimentSpec& spec, const Tensor& tokens) {
  const auto& s = tokens.shape();
  if (s.size() != 3 || s[1] != spec.horizon || s[2] != config.d)
    raise(FORGE_ERR_DIM_MISMATCH,
          "decode_actions for '" + spec.name + "': need (B," +
              std::to_string(spec.horizon) + "," + std::to_string(config.d) +
              ") tokens");
  Tensor h = diff::gelu(
      diff::add(diff::matmul(tokens, pick(params, key(spec, "dec_w1"))),
                pick(params, key(spec, "dec_b1"))));
  return diff::add(diff::matmul(h, pick(params, key(spec, "dec_w2"))),
                   pick(params, key(spec, "dec_b2")));
}

}  // namespace forge
