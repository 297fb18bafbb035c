#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "forge/rng.hpp"
#include "forge/tensor.hpp"

namespace forge {

// Shared dimensions for the policy stack. One instance describes the trunk,
// the context encoder, and every adapter hanging off the registry.
struct ModelConfig {
  int d = 64;             // model width
  int layers = 4;         // DiT blocks
  int heads = 4;
  int ctx_tokens = 8;     // M
  int mlp_hidden = 0;     // 0 picks 4*d
  int adapter_hidden = 128;
  int ctx_hidden = 64;    // image MLP hidden width
  int tau_embed_dim = 16;
  int context_layer = 2;  // 1 = middle layer feeds phi, 2 = final (default)
  int res_h = 16;
  int res_w = 16;
  int instructions = 1;   // instruction vocabulary size
  bool detection = true;

  int mlp_width() const { return mlp_hidden > 0 ? mlp_hidden : 4 * d; }
  int pixels() const { return res_h * res_w; }

  nlohmann::ordered_json to_json() const;
  static ModelConfig from_json(const nlohmann::ordered_json& j);
};

struct EmbodimentSpec {
  std::string name;
  int state_dim = 0;
  int action_dim = 0;
  int horizon = 16;  // H
};

// Name-addressed set of embodiments the policy serves. Order of addition is
// preserved; lookups on unknown names fail loudly.
class Registry {
 public:
  void add(EmbodimentSpec spec);
  bool has(const std::string& name) const;
  const EmbodimentSpec& get(const std::string& name) const;
  const std::vector<EmbodimentSpec>& specs() const { return specs_; }

  nlohmann::ordered_json to_json() const;
  static Registry from_json(const nlohmann::ordered_json& j);

 private:
  std::vector<EmbodimentSpec> specs_;
};

// Sinusoidal embedding of the flow timestep, frequencies geometric from 1 to
// 1000, sin/cos interleaved per frequency. Refuses tau outside [0,1].
std::vector<double> timestep_embedding(double tau, int dim);

// Fresh adapter parameters for one embodiment under "emb/<name>/". Touches
// no other keys.
void init_adapter_params(diff::ParamStore& params, const ModelConfig& config,
                         const EmbodimentSpec& spec, Rng& rng);

// Batch forms; the single-sample contracts are these at B=1.
// states (B, state_dim) -> (B, d)
diff::Tensor encode_state(const diff::ParamStore& params,
                          const ModelConfig& config,
                          const EmbodimentSpec& spec,
                          const diff::Tensor& states);
// noised (B, H, action_dim) + tau_emb (B, tau_embed_dim) -> (B, H, d)
diff::Tensor encode_action(const diff::ParamStore& params,
                           const ModelConfig& config,
                           const EmbodimentSpec& spec,
                           const diff::Tensor& noised,
                           const diff::Tensor& tau_emb);
// tokens (B, H, d) -> (B, H, action_dim)
diff::Tensor decode_actions(const diff::ParamStore& params,
                            const ModelConfig& config,
                            const EmbodimentSpec& spec,
                            const diff::Tensor& tokens);

}  // namespace forge
