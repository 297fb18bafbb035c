#pragma once

#include <vector>

#include "forge/embodiment.hpp"

namespace forge {

// Value snapshots taken inside the trunk, for tests that need to see what a
// sublayer produced without exposing the graph.
struct TrunkProbe {
  std::vector<std::vector<double>> self_attn_out;   // per block
  std::vector<std::vector<double>> cross_attn_out;  // per block
};

void init_trunk_params(diff::ParamStore& params, const ModelConfig& config,
                       Rng& rng);
void init_context_params(diff::ParamStore& params, const ModelConfig& config,
                         Rng& rng);

// tokens (B, T, d) with T = 1 + H; phi (B, M, d); tau_emb (B, tau_embed_dim).
// Each block: self-attention over the token row, cross-attention into phi,
// MLP; every sublayer gated and modulated from the tau embedding, gates born
// zero so a fresh trunk is the identity. Output already carries the final
// modulated layer norm. Non-finite activations name the block they appear in.
diff::Tensor trunk_forward(const diff::ParamStore& params,
                           const ModelConfig& config,
                           const diff::Tensor& tokens,
                           const diff::Tensor& phi,
                           const diff::Tensor& tau_emb,
                           TrunkProbe* probe = nullptr);

// images flattened (B, res_h*res_w), one instruction id per row ->
// phi (B, M, d). Image MLP output plus an instruction embedding table;
// config.context_layer picks which MLP layer feeds the projection.
diff::Tensor encode_context(const diff::ParamStore& params,
                            const ModelConfig& config,
                            const diff::Tensor& images,
                            const std::vector<int>& instruction_ids);

// phi (B, M, d) -> predicted target centers (B, 2) off the pooled tokens.
diff::Tensor detection_head(const diff::ParamStore& params,
                            const ModelConfig& config,
                            const diff::Tensor& phi);

}  // namespace forge
