#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "forge/optim.hpp"
#include "forge/rng.hpp"
#include "forge/tensor.hpp"

namespace forge {

struct VqConfig {
  int pixels = 256;  // flattened frame size, must match the dataset
  int d_z = 8;
  int codes = 32;
  double beta = 0.25;
  int window = 16;  // frame separation H_w
  int hidden = 64;

  nlohmann::ordered_json to_json() const;
  static VqConfig from_json(const nlohmann::ordered_json& j);
};

// Two frames `window` steps apart within one episode, flattened.
struct FramePair {
  std::vector<double> x_t;
  std::vector<double> x_next;
};

struct LatentAction {
  std::vector<double> z;  // continuous pre-quantized embedding
  int code_index = 0;
};

// Frame-pair autoencoder with a quantized bottleneck. The encoder maps both
// frames to z, the codebook snaps z to its nearest entry, and the decoder
// rebuilds the later frame from (code, earlier frame). The encoder alone
// serves as the latent-action labeler.
class VqVae {
 public:
  VqVae(const VqConfig& config, uint64_t seed);

  LatentAction encode(const FramePair& pair) const;
  // argmin over codes of squared distance; exact ties take the lowest index
  int nearest_code(const std::vector<double>& z) const;
  std::vector<double> decode_latent(const std::vector<double>& z,
                                    const std::vector<double>& x_t) const;
  std::vector<double> decode_code(int code_index,
                                  const std::vector<double>& x_t) const;

  // Reconstruction MSE + codebook pull + beta-weighted commitment, with the
  // straight-through estimator carrying decoder gradients past the
  // quantizer. Also tallies per-code usage for dead-code revival.
  diff::Tensor loss(const std::vector<FramePair>& batch);

  // Re-seeds every code unused since the last call to a recent encoder
  // output. Returns how many codes moved.
  int revive_dead_codes(Rng& rng);

  void save(const std::string& path,
            const nlohmann::ordered_json& extra_meta = {}) const;
  static VqVae load(const std::string& path);

  const VqConfig& config() const { return config_; }
  diff::ParamStore& params() { return params_; }
  const diff::ParamStore& params() const { return params_; }
  const std::vector<int64_t>& code_usage() const { return usage_; }

 private:
  VqVae() = default;
  diff::Tensor encode_batch(const std::vector<FramePair>& batch) const;

  VqConfig config_;
  diff::ParamStore params_;
  std::vector<int64_t> usage_;          // per code, since last revival
  std::vector<std::vector<double>> recent_z_;  // ring buffer of encoder outputs
  size_t recent_pos_ = 0;
};

// Training loop over frame-pair batches; every `revive_every` steps dead
// codes are re-seeded. Deterministic per seed.
TrainResult train_vqvae(VqVae& model,
                        const std::function<std::vector<FramePair>(int step)>&
                            provider,
                        const TrainConfig& config, int revive_every = 100);

// All (t, t+window) frame pairs of every episode in the dataset, in episode
// order, using the first camera; episodes shorter than window+1 raise.
std::vector<FramePair> dataset_frame_pairs(const std::string& root,
                                           int window);

// Labels every episode of an action-less dataset with latent actions under
// the "lapa" embodiment: frame t gets z from (x_t, x_{t+window}), the last
// `window` frames are dropped, action stats are recomputed. The result is a
// valid dataset with action width d_z.
void lapa_label_dataset(const VqVae& model, const std::string& in_root,
                        const std::string& out_root);

}  // namespace forge
