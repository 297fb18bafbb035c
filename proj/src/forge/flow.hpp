#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "forge/dit.hpp"
#include "forge/embodiment.hpp"
#include "forge/optim.hpp"
#include "forge/rng.hpp"
#include "forge/tensor.hpp"

namespace forge {

// Timestep sampler pushes mass toward low tau (high noise). s caps the
// largest reachable timestep.
inline constexpr double kTauShift = 0.999;

// Inverse CDF of the timestep law; sample_tau feeds it one uniform draw.
double tau_from_uniform(double u);
double sample_tau(Rng& rng);
// P(tau' <= t) under the sampler, for distribution tests.
double tau_cdf(double t);

// One noised action chunk. `noised` is tau*actions + (1-tau)*eps, stored
// exactly as computed; all three row-major H x action_dim.
struct FlowSample {
  double tau = 0.0;
  std::vector<double> eps;
  std::vector<double> noised;
};

FlowSample noise_chunk(const std::vector<double>& actions, double tau,
                       Rng& rng);

// One training element. `actions` is horizon x action_dim row-major; `mask`
// has one entry per horizon step, zero marking padding that must not reach
// the loss. Detection targets are optional per element.
struct BatchElement {
  std::string embodiment_tag;
  std::vector<double> image;  // res_h*res_w flattened
  int instruction_id = 0;
  std::vector<double> state;
  std::vector<double> actions;
  std::vector<double> mask;
  bool has_target = false;
  double target_x = 0.0;
  double target_y = 0.0;
};

using Batch = std::vector<BatchElement>;

// Velocity field over a flattened chunk, used by the Euler integrator. The
// integrator is exact on fields that ignore both arguments.
using VelocityField =
    std::function<std::vector<double>(const std::vector<double>& chunk,
                                      double tau)>;

// Draws the starting chunk from rng (h*dim standard normals, row-major),
// then applies K forward Euler steps of size 1/K with tau_k = k/K. Raises
// on non-finite intermediates.
std::vector<double> integrate_chunk(const VelocityField& field, int h, int dim,
                                    int K, Rng& rng);

// The action policy: context encoder, DiT trunk, and per-embodiment
// adapters behind one parameter store.
class Policy {
 public:
  Policy(const ModelConfig& config, const Registry& registry, uint64_t seed);

  // Flow-matching loss over a possibly mixed-embodiment batch, averaged over
  // every unmasked predicted scalar, plus the detection term when the config
  // enables it. Builds a graph over params().
  diff::Tensor loss(const Batch& batch, Rng& rng);

  // K-step Euler sampling of one action chunk for one observation. With
  // `field_override` the model is bypassed and the given field integrated
  // instead; the starting noise still comes from rng.
  std::vector<double> sample_chunk(const std::vector<double>& image,
                                   int instruction_id,
                                   const std::vector<double>& state,
                                   const std::string& embodiment_tag, int K,
                                   Rng& rng,
                                   const VelocityField* field_override =
                                       nullptr) const;

  void save(const std::string& path,
            const nlohmann::ordered_json& extra_meta = {}) const;
  static Policy load(const std::string& path);

  diff::ParamStore& params() { return params_; }
  const diff::ParamStore& params() const { return params_; }
  const ModelConfig& config() const { return config_; }
  const Registry& registry() const { return registry_; }

 private:
  Policy() = default;

  ModelConfig config_;
  Registry registry_;
  diff::ParamStore params_;
};

// Stacked sinusoidal embeddings for a batch of timesteps, (B, tau_embed_dim).
diff::Tensor embed_taus(const std::vector<double>& taus, int dim);

// Optimizes the policy against batches from `provider` (a deterministic
// function of the step index). Writes out_dir/loss.jsonl one line per step
// and a checkpoint every checkpoint_every steps. The run is a pure function
// of (policy initialization, provider, config).
TrainResult train_policy(Policy& policy,
                         const std::function<Batch(int step)>& provider,
                         const TrainConfig& config);

}  // namespace forge
