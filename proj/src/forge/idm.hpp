#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "forge/dit.hpp"
#include "forge/embodiment.hpp"
#include "forge/flow.hpp"
#include "forge/optim.hpp"

namespace forge {

// One supervised example: two frames `horizon` steps apart plus the action
// chunk that connects them.
struct IdmSample {
  std::vector<double> frame_a;
  std::vector<double> frame_b;
  std::vector<double> actions;  // horizon x action_dim, empty when unlabeled
};

// Inverse dynamics model for one embodiment: the same trunk the policy uses,
// fed context tokens from a two-frame encoder instead of image+instruction.
// Trained with the flow-matching objective over ground-truth chunks; applied
// by sampling a chunk conditioned on a frame pair.
class IdmModel {
 public:
  IdmModel(const ModelConfig& config, const EmbodimentSpec& spec,
           uint64_t seed);

  diff::Tensor loss(const std::vector<IdmSample>& batch, Rng& rng);
  std::vector<double> predict_chunk(const std::vector<double>& frame_a,
                                    const std::vector<double>& frame_b, int K,
                                    Rng& rng) const;

  void save(const std::string& path,
            const nlohmann::ordered_json& extra_meta = {}) const;
  static IdmModel load(const std::string& path);

  const ModelConfig& config() const { return config_; }
  const EmbodimentSpec& spec() const { return spec_; }
  diff::ParamStore& params() { return params_; }
  const diff::ParamStore& params() const { return params_; }

 private:
  IdmModel() = default;
  diff::Tensor frame_tokens(const diff::Tensor& frames_a,
                            const diff::Tensor& frames_b) const;

  ModelConfig config_;
  EmbodimentSpec spec_;
  diff::ParamStore params_;
};

TrainResult train_idm(IdmModel& model,
                      const std::function<std::vector<IdmSample>(int step)>&
                          provider,
                      const TrainConfig& config);

// Every (t, t+horizon) window with a full action chunk, across all episodes,
// using the first camera. Refuses datasets mixing embodiment tags: one IDM
// serves one embodiment.
std::vector<IdmSample> idm_samples_from_dataset(const std::string& root,
                                                int horizon,
                                                std::string* tag_out =
                                                    nullptr);

// Writes a copy of the dataset whose frames carry pseudo-actions: frame t
// takes the first action of the chunk sampled between (x_t, x_{t+H}); the
// last H frames of each episode are dropped. Output is tagged
// "idm:<embodiment>" with recomputed stats.
void idm_label_dataset(const IdmModel& model, const std::string& in_root,
                       const std::string& out_root, int K, uint64_t seed);

struct IdmEval {
  double model_mse = 0.0;     // pseudo-label vs ground truth, per-dim mean
  double baseline_mse = 0.0;  // dataset-mean action predictor
};

IdmEval idm_eval(const IdmModel& model, const std::string& root, int K,
                 uint64_t seed);

}  // namespace forge
