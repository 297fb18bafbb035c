#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "forge/tensor.hpp"

namespace forge {

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.95;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;
};

// Piecewise schedule: linear warmup to base_lr over the first
// round(warmup_ratio * total) steps, cosine decay to zero after. Stateless.
double cosine_lr(int64_t step, int64_t total_steps, double base_lr,
                 double warmup_ratio);

// Shared shape of a training run. Every trainer in this codebase is a pure
// function of (model initialization, batch provider, this config).
struct TrainConfig {
  int total_steps = 100;
  int checkpoint_every = 50;
  double base_lr = 1e-4;
  double warmup_ratio = 0.05;
  double weight_decay = 1e-5;
  uint64_t seed = 0;
  std::string out_dir;  // empty skips checkpoints and the loss log
};

struct TrainResult {
  std::vector<double> losses;
  std::vector<std::string> checkpoint_paths;
};

// Decoupled weight decay; moment state keyed by parameter name so the same
// optimizer survives parameters being registered in any order.
class AdamW {
 public:
  explicit AdamW(AdamWConfig config) : config_(config) {}

  const AdamWConfig& config() const { return config_; }

  // Applies one update from the accumulated gradients at the given learning
  // rate, then leaves gradients untouched (caller zeroes them).
  void step(diff::ParamStore& params, double lr);

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  AdamWConfig config_;
  std::map<std::string, Moments> state_;
  int64_t t_ = 0;
};

}  // namespace forge
