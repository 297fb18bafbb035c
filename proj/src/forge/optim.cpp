#include "forge/optim.hpp"

#include <cmath>

#include "forge/error.hpp"

namespace forge {

double cosine_lr(int64_t step, int64_t total_steps, double base_lr,
                 double warmup_ratio) {
  if (total_steps <= 0) raise(FORGE_ERR_BAD_CONFIG, "cosine_lr: total_steps");
  int64_t warmup = std::llround(warmup_ratio * static_cast<double>(total_steps));
  if (step < warmup)
    return base_lr * static_cast<double>(step + 1) /
           static_cast<double>(warmup);
  int64_t span = total_steps - warmup;
  if (span <= 0) return base_lr;
  double progress = static_cast<double>(step - warmup) /
                    static_cast<double>(span);
  progress = std::min(1.0, std::max(0.0, progress));
  return base_lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

void AdamW::step(diff::ParamStore& params, double lr) {
  ++t_;
  double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (auto& [name, p] : params) {
    auto& mom = state_[name];
    auto vals = p.data();
    auto grads = p.grad();
    if (mom.m.size() != vals.size()) {
      mom.m.assign(vals.size(), 0.0);
      mom.v.assign(vals.size(), 0.0);
    }
    for (size_t i = 0; i < vals.size(); ++i) {
      double g = grads[i];
      mom.m[i] = config_.beta1 * mom.m[i] + (1.0 - config_.beta1) * g;
      mom.v[i] = config_.beta2 * mom.v[i] + (1.0 - config_.beta2) * g * g;
      double mhat = mom.m[i] / bc1;
      double vhat = mom.v[i] / bc2;
      vals[i] -= lr * (mhat / (std::sqrt(vhat) + config_.eps) +
                       config_.weight_decay * vals[i]);
    }
  }
}

}  // namespace forge
