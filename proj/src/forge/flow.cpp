#include "forge/flow.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "forge/checkpoint.hpp"
#include "forge/error.hpp"
#include "forge/optim.hpp"

namespace forge {

using diff::ParamStore;
using diff::Tensor;
using nlohmann::ordered_json;

double tau_from_uniform(double u) {
  return kTauShift * (1.0 - std::pow(u, 2.0 / 3.0));
}

double sample_tau(Rng& rng) { return tau_from_uniform(rng.uniform()); }

double tau_cdf(double t) {
  if (t <= 0.0) return 0.0;
  if (t >= kTauShift) return 1.0;
  return 1.0 - std::pow((kTauShift - t) / kTauShift, 1.5);
}

FlowSample noise_chunk(const std::vector<double>& actions, double tau,
                       Rng& rng) {
  for (double a : actions)
    if (!std::isfinite(a))
      raise(FORGE_ERR_NON_FINITE, "noise_chunk: non-finite action");
  FlowSample out;
  out.tau = tau;
  out.eps.resize(actions.size());
  out.noised.resize(actions.size());
  for (size_t i = 0; i < actions.size(); ++i) {
    out.eps[i] = rng.normal();
    out.noised[i] = tau * actions[i] + (1.0 - tau) * out.eps[i];
  }
  return out;
}

std::vector<double> integrate_chunk(const VelocityField& field, int h, int dim,
                                    int K, Rng& rng) {
  if (K < 1) raise(FORGE_ERR_BAD_CONFIG, "integrate_chunk wants K >= 1");
  if (h < 1 || dim < 1)
    raise(FORGE_ERR_DIM_MISMATCH, "integrate_chunk: empty chunk shape");
  std::vector<double> a(static_cast<size_t>(h) * dim);
  for (double& v : a) v = rng.normal();
  const double step = 1.0 / static_cast<double>(K);
  for (int k = 0; k < K; ++k) {
    std::vector<double> v = field(a, static_cast<double>(k) * step);
    if (v.size() != a.size())
      raise(FORGE_ERR_DIM_MISMATCH, "integrate_chunk: field size mismatch");
    for (size_t i = 0; i < a.size(); ++i) {
      a[i] += step * v[i];
      if (!std::isfinite(a[i]))
        raise(FORGE_ERR_NON_FINITE,
              "integrate_chunk: non-finite chunk after step " +
                  std::to_string(k + 1));
    }
  }
  return a;
}

Tensor embed_taus(const std::vector<double>& taus, int dim) {
  std::vector<double> rows;
  rows.reserve(taus.size() * static_cast<size_t>(dim));
  for (double t : taus) {
    std::vector<double> e = timestep_embedding(t, dim);
    rows.insert(rows.end(), e.begin(), e.end());
  }
  return Tensor::from_data({static_cast<int>(taus.size()), dim},
                           std::move(rows));
}

Policy::Policy(const ModelConfig& config, const Registry& registry,
               uint64_t seed)
    : config_(config), registry_(registry) {
  Rng rng(seed);
  init_trunk_params(params_, config_, rng);
  init_context_params(params_, config_, rng);
  for (const EmbodimentSpec& spec : registry_.specs())
    init_adapter_params(params_, config_, spec, rng);
}

namespace {

void check_element(const BatchElement& el, const ModelConfig& config,
                   const EmbodimentSpec& spec) {
  if (static_cast<int>(el.image.size()) != config.pixels())
    raise(FORGE_ERR_DIM_MISMATCH,
          "batch element image size " + std::to_string(el.image.size()) +
              ", expected " + std::to_string(config.pixels()));
  if (static_cast<int>(el.state.size()) != spec.state_dim)
    raise(FORGE_ERR_DIM_MISMATCH,
          "batch element state width " + std::to_string(el.state.size()) +
              " for embodiment '" + spec.name + "'");
  size_t want = static_cast<size_t>(spec.horizon) * spec.action_dim;
  if (el.actions.size() != want)
    raise(FORGE_ERR_DIM_MISMATCH,
          "batch element action chunk size " +
              std::to_string(el.actions.size()) + " for embodiment '" +
              spec.name + "'");
  if (!el.mask.empty() &&
      static_cast<int>(el.mask.size()) != spec.horizon)
    raise(FORGE_ERR_DIM_MISMATCH, "batch element mask length " +
                                      std::to_string(el.mask.size()) +
                                      ", expected " +
                                      std::to_string(spec.horizon));
}

}  // namespace

Tensor Policy::loss(const Batch& batch, Rng& rng) {
  if (batch.empty()) raise(FORGE_ERR_BAD_CONFIG, "loss over an empty batch");
  std::map<std::string, std::vector<int>> groups;
  for (size_t i = 0; i < batch.size(); ++i)
    groups[batch[i].embodiment_tag].push_back(static_cast<int>(i));
  for (const auto& [tag, idx] : groups)
    if (!registry_.has(tag))
      raise(FORGE_ERR_UNKNOWN_EMBODIMENT,
            "batch references unregistered embodiment '" + tag + "'");

  Tensor fm_sum;
  bool have_fm = false;
  double fm_count = 0.0;
  Tensor det_sum;
  bool have_det = false;
  double det_count = 0.0;

  for (const auto& [tag, idx] : groups) {
    const EmbodimentSpec& spec = registry_.get(tag);
    const int b = static_cast<int>(idx.size());
    const int h = spec.horizon;
    const int ad = spec.action_dim;

    std::vector<double> taus(b);
    std::vector<double> images, states, noised, target, mask_full;
    std::vector<int> instr(b);
    std::vector<double> gt;
    std::vector<double> gt_mask;
    int with_target = 0;
    images.reserve(static_cast<size_t>(b) * config_.pixels());
    states.reserve(static_cast<size_t>(b) * spec.state_dim);
    noised.reserve(static_cast<size_t>(b) * h * ad);
    target.reserve(static_cast<size_t>(b) * h * ad);
    mask_full.reserve(static_cast<size_t>(b) * h * ad);

    for (int j = 0; j < b; ++j) {
      const BatchElement& el = batch[idx[j]];
      check_element(el, config_, spec);
      taus[j] = sample_tau(rng);
      FlowSample fs = noise_chunk(el.actions, taus[j], rng);
      images.insert(images.end(), el.image.begin(), el.image.end());
      states.insert(states.end(), el.state.begin(), el.state.end());
      noised.insert(noised.end(), fs.noised.begin(), fs.noised.end());
      for (size_t i = 0; i < el.actions.size(); ++i)
        target.push_back(el.actions[i] - fs.eps[i]);
      for (int t = 0; t < h; ++t) {
        double m = el.mask.empty() ? 1.0 : el.mask[t];
        for (int c = 0; c < ad; ++c) mask_full.push_back(m);
        fm_count += m * ad;
      }
      instr[j] = el.instruction_id;
      if (el.has_target) ++with_target;
      gt.push_back(el.target_x);
      gt.push_back(el.target_y);
      double tm = el.has_target ? 1.0 : 0.0;
      gt_mask.push_back(tm);
      gt_mask.push_back(tm);
    }

    Tensor tau_emb = embed_taus(taus, config_.tau_embed_dim);
    Tensor phi = encode_context(
        params_, config_,
        Tensor::from_data({b, config_.pixels()}, std::move(images)), instr);
    Tensor state_tok = diff::reshape(
        encode_state(params_, config_, spec,
                     Tensor::from_data({b, spec.state_dim},
                                       std::move(states))),
        {b, 1, config_.d});
    Tensor act_tok =
        encode_action(params_, config_, spec,
                      Tensor::from_data({b, h, ad}, std::move(noised)),
                      tau_emb);
    Tensor out = trunk_forward(params_, config_,
                               diff::concat({state_tok, act_tok}, 1), phi,
                               tau_emb);
    Tensor v = decode_actions(params_, config_, spec,
                              diff::slice(out, 1, 1, 1 + h));
    Tensor err = diff::sum_of_squares(
        diff::mul(diff::sub(v, Tensor::from_data({b, h, ad},
                                                 std::move(target))),
                  Tensor::from_data({b, h, ad}, std::move(mask_full))));
    fm_sum = have_fm ? diff::add(fm_sum, err) : err;
    have_fm = true;

    if (config_.detection && with_target > 0) {
      Tensor pred = detection_head(params_, config_, phi);
      Tensor derr = diff::sum_of_squares(
          diff::mul(diff::sub(pred, Tensor::from_data({b, 2}, std::move(gt))),
                    Tensor::from_data({b, 2}, std::move(gt_mask))));
      det_sum = have_det ? diff::add(det_sum, derr) : derr;
      have_det = true;
      det_count += with_target;
    }
  }

  if (fm_count <= 0.0)
    raise(FORGE_ERR_BAD_CONFIG, "loss over a fully masked batch");
  Tensor total = diff::scale(fm_sum, 1.0 / fm_count);
  if (have_det)
    total = diff::add(total, diff::scale(det_sum, 1.0 / det_count));
  return total;
}

std::vector<double> Policy::sample_chunk(const std::vector<double>& image,
                                         int instruction_id,
                                         const std::vector<double>& state,
                                         const std::string& embodiment_tag,
                                         int K, Rng& rng,
                                         const VelocityField* field_override)
    const {
  if (!registry_.has(embodiment_tag))
    raise(FORGE_ERR_UNKNOWN_EMBODIMENT,
          "sample_chunk for unregistered embodiment '" + embodiment_tag + "'");
  const EmbodimentSpec& spec = registry_.get(embodiment_tag);
  diff::NoGradGuard guard;
  if (field_override)
    return integrate_chunk(*field_override, spec.horizon, spec.action_dim, K,
                           rng);

  if (static_cast<int>(image.size()) != config_.pixels())
    raise(FORGE_ERR_DIM_MISMATCH, "sample_chunk image size");
  if (static_cast<int>(state.size()) != spec.state_dim)
    raise(FORGE_ERR_DIM_MISMATCH, "sample_chunk state width");
  Tensor phi = encode_context(params_, config_,
                              Tensor::from_data({1, config_.pixels()}, image),
                              {instruction_id});
  Tensor state_tok = diff::reshape(
      encode_state(params_, config_, spec,
                   Tensor::from_data({1, spec.state_dim}, state)),
      {1, 1, config_.d});

  VelocityField field = [&](const std::vector<double>& a, double tau) {
    Tensor tau_emb = embed_taus({tau}, config_.tau_embed_dim);
    Tensor act_tok = encode_action(
        params_, config_, spec,
        Tensor::from_data({1, spec.horizon, spec.action_dim}, a), tau_emb);
    Tensor out = trunk_forward(params_, config_,
                               diff::concat({state_tok, act_tok}, 1), phi,
                               tau_emb);
    Tensor v = decode_actions(params_, config_, spec,
                              diff::slice(out, 1, 1, 1 + spec.horizon));
    auto span = v.data();
    return std::vector<double>(span.begin(), span.end());
  };
  return integrate_chunk(field, spec.horizon, spec.action_dim, K, rng);
}

void Policy::save(const std::string& path,
                  const ordered_json& extra_meta) const {
  ordered_json meta;
  meta["kind"] = "policy";
  meta["config"] = config_.to_json();
  meta["registry"] = registry_.to_json();
  if (extra_meta.is_object())
    for (const auto& [k, v] : extra_meta.items()) meta[k] = v;
  save_checkpoint(path, params_, meta);
}

Policy Policy::load(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  if (!ck.meta.contains("config") || !ck.meta.contains("registry"))
    raise(FORGE_ERR_BAD_JSON,
          "checkpoint at " + path + " carries no policy config");
  Policy p;
  p.config_ = ModelConfig::from_json(ck.meta["config"]);
  p.registry_ = Registry::from_json(ck.meta["registry"]);
  p.params_ = std::move(ck.params);
  return p;
}

TrainResult train_policy(Policy& policy,
                         const std::function<Batch(int step)>& provider,
                         const TrainConfig& config) {
  if (config.total_steps < 1 || config.checkpoint_every < 1)
    raise(FORGE_ERR_BAD_CONFIG, "train_policy wants positive step counts");
  AdamWConfig opt_config;
  opt_config.lr = config.base_lr;
  opt_config.weight_decay = config.weight_decay;
  AdamW opt(opt_config);

  std::ofstream log;
  if (!config.out_dir.empty()) {
    std::filesystem::create_directories(config.out_dir);
    log.open(config.out_dir + "/loss.jsonl", std::ios::trunc);
    if (!log) raise(FORGE_ERR_IO, "cannot write " + config.out_dir);
  }

  Rng base(config.seed);
  TrainResult result;
  for (int step = 0; step < config.total_steps; ++step) {
    Rng step_rng = base.split(static_cast<uint64_t>(step));
    Batch batch = provider(step);
    Tensor loss = policy.loss(batch, step_rng);
    const double value = loss.scalar();
    diff::zero_grads(policy.params());
    diff::backward(loss);
    const double lr = cosine_lr(step, config.total_steps, config.base_lr,
                                config.warmup_ratio);
    opt.step(policy.params(), lr);
    result.losses.push_back(value);
    if (log) {
      ordered_json line;
      line["step"] = step;
      line["loss"] = value;
      line["lr"] = lr;
      log << line.dump() << "\n";
    }
    if (!config.out_dir.empty() &&
        (step + 1) % config.checkpoint_every == 0) {
      std::string path =
          config.out_dir + "/ckpt_" + std::to_string(step + 1) + ".bin";
      ordered_json extra;
      extra["step"] = step + 1;
      policy.save(path, extra);
      result.checkpoint_paths.push_back(path);
    }
  }
  return result;
}

}  // namespace forge
