#include "forge/idm.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "forge/checkpoint.hpp"
#include "forge/dataset.hpp"
#include "forge/error.hpp"

namespace forge {

using diff::ParamStore;
using diff::Tensor;
using nlohmann::ordered_json;

namespace {

std::vector<double> flatten_frame(const Frame& frame,
                                  const std::string& camera,
                                  const std::string& episode_id) {
  auto it = frame.images.find(camera);
  if (it == frame.images.end())
    raise(FORGE_ERR_UNKNOWN_FIELD,
          "episode " + episode_id + " has no camera '" + camera + "'");
  std::vector<double> flat;
  for (const auto& row : it->second)
    flat.insert(flat.end(), row.begin(), row.end());
  return flat;
}

const std::string& first_camera(const Dataset& ds) {
  if (ds.config.video_keys.empty())
    raise(FORGE_ERR_UNKNOWN_FIELD,
          "dataset at " + ds.root + " has no cameras");
  return ds.config.video_keys.front();
}

}  // namespace

IdmModel::IdmModel(const ModelConfig& config, const EmbodimentSpec& spec,
                   uint64_t seed)
    : config_(config), spec_(spec) {
  if (config_.ctx_tokens % 2 != 0)
    raise(FORGE_ERR_BAD_CONFIG,
          "frame encoder splits context tokens evenly across two frames");
  Rng rng(seed);
  init_trunk_params(params_, config_, rng);
  const int tokens_per_frame = config_.ctx_tokens / 2;
  params_["idm/frame_w1"] = Tensor::randn(
      {config_.pixels(), config_.ctx_hidden}, rng,
      1.0 / std::sqrt(static_cast<double>(config_.pixels())), true);
  params_["idm/frame_b1"] = Tensor::zeros({config_.ctx_hidden}, true);
  params_["idm/frame_w2"] = Tensor::randn(
      {config_.ctx_hidden, tokens_per_frame * config_.d}, rng,
      1.0 / std::sqrt(static_cast<double>(config_.ctx_hidden)), true);
  params_["idm/frame_b2"] =
      Tensor::zeros({tokens_per_frame * config_.d}, true);
  init_adapter_params(params_, config_, spec_, rng);
}

Tensor IdmModel::frame_tokens(const Tensor& frames_a,
                              const Tensor& frames_b) const {
  const int b = frames_a.shape()[0];
  const int tokens_per_frame = config_.ctx_tokens / 2;
  auto enc = [&](const Tensor& x) {
    Tensor h = diff::gelu(
        diff::add(diff::matmul(x, params_.at("idm/frame_w1")),
                  params_.at("idm/frame_b1")));
    Tensor flat = diff::add(diff::matmul(h, params_.at("idm/frame_w2")),
                            params_.at("idm/frame_b2"));
    return diff::reshape(flat, {b, tokens_per_frame, config_.d});
  };
  return diff::concat({enc(frames_a), enc(frames_b)}, 1);
}

Tensor IdmModel::loss(const std::vector<IdmSample>& batch, Rng& rng) {
  if (batch.empty())
    raise(FORGE_ERR_BAD_CONFIG, "idm loss over an empty batch");
  const int b = static_cast<int>(batch.size());
  const int h = spec_.horizon;
  const int ad = spec_.action_dim;
  const size_t chunk = static_cast<size_t>(h) * ad;

  std::vector<double> fa, fb, noised, target, taus(static_cast<size_t>(b));
  fa.reserve(static_cast<size_t>(b) * config_.pixels());
  fb.reserve(static_cast<size_t>(b) * config_.pixels());
  noised.reserve(static_cast<size_t>(b) * chunk);
  target.reserve(static_cast<size_t>(b) * chunk);
  for (int j = 0; j < b; ++j) {
    const IdmSample& s = batch[static_cast<size_t>(j)];
    if (static_cast<int>(s.frame_a.size()) != config_.pixels() ||
        static_cast<int>(s.frame_b.size()) != config_.pixels())
      raise(FORGE_ERR_DIM_MISMATCH, "idm frame size");
    if (s.actions.size() != chunk)
      raise(FORGE_ERR_DIM_MISMATCH,
            "idm action chunk size " + std::to_string(s.actions.size()) +
                ", spec wants " + std::to_string(chunk));
    taus[static_cast<size_t>(j)] = sample_tau(rng);
    FlowSample fs = noise_chunk(s.actions, taus[static_cast<size_t>(j)], rng);
    fa.insert(fa.end(), s.frame_a.begin(), s.frame_a.end());
    fb.insert(fb.end(), s.frame_b.begin(), s.frame_b.end());
    noised.insert(noised.end(), fs.noised.begin(), fs.noised.end());
    for (size_t i = 0; i < chunk; ++i)
      target.push_back(s.actions[i] - fs.eps[i]);
  }

  Tensor tau_emb = embed_taus(taus, config_.tau_embed_dim);
  Tensor phi = frame_tokens(
      Tensor::from_data({b, config_.pixels()}, std::move(fa)),
      Tensor::from_data({b, config_.pixels()}, std::move(fb)));
  Tensor act_tok =
      encode_action(params_, config_, spec_,
                    Tensor::from_data({b, h, ad}, std::move(noised)), tau_emb);
  Tensor out = trunk_forward(params_, config_, act_tok, phi, tau_emb);
  Tensor v = decode_actions(params_, config_, spec_, out);
  Tensor err = diff::sum_of_squares(
      diff::sub(v, Tensor::from_data({b, h, ad}, std::move(target))));
  return diff::scale(err, 1.0 / static_cast<double>(b * h * ad));
}

std::vector<double> IdmModel::predict_chunk(const std::vector<double>& frame_a,
                                            const std::vector<double>& frame_b,
                                            int K, Rng& rng) const {
  if (static_cast<int>(frame_a.size()) != config_.pixels() ||
      static_cast<int>(frame_b.size()) != config_.pixels())
    raise(FORGE_ERR_DIM_MISMATCH, "idm frame size");
  diff::NoGradGuard guard;
  Tensor phi = frame_tokens(
      Tensor::from_data({1, config_.pixels()}, frame_a),
      Tensor::from_data({1, config_.pixels()}, frame_b));
  VelocityField field = [&](const std::vector<double>& a, double tau) {
    Tensor tau_emb = embed_taus({tau}, config_.tau_embed_dim);
    Tensor act_tok = encode_action(
        params_, config_, spec_,
        Tensor::from_data({1, spec_.horizon, spec_.action_dim}, a), tau_emb);
    Tensor out = trunk_forward(params_, config_, act_tok, phi, tau_emb);
    Tensor v = decode_actions(params_, config_, spec_, out);
    auto span = v.data();
    return std::vector<double>(span.begin(), span.end());
  };
  return integrate_chunk(field, spec_.horizon, spec_.action_dim, K, rng);
}

void IdmModel::save(const std::string& path,
                    const ordered_json& extra_meta) const {
  ordered_json meta;
  meta["kind"] = "idm";
  meta["config"] = config_.to_json();
  ordered_json sj;
  sj["name"] = spec_.name;
  sj["state_dim"] = spec_.state_dim;
  sj["action_dim"] = spec_.action_dim;
  sj["horizon"] = spec_.horizon;
  meta["spec"] = sj;
  if (extra_meta.is_object())
    for (const auto& [k, v] : extra_meta.items()) meta[k] = v;
  save_checkpoint(path, params_, meta);
}

IdmModel IdmModel::load(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  if (!ck.meta.contains("config") || !ck.meta.contains("spec"))
    raise(FORGE_ERR_BAD_JSON,
          "checkpoint at " + path + " carries no idm config");
  IdmModel m;
  m.config_ = ModelConfig::from_json(ck.meta["config"]);
  const ordered_json& sj = ck.meta["spec"];
  m.spec_.name = sj.at("name").get<std::string>();
  m.spec_.state_dim = sj.at("state_dim").get<int>();
  m.spec_.action_dim = sj.at("action_dim").get<int>();
  m.spec_.horizon = sj.at("horizon").get<int>();
  m.params_ = std::move(ck.params);
  return m;
}

TrainResult train_idm(IdmModel& model,
                      const std::function<std::vector<IdmSample>(int step)>&
                          provider,
                      const TrainConfig& config) {
  if (config.total_steps < 1 || config.checkpoint_every < 1)
    raise(FORGE_ERR_BAD_CONFIG, "train_idm wants positive step counts");
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
    Tensor loss = model.loss(provider(step), step_rng);
    const double value = loss.scalar();
    diff::zero_grads(model.params());
    diff::backward(loss);
    const double lr = cosine_lr(step, config.total_steps, config.base_lr,
                                config.warmup_ratio);
    opt.step(model.params(), lr);
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
      model.save(path, extra);
      result.checkpoint_paths.push_back(path);
    }
  }
  return result;
}

std::vector<IdmSample> idm_samples_from_dataset(const std::string& root,
                                                int horizon,
                                                std::string* tag_out) {
  if (horizon < 1) raise(FORGE_ERR_BAD_CONFIG, "idm horizon must be >= 1");
  Dataset ds = open_dataset(root);
  const std::string& camera = first_camera(ds);
  const int ad = ds.config.action_width();
  if (ad < 1)
    raise(FORGE_ERR_BAD_CONFIG, "dataset at " + root + " has no actions");

  std::string tag;
  std::vector<IdmSample> samples;
  for (size_t i = 0; i < ds.index.size(); ++i) {
    Episode ep = load_episode(ds, i);
    if (tag.empty()) {
      tag = ep.embodiment_tag;
    } else if (ep.embodiment_tag != tag) {
      raise(FORGE_ERR_MIXED_EMBODIMENTS,
            "dataset mixes '" + tag + "' and '" + ep.embodiment_tag +
                "'; one inverse dynamics model serves one embodiment");
    }
    const int n = static_cast<int>(ep.frames.size());
    if (n < horizon + 1)
      raise(FORGE_ERR_SHORT_EPISODE,
            "episode " + ep.episode_id + " has " + std::to_string(n) +
                " frames, chunks need " + std::to_string(horizon + 1));
    std::vector<std::vector<double>> flat(static_cast<size_t>(n));
    for (int t = 0; t < n; ++t)
      flat[static_cast<size_t>(t)] =
          flatten_frame(ep.frames[static_cast<size_t>(t)], camera,
                        ep.episode_id);
    for (int t = 0; t + horizon < n; ++t) {
      IdmSample s;
      s.frame_a = flat[static_cast<size_t>(t)];
      s.frame_b = flat[static_cast<size_t>(t + horizon)];
      for (int k = 0; k < horizon; ++k) {
        const auto& a = ep.frames[static_cast<size_t>(t + k)].action;
        s.actions.insert(s.actions.end(), a.begin(), a.end());
      }
      samples.push_back(std::move(s));
    }
  }
  if (samples.empty())
    raise(FORGE_ERR_EMPTY_DATASET, "no idm samples in " + root);
  if (tag_out) *tag_out = tag;
  return samples;
}

void idm_label_dataset(const IdmModel& model, const std::string& in_root,
                       const std::string& out_root, int K, uint64_t seed) {
  Dataset ds = open_dataset(in_root);
  const std::string& camera = first_camera(ds);
  const int horizon = model.spec().horizon;
  const int ad = model.spec().action_dim;
  Rng base(seed);

  std::vector<Episode> labeled;
  for (size_t i = 0; i < ds.index.size(); ++i) {
    Episode ep = load_episode(ds, i);
    const int n = static_cast<int>(ep.frames.size());
    if (n < horizon + 1)
      raise(FORGE_ERR_SHORT_EPISODE,
            "episode " + ep.episode_id + " has " + std::to_string(n) +
                " frames, labeling needs " + std::to_string(horizon + 1));
    std::vector<std::vector<double>> flat(static_cast<size_t>(n));
    for (int t = 0; t < n; ++t)
      flat[static_cast<size_t>(t)] =
          flatten_frame(ep.frames[static_cast<size_t>(t)], camera,
                        ep.episode_id);
    Rng ep_rng = base.split(static_cast<uint64_t>(i));
    Episode out;
    out.episode_id = ep.episode_id;
    out.embodiment_tag = "idm:" + model.spec().name;
    for (int t = 0; t + horizon < n; ++t) {
      std::vector<double> chunk =
          model.predict_chunk(flat[static_cast<size_t>(t)],
                              flat[static_cast<size_t>(t + horizon)], K,
                              ep_rng);
      Frame f = ep.frames[static_cast<size_t>(t)];
      f.action.assign(chunk.begin(), chunk.begin() + ad);
      out.frames.push_back(std::move(f));
    }
    labeled.push_back(std::move(out));
  }

  ModalityConfig config = ds.config;
  config.embodiment_tag = "idm:" + model.spec().name;
  FieldSpec pseudo;
  pseudo.name = "action";
  pseudo.start = 0;
  pseudo.end = ad;
  config.action_fields = {pseudo};
  save_dataset(out_root, config, labeled, ds.annotations);
}

IdmEval idm_eval(const IdmModel& model, const std::string& root, int K,
                 uint64_t seed) {
  std::vector<IdmSample> samples =
      idm_samples_from_dataset(root, model.spec().horizon);
  const int ad = model.spec().action_dim;

  std::vector<double> mean(static_cast<size_t>(ad), 0.0);
  for (const IdmSample& s : samples)
    for (int c = 0; c < ad; ++c)
      mean[static_cast<size_t>(c)] += s.actions[static_cast<size_t>(c)];
  for (double& m : mean) m /= static_cast<double>(samples.size());

  Rng base(seed);
  IdmEval out;
  for (size_t i = 0; i < samples.size(); ++i) {
    Rng rng = base.split(static_cast<uint64_t>(i));
    std::vector<double> chunk =
        model.predict_chunk(samples[i].frame_a, samples[i].frame_b, K, rng);
    for (int c = 0; c < ad; ++c) {
      double gt = samples[i].actions[static_cast<size_t>(c)];
      double dm = chunk[static_cast<size_t>(c)] - gt;
      double db = mean[static_cast<size_t>(c)] - gt;
      out.model_mse += dm * dm;
      out.baseline_mse += db * db;
    }
  }
  const double denom = static_cast<double>(samples.size() * ad);
  out.model_mse /= denom;
  out.baseline_mse /= denom;
  return out;
}

}  // namespace forge
