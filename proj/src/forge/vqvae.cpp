#include "forge/vqvae.hpp"

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

constexpr size_t kRecentCap = 256;

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

}  // namespace

ordered_json VqConfig::to_json() const {
  ordered_json j;
  j["pixels"] = pixels;
  j["d_z"] = d_z;
  j["codes"] = codes;
  j["beta"] = beta;
  j["window"] = window;
  j["hidden"] = hidden;
  return j;
}

VqConfig VqConfig::from_json(const ordered_json& j) {
  VqConfig c;
  c.pixels = j.value("pixels", c.pixels);
  c.d_z = j.value("d_z", c.d_z);
  c.codes = j.value("codes", c.codes);
  c.beta = j.value("beta", c.beta);
  c.window = j.value("window", c.window);
  c.hidden = j.value("hidden", c.hidden);
  return c;
}

VqVae::VqVae(const VqConfig& config, uint64_t seed) : config_(config) {
  if (config_.pixels < 1 || config_.d_z < 1 || config_.codes < 1 ||
      config_.window < 1 || config_.hidden < 1 || config_.beta < 0.0)
    raise(FORGE_ERR_BAD_CONFIG, "vqvae config wants positive dimensions");
  Rng rng(seed);
  auto lin = [&](const char* w, const char* b, int in, int out) {
    params_[w] = Tensor::randn({in, out}, rng,
                               1.0 / std::sqrt(static_cast<double>(in)), true);
    params_[b] = Tensor::zeros({out}, true);
  };
  lin("vq/enc_w1", "vq/enc_b1", 2 * config_.pixels, config_.hidden);
  lin("vq/enc_w2", "vq/enc_b2", config_.hidden, config_.d_z);
  params_["vq/codebook"] =
      Tensor::randn({config_.codes, config_.d_z}, rng,
                    1.0 / std::sqrt(static_cast<double>(config_.d_z)), true);
  lin("vq/dec_w1", "vq/dec_b1", config_.d_z + config_.pixels, config_.hidden);
  lin("vq/dec_w2", "vq/dec_b2", config_.hidden, config_.pixels);
  usage_.assign(static_cast<size_t>(config_.codes), 0);
}

Tensor VqVae::encode_batch(const std::vector<FramePair>& batch) const {
  const int b = static_cast<int>(batch.size());
  std::vector<double> input;
  input.reserve(static_cast<size_t>(b) * 2 * config_.pixels);
  for (const FramePair& p : batch) {
    if (static_cast<int>(p.x_t.size()) != config_.pixels ||
        static_cast<int>(p.x_next.size()) != config_.pixels)
      raise(FORGE_ERR_DIM_MISMATCH,
            "frame pair size " + std::to_string(p.x_t.size()) + "/" +
                std::to_string(p.x_next.size()) + ", model wants " +
                std::to_string(config_.pixels));
    input.insert(input.end(), p.x_t.begin(), p.x_t.end());
    input.insert(input.end(), p.x_next.begin(), p.x_next.end());
  }
  Tensor x = Tensor::from_data({b, 2 * config_.pixels}, std::move(input));
  Tensor h = diff::gelu(diff::add(diff::matmul(x, params_.at("vq/enc_w1")),
                                  params_.at("vq/enc_b1")));
  return diff::add(diff::matmul(h, params_.at("vq/enc_w2")),
                   params_.at("vq/enc_b2"));
}

int VqVae::nearest_code(const std::vector<double>& z) const {
  if (static_cast<int>(z.size()) != config_.d_z)
    raise(FORGE_ERR_DIM_MISMATCH, "latent width " + std::to_string(z.size()));
  auto book = params_.at("vq/codebook").data();
  int best = 0;
  double best_d = 0.0;
  for (int i = 0; i < config_.codes; ++i) {
    double d = 0.0;
    for (int j = 0; j < config_.d_z; ++j) {
      double delta =
          z[static_cast<size_t>(j)] -
          book[static_cast<size_t>(i) * config_.d_z + static_cast<size_t>(j)];
      d += delta * delta;
    }
    if (i == 0 || d < best_d) {
      best = i;
      best_d = d;
    }
  }
  return best;
}

LatentAction VqVae::encode(const FramePair& pair) const {
  diff::NoGradGuard guard;
  Tensor z = encode_batch({pair});
  LatentAction out;
  auto v = z.data();
  out.z.assign(v.begin(), v.end());
  out.code_index = nearest_code(out.z);
  return out;
}

std::vector<double> VqVae::decode_latent(const std::vector<double>& z,
                                         const std::vector<double>& x_t)
    const {
  if (static_cast<int>(z.size()) != config_.d_z)
    raise(FORGE_ERR_DIM_MISMATCH, "latent width " + std::to_string(z.size()));
  if (static_cast<int>(x_t.size()) != config_.pixels)
    raise(FORGE_ERR_DIM_MISMATCH, "frame size " + std::to_string(x_t.size()));
  diff::NoGradGuard guard;
  std::vector<double> input;
  input.reserve(z.size() + x_t.size());
  input.insert(input.end(), z.begin(), z.end());
  input.insert(input.end(), x_t.begin(), x_t.end());
  Tensor x = Tensor::from_data({1, config_.d_z + config_.pixels},
                               std::move(input));
  Tensor h = diff::gelu(diff::add(diff::matmul(x, params_.at("vq/dec_w1")),
                                  params_.at("vq/dec_b1")));
  Tensor y = diff::sigmoid(diff::add(diff::matmul(h, params_.at("vq/dec_w2")),
                                     params_.at("vq/dec_b2")));
  auto v = y.data();
  return std::vector<double>(v.begin(), v.end());
}

std::vector<double> VqVae::decode_code(int code_index,
                                       const std::vector<double>& x_t) const {
  if (code_index < 0 || code_index >= config_.codes)
    raise(FORGE_ERR_BAD_CONFIG,
          "code index " + std::to_string(code_index) + " outside codebook");
  auto book = params_.at("vq/codebook").data();
  std::vector<double> z(book.begin() + static_cast<size_t>(code_index) *
                                           config_.d_z,
                        book.begin() + (static_cast<size_t>(code_index) + 1) *
                                           config_.d_z);
  return decode_latent(z, x_t);
}

Tensor VqVae::loss(const std::vector<FramePair>& batch) {
  if (batch.empty()) raise(FORGE_ERR_BAD_CONFIG, "vq loss over an empty batch");
  const int b = static_cast<int>(batch.size());
  Tensor z = encode_batch(batch);

  std::vector<int> indices(static_cast<size_t>(b));
  {
    auto zv = z.data();
    for (int i = 0; i < b; ++i) {
      std::vector<double> row(zv.begin() + static_cast<size_t>(i) * config_.d_z,
                              zv.begin() +
                                  (static_cast<size_t>(i) + 1) * config_.d_z);
      indices[static_cast<size_t>(i)] = nearest_code(row);
      ++usage_[static_cast<size_t>(indices[static_cast<size_t>(i)])];
      if (recent_z_.size() < kRecentCap) {
        recent_z_.push_back(std::move(row));
      } else {
        recent_z_[recent_pos_] = std::move(row);
        recent_pos_ = (recent_pos_ + 1) % kRecentCap;
      }
    }
  }

  Tensor e = diff::take_rows(params_.at("vq/codebook"), indices);
  // straight-through: forward value e, gradient routed to the encoder
  Tensor z_q = diff::add(z, diff::stopgrad(diff::sub(e, z)));

  std::vector<double> x_t, x_next;
  x_t.reserve(static_cast<size_t>(b) * config_.pixels);
  x_next.reserve(static_cast<size_t>(b) * config_.pixels);
  for (const FramePair& p : batch) {
    x_t.insert(x_t.end(), p.x_t.begin(), p.x_t.end());
    x_next.insert(x_next.end(), p.x_next.begin(), p.x_next.end());
  }
  Tensor dec_in = diff::concat(
      {z_q, Tensor::from_data({b, config_.pixels}, std::move(x_t))}, 1);
  Tensor h = diff::gelu(
      diff::add(diff::matmul(dec_in, params_.at("vq/dec_w1")),
                params_.at("vq/dec_b1")));
  Tensor y = diff::sigmoid(diff::add(diff::matmul(h, params_.at("vq/dec_w2")),
                                     params_.at("vq/dec_b2")));

  Tensor recon = diff::scale(
      diff::sum_of_squares(
          diff::sub(y, Tensor::from_data({b, config_.pixels},
                                         std::move(x_next)))),
      1.0 / (static_cast<double>(b) * config_.pixels));
  Tensor pull = diff::scale(
      diff::sum_of_squares(diff::sub(diff::stopgrad(z), e)),
      1.0 / static_cast<double>(b));
  Tensor total = diff::add(recon, pull);
  if (config_.beta != 0.0) {
    Tensor commit = diff::scale(
        diff::sum_of_squares(diff::sub(z, diff::stopgrad(e))),
        config_.beta / static_cast<double>(b));
    total = diff::add(total, commit);
  }
  return total;
}

int VqVae::revive_dead_codes(Rng& rng) {
  int moved = 0;
  if (!recent_z_.empty()) {
    auto book = params_.at("vq/codebook").data();
    for (int i = 0; i < config_.codes; ++i) {
      if (usage_[static_cast<size_t>(i)] > 0) continue;
      const std::vector<double>& src = recent_z_[static_cast<size_t>(
          rng.uniform_int(static_cast<int64_t>(recent_z_.size())))];
      for (int j = 0; j < config_.d_z; ++j)
        book[static_cast<size_t>(i) * config_.d_z + static_cast<size_t>(j)] =
            src[static_cast<size_t>(j)];
      ++moved;
    }
  }
  usage_.assign(static_cast<size_t>(config_.codes), 0);
  return moved;
}

void VqVae::save(const std::string& path,
                 const ordered_json& extra_meta) const {
  ordered_json meta;
  meta["kind"] = "vqvae";
  meta["config"] = config_.to_json();
  if (extra_meta.is_object())
    for (const auto& [k, v] : extra_meta.items()) meta[k] = v;
  save_checkpoint(path, params_, meta);
}

VqVae VqVae::load(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  if (!ck.meta.contains("config"))
    raise(FORGE_ERR_BAD_JSON, "checkpoint at " + path + " carries no config");
  VqVae m;
  m.config_ = VqConfig::from_json(ck.meta["config"]);
  m.params_ = std::move(ck.params);
  m.usage_.assign(static_cast<size_t>(m.config_.codes), 0);
  return m;
}

TrainResult train_vqvae(VqVae& model,
                        const std::function<std::vector<FramePair>(int step)>&
                            provider,
                        const TrainConfig& config, int revive_every) {
  if (config.total_steps < 1 || config.checkpoint_every < 1 ||
      revive_every < 1)
    raise(FORGE_ERR_BAD_CONFIG, "train_vqvae wants positive step counts");
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
    Tensor loss = model.loss(provider(step));
    const double value = loss.scalar();
    diff::zero_grads(model.params());
    diff::backward(loss);
    const double lr = cosine_lr(step, config.total_steps, config.base_lr,
                                config.warmup_ratio);
    opt.step(model.params(), lr);
    if ((step + 1) % revive_every == 0) {
      Rng revive = base.split((1ULL << 32) + static_cast<uint64_t>(step));
      model.revive_dead_codes(revive);
    }
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

std::vector<FramePair> dataset_frame_pairs(const std::string& root,
                                           int window) {
  if (window < 1) raise(FORGE_ERR_BAD_CONFIG, "frame window must be >= 1");
  Dataset ds = open_dataset(root);
  if (ds.config.video_keys.empty())
    raise(FORGE_ERR_UNKNOWN_FIELD, "dataset at " + root + " has no cameras");
  const std::string& camera = ds.config.video_keys.front();
  std::vector<FramePair> pairs;
  for (size_t i = 0; i < ds.index.size(); ++i) {
    Episode ep = load_episode(ds, i);
    const int n = static_cast<int>(ep.frames.size());
    if (n < window + 1)
      raise(FORGE_ERR_SHORT_EPISODE,
            "episode " + ep.episode_id + " has " + std::to_string(n) +
                " frames, window needs " + std::to_string(window + 1));
    std::vector<std::vector<double>> flat(static_cast<size_t>(n));
    for (int t = 0; t < n; ++t)
      flat[static_cast<size_t>(t)] =
          flatten_frame(ep.frames[static_cast<size_t>(t)], camera,
                        ep.episode_id);
    for (int t = 0; t + window < n; ++t)
      pairs.push_back({flat[static_cast<size_t>(t)],
                       flat[static_cast<size_t>(t + window)]});
  }
  if (pairs.empty())
    raise(FORGE_ERR_EMPTY_DATASET, "no frame pairs in " + root);
  return pairs;
}

void lapa_label_dataset(const VqVae& model, const std::string& in_root,
                        const std::string& out_root) {
  Dataset ds = open_dataset(in_root);
  if (ds.config.video_keys.empty())
    raise(FORGE_ERR_UNKNOWN_FIELD, "dataset at " + in_root + " has no cameras");
  const std::string& camera = ds.config.video_keys.front();
  const int window = model.config().window;

  std::vector<Episode> labeled;
  for (size_t i = 0; i < ds.index.size(); ++i) {
    Episode ep = load_episode(ds, i);
    const int n = static_cast<int>(ep.frames.size());
    if (n < window + 1)
      raise(FORGE_ERR_SHORT_EPISODE,
            "episode " + ep.episode_id + " has " + std::to_string(n) +
                " frames, labeling needs " + std::to_string(window + 1));
    std::vector<std::vector<double>> flat(static_cast<size_t>(n));
    for (int t = 0; t < n; ++t)
      flat[static_cast<size_t>(t)] =
          flatten_frame(ep.frames[static_cast<size_t>(t)], camera,
                        ep.episode_id);
    Episode out;
    out.episode_id = ep.episode_id;
    out.embodiment_tag = "lapa";
    for (int t = 0; t + window < n; ++t) {
      Frame f = ep.frames[static_cast<size_t>(t)];
      f.action = model
                     .encode({flat[static_cast<size_t>(t)],
                              flat[static_cast<size_t>(t + window)]})
                     .z;
      out.frames.push_back(std::move(f));
    }
    labeled.push_back(std::move(out));
  }

  ModalityConfig config = ds.config;
  config.embodiment_tag = "lapa";
  FieldSpec latent;
  latent.name = "latent";
  latent.start = 0;
  latent.end = model.config().d_z;
  config.action_fields = {latent};
  save_dataset(out_root, config, labeled, ds.annotations);
}

}  // namespace forge
