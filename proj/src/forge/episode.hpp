#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "forge/modality.hpp"

namespace forge {

struct Frame {
  std::vector<double> state;
  std::vector<double> action;
  // camera name -> res_h rows of res_w unit-interval intensities
  std::map<std::string, std::vector<std::vector<double>>> images;
  std::map<std::string, int> annotation_indices;
  double timestamp = 0.0;
  // Ground-truth object center in the camera frame, unit square; feeds the
  // auxiliary detection loss when present.
  std::optional<std::array<double, 2>> target_center;
};

struct Episode {
  std::string episode_id;
  std::string embodiment_tag;
  std::vector<Frame> frames;
};

// One JSONL blob per episode: a header line carrying identity, version, and
// frame count, then one frame object per line. Numeric payloads survive the
// trip bit-exactly; non-finite values serialize as null and read back as NaN
// so the validator can flag them.
std::string write_episode(const Episode& episode, const ModalityConfig& config);
Episode read_episode(const std::string& bytes, const ModalityConfig& config);

}  // namespace forge
