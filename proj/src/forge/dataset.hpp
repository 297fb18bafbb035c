#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "forge/episode.hpp"
#include "forge/modality.hpp"

namespace forge {

struct EpisodeIndexEntry {
  std::string episode_id;
  int length = 0;
  std::string embodiment_tag;
};

struct DatasetStats {
  std::vector<double> state_min, state_max;
  std::vector<double> action_min, action_max;
};

// Directory layout:
//   meta/modality.json          schema (see ModalityConfig)
//   meta/stats.json             per-dimension min/max
//   meta/episodes.jsonl         index: one {episode_id,length,embodiment_tag} per line
//   meta/annotations.<key>.json index -> string content table
//   data/episode_<id>.jsonl     frames
struct Dataset {
  std::string root;
  ModalityConfig config;
  std::vector<EpisodeIndexEntry> index;
  std::map<std::string, std::map<int, std::string>> annotations;
};

std::string episode_path(const std::string& root, const std::string& id);

Dataset open_dataset(const std::string& root);
Episode load_episode(const Dataset& ds, size_t idx);

void save_dataset(const std::string& root, const ModalityConfig& config,
                  const std::vector<Episode>& episodes,
                  const std::map<std::string, std::map<int, std::string>>&
                      annotations,
                  bool with_stats = true);

DatasetStats compute_stats(const ModalityConfig& config,
                           const std::vector<Episode>& episodes);
DatasetStats compute_stats(const Dataset& ds);
void write_stats(const std::string& root, const DatasetStats& stats);
// Raises StatsIncomplete when the file is absent or any dimension lacks a
// bound; raises on min > max as well.
DatasetStats load_stats(const std::string& root, const ModalityConfig& config);
nlohmann::ordered_json stats_to_json(const DatasetStats& stats);
DatasetStats stats_from_json(const nlohmann::ordered_json& j,
                             const ModalityConfig& config);

// Never throws on dataset content problems: every issue lands in the report,
// either per-episode or in the fatal list. Pure function of the tree.
nlohmann::ordered_json validate_dataset(const std::string& root);

}  // namespace forge
