#include "forge/dataset.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "forge/error.hpp"

namespace fs = std::filesystem;

namespace forge {

using nlohmann::ordered_json;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(FORGE_ERR_IO, "cannot read " + path);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise(FORGE_ERR_IO, "cannot write " + path);
  out << content;
  if (!out) raise(FORGE_ERR_IO, "short write to " + path);
}

ordered_json parse_json_file(const std::string& path) {
  std::string text = read_file(path);
  try {
    return ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    raise(FORGE_ERR_BAD_JSON, path + ": " + e.what());
  }
}

}  // namespace

std::string episode_path(const std::string& root, const std::string& id) {
  return root + "/data/episode_" + id + ".jsonl";
}

Dataset open_dataset(const std::string& root) {
  if (!fs::is_directory(root))
    raise(FORGE_ERR_IO, root + " is not a directory");
  Dataset ds;
  ds.root = root;
  ds.config = parse_modality_config(read_file(root + "/meta/modality.json"));

  std::string index_text = read_file(root + "/meta/episodes.jsonl");
  std::istringstream in(index_text);
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      raise(FORGE_ERR_BAD_JSON, root + "/meta/episodes.jsonl line " +
                                    std::to_string(lineno) + ": " + e.what());
    }
    EpisodeIndexEntry entry;
    entry.episode_id = j.at("episode_id").get<std::string>();
    entry.length = j.value("length", 0);
    entry.embodiment_tag = j.value("embodiment_tag", ds.config.embodiment_tag);
    ds.index.push_back(std::move(entry));
  }

  for (const auto& key : ds.config.annotation_keys) {
    std::string path = root + "/meta/annotations." + key + ".json";
    ordered_json table = parse_json_file(path);
    if (!table.is_object())
      raise(FORGE_ERR_BAD_JSON, path + ": table must be an object");
    for (const auto& [k, v] : table.items()) {
      int idx;
      try {
        idx = std::stoi(k);
      } catch (...) {
        raise(FORGE_ERR_BAD_JSON, path + ": non-integer key '" + k + "'");
      }
      ds.annotations[key][idx] = v.get<std::string>();
    }
  }
  return ds;
}

Episode load_episode(const Dataset& ds, size_t idx) {
  if (idx >= ds.index.size())
    raise(FORGE_ERR_USAGE, "episode index " + std::to_string(idx) + " of " +
                               std::to_string(ds.index.size()));
  std::string path = episode_path(ds.root, ds.index[idx].episode_id);
  return read_episode(read_file(path), ds.config);
}

void save_dataset(const std::string& root, const ModalityConfig& config,
                  const std::vector<Episode>& episodes,
                  const std::map<std::string, std::map<int, std::string>>&
                      annotations,
                  bool with_stats) {
  check_modality(config);
  fs::create_directories(root + "/meta");
  fs::create_directories(root + "/data");
  write_file(root + "/meta/modality.json", serialize_modality_config(config));

  std::string index_text;
  for (const auto& e : episodes) {
    write_file(episode_path(root, e.episode_id), write_episode(e, config));
    ordered_json entry;
    entry["episode_id"] = e.episode_id;
    entry["length"] = e.frames.size();
    entry["embodiment_tag"] = e.embodiment_tag;
    index_text += entry.dump();
    index_text += "\n";
  }
  write_file(root + "/meta/episodes.jsonl", index_text);

  for (const auto& key : config.annotation_keys) {
    ordered_json table = ordered_json::object();
    auto it = annotations.find(key);
    if (it != annotations.end())
      for (const auto& [idx, content] : it->second)
        table[std::to_string(idx)] = content;
    write_file(root + "/meta/annotations." + key + ".json",
               table.dump(2) + "\n");
  }

  if (with_stats) write_stats(root, compute_stats(config, episodes));
}

DatasetStats compute_stats(const ModalityConfig& config,
                           const std::vector<Episode>& episodes) {
  size_t frames = 0;
  for (const auto& e : episodes) frames += e.frames.size();
  if (frames == 0) raise(FORGE_ERR_EMPTY_DATASET, "no frames to aggregate");
  int sw = config.state_width(), aw = config.action_width();
  DatasetStats s;
  s.state_min.assign(sw, std::numeric_limits<double>::infinity());
  s.state_max.assign(sw, -std::numeric_limits<double>::infinity());
  s.action_min.assign(aw, std::numeric_limits<double>::infinity());
  s.action_max.assign(aw, -std::numeric_limits<double>::infinity());
  for (const auto& e : episodes)
    for (const auto& f : e.frames) {
      for (int i = 0; i < sw; ++i) {
        s.state_min[i] = std::min(s.state_min[i], f.state[i]);
        s.state_max[i] = std::max(s.state_max[i], f.state[i]);
      }
      for (int i = 0; i < aw; ++i) {
        s.action_min[i] = std::min(s.action_min[i], f.action[i]);
        s.action_max[i] = std::max(s.action_max[i], f.action[i]);
      }
    }
  return s;
}

DatasetStats compute_stats(const Dataset& ds) {
  std::vector<Episode> episodes;
  episodes.reserve(ds.index.size());
  for (size_t i = 0; i < ds.index.size(); ++i)
    episodes.push_back(load_episode(ds, i));
  return compute_stats(ds.config, episodes);
}

nlohmann::ordered_json stats_to_json(const DatasetStats& stats) {
  ordered_json j;
  j["state"]["min"] = stats.state_min;
  j["state"]["max"] = stats.state_max;
  j["action"]["min"] = stats.action_min;
  j["action"]["max"] = stats.action_max;
  return j;
}

DatasetStats stats_from_json(const nlohmann::ordered_json& j,
                             const ModalityConfig& config) {
  DatasetStats s;
  auto pull = [&](const char* group, const char* bound) -> std::vector<double> {
    if (!j.contains(group) || !j[group].contains(bound))
      raise(FORGE_ERR_STATS_INCOMPLETE,
            std::string("stats lack ") + group + "." + bound);
    return j[group][bound].get<std::vector<double>>();
  };
  s.state_min = pull("state", "min");
  s.state_max = pull("state", "max");
  s.action_min = pull("action", "min");
  s.action_max = pull("action", "max");
  auto expect = [&](const std::vector<double>& v, int width,
                    const char* what) {
    if (static_cast<int>(v.size()) != width)
      raise(FORGE_ERR_STATS_INCOMPLETE,
            std::string(what) + " covers " + std::to_string(v.size()) +
                " of " + std::to_string(width) + " dims");
  };
  expect(s.state_min, config.state_width(), "state.min");
  expect(s.state_max, config.state_width(), "state.max");
  expect(s.action_min, config.action_width(), "action.min");
  expect(s.action_max, config.action_width(), "action.max");
  for (size_t i = 0; i < s.state_min.size(); ++i)
    if (s.state_min[i] > s.state_max[i])
      raise(FORGE_ERR_STATS_INCOMPLETE,
            "state dim " + std::to_string(i) + ": min exceeds max");
  for (size_t i = 0; i < s.action_min.size(); ++i)
    if (s.action_min[i] > s.action_max[i])
      raise(FORGE_ERR_STATS_INCOMPLETE,
            "action dim " + std::to_string(i) + ": min exceeds max");
  return s;
}

void write_stats(const std::string& root, const DatasetStats& stats) {
  write_file(root + "/meta/stats.json", stats_to_json(stats).dump(2) + "\n");
}

DatasetStats load_stats(const std::string& root,
                        const ModalityConfig& config) {
  std::string path = root + "/meta/stats.json";
  if (!fs::exists(path))
    raise(FORGE_ERR_STATS_INCOMPLETE, path + " is missing");
  return stats_from_json(parse_json_file(path), config);
}

namespace {

// One episode's checks; any raise is converted by the caller into a report
// row carrying the error code name.
void check_episode(const Dataset& ds, const EpisodeIndexEntry& entry) {
  std::string path = episode_path(ds.root, entry.episode_id);
  if (!fs::exists(path)) raise(FORGE_ERR_IO, path + " is missing");
  Episode e = read_episode(read_file(path), ds.config);
  if (e.episode_id != entry.episode_id)
    raise(FORGE_ERR_VALIDATION_FAILED,
          "header id '" + e.episode_id + "' differs from index entry");
  if (static_cast<int>(e.frames.size()) != entry.length)
    raise(FORGE_ERR_TRUNCATED,
          "index declares " + std::to_string(entry.length) + " frames, file " +
              "holds " + std::to_string(e.frames.size()));
  double prev_ts = -std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < e.frames.size(); ++i) {
    const Frame& f = e.frames[i];
    for (double v : f.state)
      if (!std::isfinite(v))
        raise(FORGE_ERR_NON_FINITE,
              "frame " + std::to_string(i) + ": non-finite state entry");
    for (double v : f.action)
      if (!std::isfinite(v))
        raise(FORGE_ERR_NON_FINITE,
              "frame " + std::to_string(i) + ": non-finite action entry");
    for (const auto& [cam, img] : f.images)
      for (const auto& row : img)
        for (double v : row)
          if (!std::isfinite(v))
            raise(FORGE_ERR_NON_FINITE, "frame " + std::to_string(i) +
                                            ": non-finite pixel in '" + cam +
                                            "'");
    if (f.timestamp <= prev_ts)
      raise(FORGE_ERR_VALIDATION_FAILED,
            "frame " + std::to_string(i) + ": timestamps not increasing");
    prev_ts = f.timestamp;
    for (const auto& [key, idx] : f.annotation_indices) {
      auto table = ds.annotations.find(key);
      if (table == ds.annotations.end() || table->second.count(idx) == 0)
        raise(FORGE_ERR_UNKNOWN_FIELD,
              "frame " + std::to_string(i) + ": annotation." + key + " index " +
                  std::to_string(idx) + " resolves to no content entry");
    }
  }
}

}  // namespace

nlohmann::ordered_json validate_dataset(const std::string& root) {
  ordered_json report;
  report["root"] = root;
  report["fatal"] = ordered_json::array();
  report["episodes"] = ordered_json::array();
  bool pass = true;

  auto fatal = [&](forge_status code, const std::string& detail) {
    ordered_json f;
    f["code"] = status_name(code);
    f["detail"] = detail;
    report["fatal"].push_back(std::move(f));
    pass = false;
  };

  if (!fs::is_directory(root)) {
    fatal(FORGE_ERR_IO, root + " is not a directory");
    report["pass"] = false;
    return report;
  }

  Dataset ds;
  bool opened = false;
  try {
    ds = open_dataset(root);
    opened = true;
  } catch (const Error& e) {
    fatal(e.code(), e.what());
  }

  if (opened) {
    try {
      load_stats(root, ds.config);
    } catch (const Error& e) {
      fatal(e.code(), e.what());
    }
    for (const auto& entry : ds.index) {
      ordered_json row;
      row["episode_id"] = entry.episode_id;
      try {
        check_episode(ds, entry);
        row["pass"] = true;
      } catch (const Error& e) {
        row["pass"] = false;
        row["code"] = status_name(e.code());
        row["detail"] = e.what();
        pass = false;
      }
      report["episodes"].push_back(std::move(row));
    }
  }

  report["pass"] = pass;
  return report;
}

}  // namespace forge
