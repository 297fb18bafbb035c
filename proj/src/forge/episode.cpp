#include "forge/episode.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "forge/error.hpp"

namespace forge {

using nlohmann::ordered_json;

namespace {

ordered_json vec_to_json(const std::vector<double>& v) {
  // nlohmann already emits null for non-finite values; rely on that.
  return ordered_json(v);
}

std::vector<double> json_to_vec(const ordered_json& j, const char* what) {
  if (!j.is_array())
    raise(FORGE_ERR_BAD_JSON, std::string(what) + " is not an array");
  std::vector<double> out;
  out.reserve(j.size());
  for (const auto& x : j) {
    if (x.is_null())
      out.push_back(std::numeric_limits<double>::quiet_NaN());
    else if (x.is_number())
      out.push_back(x.get<double>());
    else
      raise(FORGE_ERR_BAD_JSON, std::string(what) + " holds a non-number");
  }
  return out;
}

void check_widths(const Frame& f, const ModalityConfig& c, size_t idx) {
  if (static_cast<int>(f.state.size()) != c.state_width())
    raise(FORGE_ERR_WIDTH_MISMATCH,
          "frame " + std::to_string(idx) + ": state width " +
              std::to_string(f.state.size()) + ", config declares " +
              std::to_string(c.state_width()));
  if (static_cast<int>(f.action.size()) != c.action_width())
    raise(FORGE_ERR_WIDTH_MISMATCH,
          "frame " + std::to_string(idx) + ": action width " +
              std::to_string(f.action.size()) + ", config declares " +
              std::to_string(c.action_width()));
  for (const auto& [cam, img] : f.images) {
    bool ok = static_cast<int>(img.size()) == c.res_h;
    if (ok)
      for (const auto& row : img)
        if (static_cast<int>(row.size()) != c.res_w) ok = false;
    if (!ok)
      raise(FORGE_ERR_WIDTH_MISMATCH,
            "frame " + std::to_string(idx) + ": image '" + cam +
                "' extents differ from declared " + std::to_string(c.res_h) +
                "x" + std::to_string(c.res_w));
  }
}

}  // namespace

std::string write_episode(const Episode& episode,
                          const ModalityConfig& config) {
  std::string out;
  ordered_json header;
  header["format_version"] = config.format_version;
  header["episode_id"] = episode.episode_id;
  header["embodiment_tag"] = episode.embodiment_tag;
  header["length"] = episode.frames.size();
  out += header.dump();
  out += "\n";
  for (size_t i = 0; i < episode.frames.size(); ++i) {
    const Frame& f = episode.frames[i];
    check_widths(f, config, i);
    ordered_json line;
    line["observation.state"] = vec_to_json(f.state);
    line["action"] = vec_to_json(f.action);
    for (const auto& [cam, img] : f.images) {
      ordered_json rows = ordered_json::array();
      for (const auto& row : img) rows.push_back(vec_to_json(row));
      line["observation.images." + cam] = std::move(rows);
    }
    for (const auto& [key, idx] : f.annotation_indices)
      line["annotation." + key] = idx;
    line["timestamp"] = f.timestamp;
    if (f.target_center)
      line["observation.target_center"] = {(*f.target_center)[0],
                                           (*f.target_center)[1]};
    out += line.dump();
    out += "\n";
  }
  return out;
}

Episode read_episode(const std::string& bytes, const ModalityConfig& config) {
  std::istringstream in(bytes);
  std::string line;
  if (!std::getline(in, line) || line.empty())
    raise(FORGE_ERR_TRUNCATED, "episode file has no header line");
  ordered_json header;
  try {
    header = ordered_json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    raise(FORGE_ERR_BAD_JSON, std::string("episode header: ") + e.what());
  }
  if (!header.contains("format_version") ||
      header["format_version"].get<int>() != config.format_version)
    raise(FORGE_ERR_VERSION_MISMATCH,
          "episode header declares version " +
              (header.contains("format_version")
                   ? header["format_version"].dump()
                   : std::string("none")));
  Episode e;
  e.episode_id = header.value("episode_id", std::string());
  e.embodiment_tag = header.value("embodiment_tag", std::string());
  size_t declared = header.value("length", size_t{0});

  std::vector<std::string> raw_lines;
  while (std::getline(in, line)) {
    if (!line.empty()) raw_lines.push_back(std::move(line));
    line.clear();
  }
  if (raw_lines.size() < declared)
    raise(FORGE_ERR_TRUNCATED, "episode declares " + std::to_string(declared) +
                                   " frames, file holds " +
                                   std::to_string(raw_lines.size()));
  for (size_t i = 0; i < raw_lines.size(); ++i) {
    ordered_json j;
    try {
      j = ordered_json::parse(raw_lines[i]);
    } catch (const nlohmann::json::exception& err) {
      // A cut-off final line is truncation; garbage earlier is corruption.
      if (i + 1 == raw_lines.size())
        raise(FORGE_ERR_TRUNCATED,
              "frame " + std::to_string(i) + " line is cut off");
      raise(FORGE_ERR_BAD_JSON,
            "frame " + std::to_string(i) + ": " + err.what());
    }
    Frame f;
    if (!j.contains("observation.state") || !j.contains("action"))
      raise(FORGE_ERR_BAD_JSON,
            "frame " + std::to_string(i) + " lacks state or action");
    f.state = json_to_vec(j["observation.state"], "observation.state");
    f.action = json_to_vec(j["action"], "action");
    for (const auto& [key, val] : j.items()) {
      const std::string img_prefix = "observation.images.";
      const std::string ann_prefix = "annotation.";
      if (key.rfind(img_prefix, 0) == 0) {
        std::vector<std::vector<double>> img;
        if (!val.is_array())
          raise(FORGE_ERR_BAD_JSON, key + " is not an array");
        for (const auto& row : val) img.push_back(json_to_vec(row, "image row"));
        f.images[key.substr(img_prefix.size())] = std::move(img);
      } else if (key.rfind(ann_prefix, 0) == 0) {
        f.annotation_indices[key.substr(ann_prefix.size())] = val.get<int>();
      }
    }
    f.timestamp = j.value("timestamp", 0.0);
    if (j.contains("observation.target_center")) {
      auto tc = json_to_vec(j["observation.target_center"], "target_center");
      if (tc.size() != 2)
        raise(FORGE_ERR_BAD_JSON, "target_center must have two entries");
      f.target_center = std::array<double, 2>{tc[0], tc[1]};
    }
    check_widths(f, config, i);
    e.frames.push_back(std::move(f));
  }
  return e;
}

}  // namespace forge
