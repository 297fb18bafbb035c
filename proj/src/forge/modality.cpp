#include "forge/modality.hpp"

#include <algorithm>

#include <json.hpp>

#include "forge/error.hpp"

namespace forge {

using nlohmann::ordered_json;

int ModalityConfig::state_width() const {
  int w = 0;
  for (const auto& f : state_fields) w = std::max(w, f.end);
  return w;
}

int ModalityConfig::action_width() const {
  int w = 0;
  for (const auto& f : action_fields) w = std::max(w, f.end);
  return w;
}

const FieldSpec* ModalityConfig::find_state(const std::string& name) const {
  for (const auto& f : state_fields)
    if (f.name == name) return &f;
  return nullptr;
}

const FieldSpec* ModalityConfig::find_action(const std::string& name) const {
  for (const auto& f : action_fields)
    if (f.name == name) return &f;
  return nullptr;
}

int rotation_width(const std::string& rotation_type) {
  if (rotation_type == "none") return 0;
  if (rotation_type == "quaternion") return 4;
  if (rotation_type == "euler_xyz") return 3;
  if (rotation_type == "axis_angle") return 3;
  if (rotation_type == "rotation_6d") return 6;
  raise(FORGE_ERR_UNKNOWN_ROTATION_TYPE,
        "rotation_type '" + rotation_type + "'");
}

void check_fields(const std::vector<FieldSpec>& fields, const char* which) {
  for (const auto& f : fields) {
    if (f.start < 0 || f.end <= f.start)
      raise(FORGE_ERR_BAD_CONFIG, std::string(which) + "." + f.name +
                                      ": range [" + std::to_string(f.start) +
                                      "," + std::to_string(f.end) + ")");
    if (f.dtype != "f64")
      raise(FORGE_ERR_BAD_CONFIG,
            std::string(which) + "." + f.name + ": dtype '" + f.dtype + "'");
    if (f.normalization != "none" && f.normalization != "min_max")
      raise(FORGE_ERR_BAD_CONFIG, std::string(which) + "." + f.name +
                                      ": normalization '" + f.normalization +
                                      "'");
    int want = rotation_width(f.rotation_type);
    if (want != 0 && f.width() != want)
      raise(FORGE_ERR_WIDTH_MISMATCH,
            std::string(which) + "." + f.name + ": " + f.rotation_type +
                " needs width " + std::to_string(want) + ", got " +
                std::to_string(f.width()));
  }
  std::vector<FieldSpec> sorted = fields;
  std::sort(sorted.begin(), sorted.end(),
            [](const FieldSpec& a, const FieldSpec& b) {
              return a.start < b.start;
            });
  int cursor = 0;
  for (const auto& f : sorted) {
    if (f.start < cursor)
      raise(FORGE_ERR_OVERLAPPING_FIELDS,
            std::string(which) + "." + f.name + ": [" +
                std::to_string(f.start) + "," + std::to_string(f.end) +
                ") overlaps previous field ending at " +
                std::to_string(cursor));
    if (f.start > cursor)
      raise(FORGE_ERR_COVERAGE_GAP,
            std::string(which) + ": dims [" + std::to_string(cursor) + "," +
                std::to_string(f.start) + ") covered by no field");
    cursor = f.end;
  }
}

void check_modality(const ModalityConfig& config) {
  if (config.format_version != 1)
    raise(FORGE_ERR_VERSION_MISMATCH,
          "modality format_version " + std::to_string(config.format_version));
  if (config.fps <= 0 || config.res_h <= 0 || config.res_w <= 0)
    raise(FORGE_ERR_BAD_CONFIG, "modality: fps/resolution must be positive");
  if (config.state_fields.empty() || config.action_fields.empty())
    raise(FORGE_ERR_BAD_CONFIG, "modality: state and action fields required");
  check_fields(config.state_fields, "state");
  check_fields(config.action_fields, "action");
}

namespace {

std::vector<FieldSpec> parse_field_map(const ordered_json& j,
                                       const char* which) {
  if (!j.is_object())
    raise(FORGE_ERR_BAD_CONFIG, std::string(which) + " must be an object");
  std::vector<FieldSpec> out;
  for (const auto& [name, spec] : j.items()) {
    FieldSpec f;
    f.name = name;
    if (!spec.contains("start") || !spec.contains("end"))
      raise(FORGE_ERR_BAD_CONFIG,
            std::string(which) + "." + name + ": start/end required");
    f.start = spec["start"].get<int>();
    f.end = spec["end"].get<int>();
    if (spec.contains("dtype")) f.dtype = spec["dtype"].get<std::string>();
    if (spec.contains("rotation_type"))
      f.rotation_type = spec["rotation_type"].get<std::string>();
    if (spec.contains("normalization"))
      f.normalization = spec["normalization"].get<std::string>();
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace

ModalityConfig parse_modality_config(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    raise(FORGE_ERR_BAD_JSON, std::string("modality.json: ") + e.what());
  }
  ModalityConfig c;
  if (!j.contains("format_version") || !j["format_version"].is_number_integer())
    raise(FORGE_ERR_VERSION_MISMATCH, "modality.json: no format_version");
  c.format_version = j["format_version"].get<int>();
  if (j.contains("embodiment_tag"))
    c.embodiment_tag = j["embodiment_tag"].get<std::string>();
  if (j.contains("fps")) c.fps = j["fps"].get<int>();
  if (j.contains("resolution")) {
    auto r = j["resolution"];
    if (!r.is_array() || r.size() != 2)
      raise(FORGE_ERR_BAD_CONFIG, "modality.json: resolution must be [h,w]");
    c.res_h = r[0].get<int>();
    c.res_w = r[1].get<int>();
  }
  if (!j.contains("state") || !j.contains("action"))
    raise(FORGE_ERR_BAD_CONFIG, "modality.json: state and action required");
  c.state_fields = parse_field_map(j["state"], "state");
  c.action_fields = parse_field_map(j["action"], "action");
  if (j.contains("annotations"))
    c.annotation_keys = j["annotations"].get<std::vector<std::string>>();
  if (j.contains("video"))
    c.video_keys = j["video"].get<std::vector<std::string>>();
  check_modality(c);
  return c;
}

std::string serialize_modality_config(const ModalityConfig& config) {
  check_modality(config);
  ordered_json j;
  j["format_version"] = config.format_version;
  j["embodiment_tag"] = config.embodiment_tag;
  j["fps"] = config.fps;
  j["resolution"] = {config.res_h, config.res_w};
  auto dump_fields = [](const std::vector<FieldSpec>& fields) {
    ordered_json m = ordered_json::object();
    for (const auto& f : fields) {
      ordered_json s;
      s["start"] = f.start;
      s["end"] = f.end;
      s["dtype"] = f.dtype;
      s["rotation_type"] = f.rotation_type;
      s["normalization"] = f.normalization;
      m[f.name] = std::move(s);
    }
    return m;
  };
  j["state"] = dump_fields(config.state_fields);
  j["action"] = dump_fields(config.action_fields);
  j["annotations"] = config.annotation_keys;
  j["video"] = config.video_keys;
  return j.dump(2) + "\n";
}

}  // namespace forge
