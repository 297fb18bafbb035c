#pragma once

#include <string>
#include <vector>

namespace forge {

// Half-open [start, end) slice of the flat state or action vector, with the
// semantics needed to normalize and to re-express rotations.
struct FieldSpec {
  std::string name;
  int start = 0;
  int end = 0;
  std::string dtype = "f64";
  std::string rotation_type = "none";  // none|quaternion|euler_xyz|axis_angle|rotation_6d
  std::string normalization = "none";  // none|min_max
  int width() const { return end - start; }
};

struct ModalityConfig {
  int format_version = 1;
  std::string embodiment_tag;
  int fps = 10;
  int res_h = 16;
  int res_w = 16;
  std::vector<FieldSpec> state_fields;   // declaration order is canonical
  std::vector<FieldSpec> action_fields;
  std::vector<std::string> annotation_keys;
  std::vector<std::string> video_keys;

  int state_width() const;
  int action_width() const;
  const FieldSpec* find_state(const std::string& name) const;
  const FieldSpec* find_action(const std::string& name) const;
};

// Expected vector width for a rotation representation; 0 means unconstrained.
int rotation_width(const std::string& rotation_type);

// Full invariant sweep over one field list: per-field widths and tags, then
// disjointness and gap-free coverage from index 0.
void check_fields(const std::vector<FieldSpec>& fields, const char* which);
void check_modality(const ModalityConfig& config);

ModalityConfig parse_modality_config(const std::string& text);
std::string serialize_modality_config(const ModalityConfig& config);

}  // namespace forge
