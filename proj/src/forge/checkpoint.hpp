#pragma once

#include <string>

#include <json.hpp>

#include "forge/tensor.hpp"

namespace forge {

// Single-file parameter snapshot:
//   byte 0      format version (currently 1)
//   bytes 1..8  little-endian u64 header length
//   header      JSON: {"entries":[{name,shape,offset}...], "meta":{...}}
//   payload     raw little-endian f64 runs, offsets relative to payload start
struct Checkpoint {
  diff::ParamStore params;
  nlohmann::ordered_json meta;
};

inline constexpr unsigned char kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const diff::ParamStore& params,
                     const nlohmann::ordered_json& meta);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace forge
