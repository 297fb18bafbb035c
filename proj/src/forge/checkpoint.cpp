#include "forge/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <vector>

#include "forge/error.hpp"

namespace forge {

namespace {

void put_u64_le(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>(v >> (8 * i)));
}

uint64_t get_u64_le(const unsigned char* p) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
  return v;
}

void put_f64_le(std::string& out, double d) {
  uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64_le(out, bits);
}

double get_f64_le(const unsigned char* p) {
  uint64_t bits = get_u64_le(p);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

}  // namespace

void save_checkpoint(const std::string& path, const diff::ParamStore& params,
                     const nlohmann::ordered_json& meta) {
  nlohmann::ordered_json entries = nlohmann::ordered_json::array();
  std::string payload;
  for (const auto& [name, p] : params) {
    nlohmann::ordered_json e;
    e["name"] = name;
    e["shape"] = p.shape();
    e["offset"] = payload.size();
    entries.push_back(std::move(e));
    for (double v : p.data()) put_f64_le(payload, v);
  }
  nlohmann::ordered_json header;
  header["entries"] = std::move(entries);
  header["meta"] = meta;
  std::string header_text = header.dump();

  std::string blob;
  blob.push_back(static_cast<char>(kCheckpointVersion));
  put_u64_le(blob, header_text.size());
  blob += header_text;
  blob += payload;

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise(FORGE_ERR_IO, "cannot write " + path);
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) raise(FORGE_ERR_IO, "short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(FORGE_ERR_IO, "cannot read " + path);
  std::vector<unsigned char> blob((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (blob.size() < 9) raise(FORGE_ERR_TRUNCATED, path + ": no header");
  if (blob[0] != kCheckpointVersion)
    raise(FORGE_ERR_VERSION_MISMATCH,
          path + ": format version " + std::to_string(blob[0]));
  uint64_t header_len = get_u64_le(blob.data() + 1);
  if (blob.size() < 9 + header_len)
    raise(FORGE_ERR_TRUNCATED, path + ": header runs past end of file");
  nlohmann::ordered_json header;
  try {
    header = nlohmann::ordered_json::parse(blob.begin() + 9,
                                           blob.begin() + 9 + header_len);
  } catch (const nlohmann::json::exception& e) {
    raise(FORGE_ERR_BAD_JSON, path + ": header: " + e.what());
  }
  const unsigned char* payload = blob.data() + 9 + header_len;
  size_t payload_len = blob.size() - 9 - header_len;

  Checkpoint ck;
  if (header.contains("meta")) ck.meta = header["meta"];
  if (!header.contains("entries") || !header["entries"].is_array())
    raise(FORGE_ERR_BAD_JSON, path + ": header lacks entries");
  for (const auto& e : header["entries"]) {
    std::string name = e.at("name").get<std::string>();
    std::vector<int> shape = e.at("shape").get<std::vector<int>>();
    uint64_t offset = e.at("offset").get<uint64_t>();
    int64_t count = 1;
    for (int d : shape) count *= d;
    if (offset + static_cast<uint64_t>(count) * 8 > payload_len)
      raise(FORGE_ERR_TRUNCATED, path + ": payload short for " + name);
    std::vector<double> data(static_cast<size_t>(count));
    for (int64_t i = 0; i < count; ++i)
      data[static_cast<size_t>(i)] = get_f64_le(payload + offset + i * 8);
    ck.params.emplace(name,
                      diff::Tensor::from_data(shape, std::move(data), true));
  }
  return ck;
}

}  // namespace forge
