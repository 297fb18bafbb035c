#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>

#include "forge/dataset.hpp"
#include "forge/error.hpp"
#include "forge/rng.hpp"

using namespace forge;
namespace fs = std::filesystem;

namespace {

void expect_code(forge_status want, const std::function<void()>& fn) {
  try {
    fn();
    FAIL_CHECK("expected error " << status_name(want));
  } catch (const Error& e) {
    CHECK(e.code() == want);
  }
}

ModalityConfig small_config() {
  ModalityConfig c;
  c.embodiment_tag = "rig_a";
  c.fps = 10;
  c.res_h = 4;
  c.res_w = 4;
  c.state_fields = {{"pose", 0, 3, "f64", "none", "min_max"},
                    {"aux", 3, 5, "f64", "none", "none"}};
  c.action_fields = {{"move", 0, 2, "f64", "none", "min_max"},
                     {"grip", 2, 3, "f64", "none", "none"}};
  c.annotation_keys = {"task"};
  c.video_keys = {"front"};
  return c;
}

Episode random_episode(const ModalityConfig& c, Rng& rng,
                       const std::string& id) {
  Episode e;
  e.episode_id = id;
  e.embodiment_tag = c.embodiment_tag;
  int n = 3 + static_cast<int>(rng.uniform_int(6));
  for (int i = 0; i < n; ++i) {
    Frame f;
    for (int d = 0; d < c.state_width(); ++d) {
      double v = rng.normal();
      // exercise extreme magnitudes through the text round trip
      if (rng.uniform() < 0.05) v *= 1e300;
      if (rng.uniform() < 0.05) v *= 1e-300;
      f.state.push_back(v);
    }
    for (int d = 0; d < c.action_width(); ++d) f.action.push_back(rng.normal());
    std::vector<std::vector<double>> img(c.res_h,
                                         std::vector<double>(c.res_w));
    for (auto& row : img)
      for (double& px : row) px = rng.uniform();
    f.images["front"] = std::move(img);
    f.annotation_indices["task"] = static_cast<int>(rng.uniform_int(2));
    f.timestamp = static_cast<double>(i) / c.fps;
    if (rng.uniform() < 0.5)
      f.target_center = std::array<double, 2>{rng.uniform(), rng.uniform()};
    e.frames.push_back(std::move(f));
  }
  return e;
}

bool frames_identical(const Episode& a, const Episode& b) {
  if (a.episode_id != b.episode_id || a.frames.size() != b.frames.size())
    return false;
  auto same = [](const std::vector<double>& x, const std::vector<double>& y) {
    return x.size() == y.size() &&
           std::memcmp(x.data(), y.data(), x.size() * sizeof(double)) == 0;
  };
  for (size_t i = 0; i < a.frames.size(); ++i) {
    const Frame& fa = a.frames[i];
    const Frame& fb = b.frames[i];
    if (!same(fa.state, fb.state) || !same(fa.action, fb.action)) return false;
    if (fa.images.size() != fb.images.size()) return false;
    for (const auto& [cam, img] : fa.images) {
      auto it = fb.images.find(cam);
      if (it == fb.images.end() || it->second.size() != img.size())
        return false;
      for (size_t r = 0; r < img.size(); ++r)
        if (!same(img[r], it->second[r])) return false;
    }
    if (fa.annotation_indices != fb.annotation_indices) return false;
    if (std::memcmp(&fa.timestamp, &fb.timestamp, sizeof(double)) != 0)
      return false;
    if (fa.target_center.has_value() != fb.target_center.has_value())
      return false;
    if (fa.target_center &&
        std::memcmp(fa.target_center->data(), fb.target_center->data(),
                    2 * sizeof(double)) != 0)
      return false;
  }
  return true;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("forge_test_" + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

std::map<std::string, std::map<int, std::string>> task_table() {
  return {{"task", {{0, "touch the plate"}, {1, "push the block"}}}};
}

}  // namespace

TEST_CASE("modality config accepts the canonical arm layout") {
  std::string text = R"({
    "format_version": 1,
    "embodiment_tag": "arm",
    "fps": 10,
    "resolution": [16, 16],
    "state": {
      "eef_rot": {"start": 0, "end": 6, "rotation_type": "rotation_6d"},
      "eef_pos": {"start": 6, "end": 9},
      "gripper": {"start": 9, "end": 10}
    },
    "action": {
      "delta": {"start": 0, "end": 3, "normalization": "min_max"}
    },
    "annotations": ["task"],
    "video": ["front"]
  })";
  ModalityConfig c = parse_modality_config(text);
  CHECK(c.state_width() == 10);
  CHECK(c.action_width() == 3);
  REQUIRE(c.state_fields.size() == 3);
  CHECK(c.state_fields[0].name == "eef_rot");
  CHECK(c.state_fields[0].rotation_type == "rotation_6d");
  CHECK(c.find_state("gripper")->start == 9);

  std::string round = serialize_modality_config(c);
  ModalityConfig c2 = parse_modality_config(round);
  CHECK(c2.state_fields.size() == c.state_fields.size());
  CHECK(c2.state_fields[0].name == "eef_rot");
  CHECK(serialize_modality_config(c2) == round);
}

TEST_CASE("modality config rejections carry distinct codes") {
  auto base = [](const std::string& state_body) {
    return std::string(R"({"format_version": 1, "state": {)") + state_body +
           R"(}, "action": {"a": {"start": 0, "end": 2}}})";
  };
  expect_code(FORGE_ERR_WIDTH_MISMATCH, [&] {
    parse_modality_config(
        base(R"("r": {"start": 0, "end": 5, "rotation_type": "rotation_6d"})"));
  });
  expect_code(FORGE_ERR_OVERLAPPING_FIELDS, [&] {
    parse_modality_config(
        base(R"("x": {"start": 0, "end": 6}, "y": {"start": 5, "end": 9})"));
  });
  expect_code(FORGE_ERR_COVERAGE_GAP, [&] {
    parse_modality_config(
        base(R"("x": {"start": 0, "end": 6}, "y": {"start": 7, "end": 9})"));
  });
  expect_code(FORGE_ERR_COVERAGE_GAP, [&] {
    parse_modality_config(base(R"("x": {"start": 2, "end": 6})"));
  });
  expect_code(FORGE_ERR_UNKNOWN_ROTATION_TYPE, [&] {
    parse_modality_config(
        base(R"("r": {"start": 0, "end": 3, "rotation_type": "rpy"})"));
  });
  expect_code(FORGE_ERR_VERSION_MISMATCH, [&] {
    parse_modality_config(
        R"({"format_version": 2, "state": {"x": {"start": 0, "end": 1}},
            "action": {"a": {"start": 0, "end": 1}}})");
  });
  expect_code(FORGE_ERR_BAD_JSON, [&] { parse_modality_config("{nope"); });
  expect_code(FORGE_ERR_BAD_CONFIG, [&] {
    parse_modality_config(base(R"("x": {"start": 1, "end": 1})"));
  });
}

TEST_CASE("episodes round trip bit exact") {
  ModalityConfig c = small_config();
  Rng rng(1234);
  for (int i = 0; i < 50; ++i) {
    Episode e = random_episode(c, rng, "rt_" + std::to_string(i));
    std::string bytes = write_episode(e, c);
    Episode back = read_episode(bytes, c);
    CHECK(frames_identical(e, back));
    CHECK(back.embodiment_tag == e.embodiment_tag);
    // serialization is deterministic
    CHECK(write_episode(back, c) == bytes);
  }
}

TEST_CASE("episode read failures carry distinct codes") {
  ModalityConfig c = small_config();
  Rng rng(77);
  Episode e = random_episode(c, rng, "bad");
  std::string bytes = write_episode(e, c);

  // cut mid final line
  expect_code(FORGE_ERR_TRUNCATED, [&] {
    read_episode(bytes.substr(0, bytes.size() - 7), c);
  });
  // drop whole final line
  {
    std::string cut = bytes;
    cut.pop_back();
    size_t nl = cut.rfind('\n');
    expect_code(FORGE_ERR_TRUNCATED,
                [&] { read_episode(cut.substr(0, nl + 1), c); });
  }
  expect_code(FORGE_ERR_TRUNCATED, [&] { read_episode("", c); });

  // header declaring an unknown version
  {
    std::string other = bytes;
    size_t pos = other.find("\"format_version\":1");
    REQUIRE(pos != std::string::npos);
    other.replace(pos, 18, "\"format_version\":3");
    expect_code(FORGE_ERR_VERSION_MISMATCH, [&] { read_episode(other, c); });
  }

  // widths
  {
    Episode wide = e;
    for (auto& f : wide.frames) f.state.push_back(0.0);
    expect_code(FORGE_ERR_WIDTH_MISMATCH, [&] { write_episode(wide, c); });
  }
  {
    ModalityConfig narrow = c;
    narrow.state_fields = {{"pose", 0, 3, "f64", "none", "none"}};
    expect_code(FORGE_ERR_WIDTH_MISMATCH, [&] { read_episode(bytes, narrow); });
  }
}

TEST_CASE("stats are exact extrema and monotone under append") {
  ModalityConfig c = small_config();
  Episode e;
  e.episode_id = "s0";
  e.embodiment_tag = c.embodiment_tag;
  Frame f;
  f.state = {1.0, 2.0, 3.0, 4.0, 5.0};
  f.action = {-1.0, 0.0, 3.0};
  f.timestamp = 0.0;
  e.frames.push_back(f);

  DatasetStats one = compute_stats(c, {e});
  for (int d = 0; d < 5; ++d) {
    CHECK(one.state_min[d] == f.state[static_cast<size_t>(d)]);
    CHECK(one.state_max[d] == f.state[static_cast<size_t>(d)]);
  }
  CHECK(one.action_min[0] == -1.0);
  CHECK(one.action_max[2] == 3.0);

  Rng rng(5);
  std::vector<Episode> many = {e};
  for (int i = 0; i < 6; ++i)
    many.push_back(random_episode(c, rng, "s" + std::to_string(i + 1)));
  DatasetStats all = compute_stats(c, many);
  for (int d = 0; d < 5; ++d) {
    CHECK(all.state_min[d] <= one.state_min[d]);
    CHECK(all.state_max[d] >= one.state_max[d]);
  }
  expect_code(FORGE_ERR_EMPTY_DATASET, [&] { compute_stats(c, {}); });
}

TEST_CASE("dataset tree round trips through save and open") {
  TempDir dir("roundtrip");
  ModalityConfig c = small_config();
  Rng rng(99);
  std::vector<Episode> eps;
  for (int i = 0; i < 5; ++i)
    eps.push_back(random_episode(c, rng, "ep" + std::to_string(i)));
  save_dataset(dir.str(), c, eps, task_table());

  Dataset ds = open_dataset(dir.str());
  REQUIRE(ds.index.size() == 5);
  CHECK(ds.annotations.at("task").at(1) == "push the block");
  for (size_t i = 0; i < 5; ++i) {
    Episode back = load_episode(ds, i);
    CHECK(frames_identical(eps[i], back));
  }
  DatasetStats st = load_stats(dir.str(), c);
  DatasetStats fresh = compute_stats(ds);
  CHECK(st.state_min == fresh.state_min);
  CHECK(st.action_max == fresh.action_max);

  nlohmann::ordered_json report = validate_dataset(dir.str());
  CHECK(report["pass"] == true);
  CHECK(report["episodes"].size() == 5);
  // pure: identical reports on repeat runs
  CHECK(validate_dataset(dir.str()) == report);
}

TEST_CASE("validator flags exactly the poisoned episode") {
  TempDir dir("poison");
  ModalityConfig c = small_config();
  Rng rng(42);
  std::vector<Episode> eps;
  for (int i = 0; i < 4; ++i)
    eps.push_back(random_episode(c, rng, "ep" + std::to_string(i)));
  save_dataset(dir.str(), c, eps, task_table());

  Episode bad = eps[2];
  bad.frames[0].action[1] = std::nan("");
  std::ofstream out(episode_path(dir.str(), bad.episode_id),
                    std::ios::trunc);
  out << write_episode(bad, c);
  out.close();

  auto report = validate_dataset(dir.str());
  CHECK(report["pass"] == false);
  int failures = 0;
  for (const auto& row : report["episodes"]) {
    if (row["pass"] == false) {
      ++failures;
      CHECK(row["episode_id"] == "ep2");
      CHECK(row["code"] == "non_finite");
    }
  }
  CHECK(failures == 1);
}

TEST_CASE("validator reports meta problems as fatal rows") {
  ModalityConfig c = small_config();
  Rng rng(11);
  std::vector<Episode> eps = {random_episode(c, rng, "only")};

  {
    TempDir dir("nostats");
    save_dataset(dir.str(), c, eps, task_table(), /*with_stats=*/false);
    auto report = validate_dataset(dir.str());
    CHECK(report["pass"] == false);
    REQUIRE(report["fatal"].size() == 1);
    CHECK(report["fatal"][0]["code"] == "stats_incomplete");
  }
  {
    TempDir dir("shortstats");
    save_dataset(dir.str(), c, eps, task_table());
    auto j = nlohmann::ordered_json::parse(
        std::ifstream(dir.str() + "/meta/stats.json"));
    j["action"]["min"].erase(2);
    std::ofstream out(dir.str() + "/meta/stats.json", std::ios::trunc);
    out << j.dump(2);
    out.close();
    auto report = validate_dataset(dir.str());
    CHECK(report["pass"] == false);
    REQUIRE(report["fatal"].size() == 1);
    CHECK(report["fatal"][0]["code"] == "stats_incomplete");
  }
  {
    TempDir dir("nomodality");
    save_dataset(dir.str(), c, eps, task_table());
    fs::remove(dir.path / "meta" / "modality.json");
    auto report = validate_dataset(dir.str());
    CHECK(report["pass"] == false);
    REQUIRE(report["fatal"].size() == 1);
    CHECK(report["fatal"][0]["code"] == "io");
  }
  {
    auto report = validate_dataset("/definitely/not/here");
    CHECK(report["pass"] == false);
    CHECK(report["fatal"][0]["code"] == "io");
  }
}

TEST_CASE("annotation indices must resolve to table entries") {
  TempDir dir("dangling");
  ModalityConfig c = small_config();
  Rng rng(8);
  Episode e = random_episode(c, rng, "a0");
  e.frames[1].annotation_indices["task"] = 17;
  save_dataset(dir.str(), c, {e}, task_table());
  auto report = validate_dataset(dir.str());
  CHECK(report["pass"] == false);
  CHECK(report["episodes"][0]["code"] == "unknown_field");
}
