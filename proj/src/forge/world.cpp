#include "forge/world.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "forge/dataset.hpp"
#include "forge/error.hpp"

namespace forge {

namespace {

constexpr double kGridScale = 1 << 20;
constexpr double kPi = 3.14159265358979323846;

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

// Smallest signed angle taking a to b.
double shortest_arc(double a, double b) {
  double d = std::fmod(b - a, 2.0 * kPi);
  if (d > kPi) d -= 2.0 * kPi;
  if (d < -kPi) d += 2.0 * kPi;
  return d;
}

}  // namespace

double snap_to_grid(double v) { return std::round(v * kGridScale) / kGridScale; }

WorldState step(const WorldState& state, const WorldAction& action,
                StepFlags* flags) {
  StepFlags local;
  auto clamp_delta = [&local](double v) {
    if (!std::isfinite(v)) {
      local.clamped = true;
      return 0.0;
    }
    if (v > kMaxDelta) {
      local.clamped = true;
      v = kMaxDelta;
    } else if (v < -kMaxDelta) {
      local.clamped = true;
      v = -kMaxDelta;
    }
    return snap_to_grid(v);
  };
  double dx = clamp_delta(action[0]);
  double dy = clamp_delta(action[1]);

  double dth = action[2];
  if (!std::isfinite(dth)) {
    local.clamped = true;
    dth = 0.0;
  }
  dth = snap_to_grid(dth);

  double g = action[3];
  if (!std::isfinite(g)) {
    local.clamped = true;
    g = state.eef.gripper;
  } else if (g < 0.0 || g > 1.0) {
    local.clamped = true;
    g = clamp01(g);
  }

  WorldState next = state;
  next.eef.x = clamp01(snap_to_grid(state.eef.x + dx));
  next.eef.y = clamp01(snap_to_grid(state.eef.y + dy));
  next.eef.heading = state.eef.heading + dth;
  next.eef.gripper = g;

  // A held disc stays co-located with the effector.
  if (next.held_object >= 0) {
    for (auto& obj : next.objects) {
      if (obj.id == next.held_object) {
        obj.x = next.eef.x;
        obj.y = next.eef.y;
        obj.heading += dth;
        break;
      }
    }
  }

  bool rising = state.eef.gripper < 0.5 && g >= 0.5;
  bool falling = state.eef.gripper >= 0.5 && g < 0.5;

  if (falling && next.held_object >= 0) {
    next.held_object = -1;
    local.released = true;
  }
  if (rising && next.held_object < 0) {
    int best = -1;
    double best_d = kGraspRadius;
    for (const auto& obj : next.objects) {
      double d = std::hypot(obj.x - next.eef.x, obj.y - next.eef.y);
      if (d < best_d || (best < 0 && d <= kGraspRadius)) {
        best = obj.id;
        best_d = d;
      }
    }
    if (best >= 0) {
      next.held_object = best;
      local.grasped = true;
      for (auto& obj : next.objects) {
        if (obj.id == best) {
          obj.x = next.eef.x;
          obj.y = next.eef.y;
          break;
        }
      }
    }
  }

  if (flags != nullptr) *flags = local;
  return next;
}

int instruction_for(const TaskSpec& task, int receptacle_count) {
  if (receptacle_count < 1 || task.object_id < 0 || task.receptacle_id < 0 ||
      task.receptacle_id >= receptacle_count) {
    raise(FORGE_ERR_BAD_CONFIG, "task ids do not fit the scene layout");
  }
  return task.object_id * receptacle_count + task.receptacle_id;
}

TaskSpec task_for_instruction(int instruction_id, int receptacle_count) {
  if (receptacle_count < 1 || instruction_id < 0) {
    raise(FORGE_ERR_BAD_CONFIG, "instruction id must be non-negative");
  }
  TaskSpec task;
  task.object_id = instruction_id / receptacle_count;
  task.receptacle_id = instruction_id % receptacle_count;
  return task;
}

std::string instruction_text(const TaskSpec& task) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "move disc %d to tray %d", task.object_id,
                task.receptacle_id);
  return buf;
}

namespace {

const WorldObject* find_object(const WorldState& state, int id) {
  for (const auto& obj : state.objects) {
    if (obj.id == id) return &obj;
  }
  return nullptr;
}

const Receptacle* find_receptacle(const WorldState& state, int id) {
  for (const auto& rec : state.receptacles) {
    if (rec.id == id) return &rec;
  }
  return nullptr;
}

}  // namespace

bool check_success(const WorldState& state, const TaskSpec& task) {
  const WorldObject* obj = find_object(state, task.object_id);
  const Receptacle* rec = find_receptacle(state, task.receptacle_id);
  if (obj == nullptr || rec == nullptr) {
    raise(FORGE_ERR_BAD_CONFIG, "task references an entity the scene lacks");
  }
  if (state.held_object == task.object_id) return false;
  return std::abs(obj->x - rec->cx) <= rec->hx &&
         std::abs(obj->y - rec->cy) <= rec->hy;
}

std::vector<double> render_world(const WorldState& state, int height,
                                 int width) {
  if (height < 4 || width < 4) {
    raise(FORGE_ERR_BAD_CONFIG, "render target must be at least 4x4");
  }
  std::vector<double> img(static_cast<size_t>(height) * width, 0.0);
  auto paint = [&](int r, int c, double v) {
    if (r < 0 || r >= height || c < 0 || c >= width) return;
    double& px = img[static_cast<size_t>(r) * width + c];
    px = std::max(px, v);
  };
  auto col_of = [&](double x) {
    return std::min(width - 1, std::max(0, static_cast<int>(x * width)));
  };
  auto row_of = [&](double y) {
    return std::min(height - 1, std::max(0, static_cast<int>(y * height)));
  };

  for (const auto& rec : state.receptacles) {
    double v = 0.18 + 0.14 * (rec.id % 3);
    int r0 = row_of(rec.cy - rec.hy), r1 = row_of(rec.cy + rec.hy);
    int c0 = col_of(rec.cx - rec.hx), c1 = col_of(rec.cx + rec.hx);
    for (int r = r0; r <= r1; ++r)
      for (int c = c0; c <= c1; ++c) paint(r, c, v);
  }
  for (const auto& obj : state.objects) {
    double v = 0.55 + 0.15 * (obj.id % 3);
    int rc = row_of(obj.y), cc = col_of(obj.x);
    paint(rc, cc, v);
    // Neighboring pixels whose centers fall inside the disc.
    for (int dr = -1; dr <= 1; ++dr) {
      for (int dc = -1; dc <= 1; ++dc) {
        double py = (rc + dr + 0.5) / height, px = (cc + dc + 0.5) / width;
        if (std::hypot(px - obj.x, py - obj.y) <= obj.radius)
          paint(rc + dr, cc + dc, v);
      }
    }
  }
  int er = row_of(state.eef.y), ec = col_of(state.eef.x);
  paint(er, ec, 1.0);
  double arm = state.eef.gripper >= 0.5 ? 0.92 : 0.78;
  paint(er - 1, ec, arm);
  paint(er + 1, ec, arm);
  paint(er, ec - 1, arm);
  paint(er, ec + 1, arm);
  return img;
}

nlohmann::ordered_json SceneConfig::to_json() const {
  nlohmann::ordered_json j;
  j["object_count"] = object_count;
  j["receptacle_count"] = receptacle_count;
  j["min_separation"] = min_separation;
  j["object_radius"] = object_radius;
  j["receptacle_hx"] = receptacle_hx;
  j["receptacle_hy"] = receptacle_hy;
  j["object_x"] = object_x;
  j["object_y"] = object_y;
  j["receptacle_x"] = receptacle_x;
  j["receptacle_y"] = receptacle_y;
  j["randomize_heading"] = randomize_heading;
  return j;
}

SceneConfig SceneConfig::from_json(const nlohmann::ordered_json& j) {
  SceneConfig c;
  c.object_count = j.value("object_count", c.object_count);
  c.receptacle_count = j.value("receptacle_count", c.receptacle_count);
  c.min_separation = j.value("min_separation", c.min_separation);
  c.object_radius = j.value("object_radius", c.object_radius);
  c.receptacle_hx = j.value("receptacle_hx", c.receptacle_hx);
  c.receptacle_hy = j.value("receptacle_hy", c.receptacle_hy);
  auto pair = [&](const char* key, std::array<double, 2>& out) {
    if (j.contains(key)) {
      out[0] = j.at(key).at(0).get<double>();
      out[1] = j.at(key).at(1).get<double>();
    }
  };
  pair("object_x", c.object_x);
  pair("object_y", c.object_y);
  pair("receptacle_x", c.receptacle_x);
  pair("receptacle_y", c.receptacle_y);
  c.randomize_heading = j.value("randomize_heading", c.randomize_heading);
  return c;
}

WorldState random_scene(const SceneConfig& config, Rng& rng) {
  if (config.object_count < 1 || config.receptacle_count < 1) {
    raise(FORGE_ERR_BAD_CONFIG, "scene needs at least one disc and one tray");
  }
  WorldState s;
  auto place = [&](const std::array<double, 2>& bx, const std::array<double, 2>& by,
                   const auto& taken_x, const auto& taken_y) {
    for (int attempt = 0; attempt < 1000; ++attempt) {
      double x = snap_to_grid(bx[0] + rng.uniform() * (bx[1] - bx[0]));
      double y = snap_to_grid(by[0] + rng.uniform() * (by[1] - by[0]));
      bool ok = true;
      for (size_t i = 0; i < taken_x.size(); ++i) {
        if (std::hypot(x - taken_x[i], y - taken_y[i]) < config.min_separation) {
          ok = false;
          break;
        }
      }
      if (ok) return std::array<double, 2>{x, y};
    }
    raise(FORGE_ERR_BAD_CONFIG,
          "scene placement cannot satisfy the separation constraint");
  };

  std::vector<double> ox, oy;
  for (int i = 0; i < config.object_count; ++i) {
    auto p = place(config.object_x, config.object_y, ox, oy);
    WorldObject obj;
    obj.id = i;
    obj.x = p[0];
    obj.y = p[1];
    obj.heading =
        config.randomize_heading ? snap_to_grid((rng.uniform() - 0.5) * 2.0 * kPi)
                                 : 0.0;
    obj.radius = config.object_radius;
    s.objects.push_back(obj);
    ox.push_back(p[0]);
    oy.push_back(p[1]);
  }
  std::vector<double> rx, ry;
  for (int i = 0; i < config.receptacle_count; ++i) {
    auto p = place(config.receptacle_x, config.receptacle_y, rx, ry);
    Receptacle rec;
    rec.id = i;
    rec.cx = p[0];
    rec.cy = p[1];
    rec.hx = config.receptacle_hx;
    rec.hy = config.receptacle_hy;
    s.receptacles.push_back(rec);
    rx.push_back(p[0]);
    ry.push_back(p[1]);
  }
  s.eef.x = snap_to_grid(0.15 + rng.uniform() * 0.7);
  s.eef.y = snap_to_grid(0.15 + rng.uniform() * 0.7);
  s.eef.heading = 0.0;
  s.eef.gripper = 0.0;
  s.held_object = -1;
  return s;
}

TaskSpec random_task(const SceneConfig& config, Rng& rng) {
  TaskSpec task;
  task.object_id = static_cast<int>(rng.uniform_int(
      static_cast<uint64_t>(config.object_count)));
  task.receptacle_id = static_cast<int>(rng.uniform_int(
      static_cast<uint64_t>(config.receptacle_count)));
  return task;
}

nlohmann::ordered_json scene_to_json(const WorldState& state) {
  nlohmann::ordered_json j;
  j["objects"] = nlohmann::ordered_json::array();
  for (const auto& obj : state.objects) {
    j["objects"].push_back({{"id", obj.id},
                            {"x", obj.x},
                            {"y", obj.y},
                            {"heading", obj.heading},
                            {"radius", obj.radius}});
  }
  j["receptacles"] = nlohmann::ordered_json::array();
  for (const auto& rec : state.receptacles) {
    j["receptacles"].push_back({{"id", rec.id},
                                {"cx", rec.cx},
                                {"cy", rec.cy},
                                {"hx", rec.hx},
                                {"hy", rec.hy}});
  }
  j["eef"] = {{"x", state.eef.x},
              {"y", state.eef.y},
              {"heading", state.eef.heading},
              {"gripper", state.eef.gripper}};
  j["held_object"] = state.held_object;
  return j;
}

WorldState scene_from_json(const nlohmann::ordered_json& j) {
  WorldState s;
  for (const auto& o : j.at("objects")) {
    WorldObject obj;
    obj.id = o.at("id").get<int>();
    obj.x = o.at("x").get<double>();
    obj.y = o.at("y").get<double>();
    obj.heading = o.at("heading").get<double>();
    obj.radius = o.at("radius").get<double>();
    s.objects.push_back(obj);
  }
  for (const auto& r : j.at("receptacles")) {
    Receptacle rec;
    rec.id = r.at("id").get<int>();
    rec.cx = r.at("cx").get<double>();
    rec.cy = r.at("cy").get<double>();
    rec.hx = r.at("hx").get<double>();
    rec.hy = r.at("hy").get<double>();
    s.receptacles.push_back(rec);
  }
  s.eef.x = j.at("eef").at("x").get<double>();
  s.eef.y = j.at("eef").at("y").get<double>();
  s.eef.heading = j.at("eef").at("heading").get<double>();
  s.eef.gripper = j.at("eef").at("gripper").get<double>();
  s.held_object = j.at("held_object").get<int>();
  return s;
}

Se2 se2_mul(const Se2& a, const Se2& b) {
  double c = std::cos(a.theta), s = std::sin(a.theta);
  Se2 out;
  out.x = a.x + c * b.x - s * b.y;
  out.y = a.y + s * b.x + c * b.y;
  out.theta = a.theta + b.theta;
  return out;
}

Se2 se2_inv(const Se2& a) {
  double c = std::cos(a.theta), s = std::sin(a.theta);
  Se2 out;
  out.theta = -a.theta;
  out.x = -(c * a.x + s * a.y);
  out.y = -(-s * a.x + c * a.y);
  return out;
}

std::array<double, 2> se2_apply(const Se2& t, double px, double py) {
  double c = std::cos(t.theta), s = std::sin(t.theta);
  return {t.x + c * px - s * py, t.y + s * px + c * py};
}

Se2 transplant_pose(const Se2& ref_src, const Se2& ref_new, const Se2& eef_src) {
  return se2_mul(se2_mul(ref_new, se2_inv(ref_src)), eef_src);
}

Se2 reference_pose(const WorldState& scene, const DemoSegment& segment) {
  if (segment.object_ref) {
    const WorldObject* obj = find_object(scene, segment.ref_id);
    if (obj == nullptr) {
      raise(FORGE_ERR_BAD_CONFIG, "segment references a disc the scene lacks");
    }
    return Se2{obj->x, obj->y, obj->heading};
  }
  const Receptacle* rec = find_receptacle(scene, segment.ref_id);
  if (rec == nullptr) {
    raise(FORGE_ERR_BAD_CONFIG, "segment references a tray the scene lacks");
  }
  return Se2{rec->cx, rec->cy, 0.0};
}

namespace {

// Walks the effector toward (tx, ty) with jittered steps well inside the
// per-tick clamp, holding the gripper at g. Appends actions and advances s.
void walk_to(WorldState& s, std::vector<WorldAction>& actions, double tx,
             double ty, double g, double tol, Rng& rng) {
  for (;;) {
    double dx = tx - s.eef.x, dy = ty - s.eef.y;
    double dist = std::hypot(dx, dy);
    if (dist <= tol) return;
    if (actions.size() > 600) {
      raise(FORGE_ERR_INTERNAL, "scripted approach failed to converge");
    }
    double step_len = std::min(0.03 + rng.uniform() * 0.008, dist);
    double ux = dx / dist, uy = dy / dist;
    double jitter = (rng.uniform() - 0.5) * 0.006;
    double dth = (rng.uniform() - 0.5) * 0.004;
    WorldAction a{ux * step_len - uy * jitter, uy * step_len + ux * jitter, dth,
                  g};
    s = step(s, a);
    actions.push_back(a);
  }
}

}  // namespace

std::vector<SourceDemo> generate_source_demos(int count,
                                              const SceneConfig& config,
                                              Rng& rng) {
  if (count < 1) {
    raise(FORGE_ERR_BAD_CONFIG, "demo count must be positive");
  }
  int vocab = config.object_count * config.receptacle_count;
  std::vector<SourceDemo> demos;
  demos.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    SourceDemo demo;
    demo.initial = random_scene(config, rng);
    demo.task = task_for_instruction(i % vocab, config.receptacle_count);

    WorldState s = demo.initial;
    const WorldObject* obj = find_object(demo.initial, demo.task.object_id);
    const Receptacle* rec = find_receptacle(demo.initial, demo.task.receptacle_id);

    walk_to(s, demo.actions, obj->x, obj->y, 0.0, 0.012, rng);
    StepFlags flags;
    s = step(s, WorldAction{0.0, 0.0, 0.0, 1.0}, &flags);
    demo.actions.push_back({0.0, 0.0, 0.0, 1.0});
    if (!flags.grasped || s.held_object != demo.task.object_id) {
      raise(FORGE_ERR_INTERNAL, "scripted grasp missed its disc");
    }
    int grasp_tick = static_cast<int>(demo.actions.size()) - 1;

    walk_to(s, demo.actions, rec->cx, rec->cy, 1.0, 0.010, rng);
    s = step(s, WorldAction{0.0, 0.0, 0.0, 0.0}, &flags);
    demo.actions.push_back({0.0, 0.0, 0.0, 0.0});
    if (!flags.released || !check_success(s, demo.task)) {
      raise(FORGE_ERR_INTERNAL, "scripted placement did not succeed");
    }
    int release_tick = static_cast<int>(demo.actions.size()) - 1;

    demo.segments = {
        DemoSegment{true, demo.task.object_id, 0, grasp_tick},
        DemoSegment{false, demo.task.receptacle_id, grasp_tick + 1,
                    release_tick}};
    demos.push_back(std::move(demo));
  }
  return demos;
}

Episode episode_from_demo(const SourceDemo& demo, const std::string& episode_id,
                          int height, int width) {
  Episode ep;
  ep.episode_id = episode_id;
  ep.embodiment_tag = "planar";
  WorldState s = demo.initial;
  const int vocab_stride = static_cast<int>(demo.initial.receptacles.size());
  int instr = instruction_for(demo.task, vocab_stride);
  for (size_t t = 0; t < demo.actions.size(); ++t) {
    Frame f;
    f.state = {s.eef.x, s.eef.y, s.eef.heading, s.eef.gripper};
    f.action = {demo.actions[t][0], demo.actions[t][1], demo.actions[t][2],
                demo.actions[t][3]};
    std::vector<double> img = render_world(s, height, width);
    std::vector<std::vector<double>> rows(static_cast<size_t>(height));
    for (int r = 0; r < height; ++r) {
      rows[r].assign(img.begin() + static_cast<size_t>(r) * width,
                     img.begin() + static_cast<size_t>(r + 1) * width);
    }
    f.images["top"] = std::move(rows);
    f.annotation_indices["instruction"] = instr;
    f.timestamp = static_cast<double>(t) * 0.1;
    const WorldObject* obj = find_object(s, demo.task.object_id);
    f.target_center = std::array<double, 2>{obj->x, obj->y};
    ep.frames.push_back(std::move(f));
    s = step(s, demo.actions[t]);
  }
  if (!check_success(s, demo.task)) {
    raise(FORGE_ERR_INTERNAL, "demo replay did not reproduce success");
  }
  return ep;
}

void write_demo_dataset(const std::vector<SourceDemo>& demos,
                        const std::string& root, int height, int width) {
  if (demos.empty()) {
    raise(FORGE_ERR_EMPTY_DATASET, "refusing to write a dataset with no demos");
  }
  ModalityConfig config;
  config.embodiment_tag = "planar";
  config.fps = 10;
  config.res_h = height;
  config.res_w = width;
  config.state_fields = {FieldSpec{"eef", 0, 4, "f64", "none", "min_max"}};
  config.action_fields = {FieldSpec{"delta", 0, 4, "f64", "none", "min_max"}};
  config.annotation_keys = {"instruction", "scene"};
  config.video_keys = {"top"};

  std::map<std::string, std::map<int, std::string>> annotations;
  int vocab = 0;
  for (const auto& demo : demos) {
    int stride = static_cast<int>(demo.initial.receptacles.size());
    vocab = std::max(vocab, instruction_for(demo.task, stride) + 1);
  }
  int stride = static_cast<int>(demos.front().initial.receptacles.size());
  for (int i = 0; i < vocab; ++i) {
    annotations["instruction"][i] =
        instruction_text(task_for_instruction(i, stride));
  }

  std::vector<Episode> episodes;
  for (size_t k = 0; k < demos.size(); ++k) {
    char id[32];
    std::snprintf(id, sizeof(id), "%06zu", k);
    Episode ep = episode_from_demo(demos[k], id, height, width);
    annotations["scene"][static_cast<int>(k)] = scene_to_json(
        demos[k].initial).dump();
    for (auto& f : ep.frames) {
      f.annotation_indices["scene"] = static_cast<int>(k);
    }
    episodes.push_back(std::move(ep));
  }
  save_dataset(root, config, episodes, annotations, true);
}

nlohmann::ordered_json ExpansionReport::to_json() const {
  nlohmann::ordered_json j;
  j["attempts"] = attempts;
  j["retained"] = retained;
  j["yield"] = yield;
  j["per_source"] = per_source;
  return j;
}

ExpansionReport mimicgen_expand(const std::vector<SourceDemo>& sources,
                                int target_demos, const SceneConfig& config,
                                Rng& rng, std::vector<SourceDemo>& out_demos,
                                int attempt_budget) {
  if (sources.empty()) {
    raise(FORGE_ERR_EMPTY_DATASET, "expansion needs at least one source demo");
  }
  if (target_demos < 1) {
    raise(FORGE_ERR_BAD_CONFIG, "expansion target must be positive");
  }
  if (attempt_budget <= 0) attempt_budget = 10 * target_demos;

  // Effector pose before each tick of every source, indexed [source][tick].
  std::vector<std::vector<Se2>> eef_at(sources.size());
  for (size_t i = 0; i < sources.size(); ++i) {
    WorldState s = sources[i].initial;
    for (const auto& a : sources[i].actions) {
      eef_at[i].push_back(Se2{s.eef.x, s.eef.y, s.eef.heading});
      s = step(s, a);
    }
  }

  ExpansionReport report;
  report.per_source.assign(sources.size(), 0);

  while (report.retained < target_demos && report.attempts < attempt_budget) {
    ++report.attempts;
    WorldState scene = random_scene(config, rng);
    size_t src_idx = rng.uniform_int(sources.size());
    const SourceDemo& src = sources[src_idx];

    WorldState s = scene;
    std::vector<WorldAction> acts;
    int grasp_tick = -1, release_tick = -1;
    for (const auto& seg : src.segments) {
      Se2 p_src = reference_pose(src.initial, seg);
      Se2 p_new = reference_pose(scene, seg);
      Se2 t = se2_mul(p_new, se2_inv(p_src));

      const Se2& e_src = eef_at[src_idx][static_cast<size_t>(seg.start)];
      Se2 target = transplant_pose(p_src, p_new, e_src);
      std::array<double, 2> mapped{target.x, target.y};
      double mapped_theta = target.theta;

      double dist = std::hypot(mapped[0] - s.eef.x, mapped[1] - s.eef.y);
      int n = static_cast<int>(std::ceil(dist / 0.04));
      if (n > 0) {
        double dx = (mapped[0] - s.eef.x) / n;
        double dy = (mapped[1] - s.eef.y) / n;
        double dth = shortest_arc(s.eef.heading, mapped_theta) / n;
        double g = s.eef.gripper;
        for (int k = 0; k < n; ++k) {
          WorldAction a{dx, dy, dth, g};
          s = step(s, a);
          acts.push_back(a);
        }
      }

      double c = std::cos(t.theta), sn = std::sin(t.theta);
      for (int tick = seg.start; tick <= seg.end; ++tick) {
        const WorldAction& a0 = src.actions[static_cast<size_t>(tick)];
        WorldAction a{c * a0[0] - sn * a0[1], sn * a0[0] + c * a0[1], a0[2],
                      a0[3]};
        StepFlags fl;
        s = step(s, a, &fl);
        acts.push_back(a);
        if (fl.grasped) grasp_tick = static_cast<int>(acts.size()) - 1;
        if (fl.released) release_tick = static_cast<int>(acts.size()) - 1;
      }
    }

    if (grasp_tick < 0 || release_tick < 0 || !check_success(s, src.task)) {
      continue;
    }
    SourceDemo kept;
    kept.initial = scene;
    kept.task = src.task;
    kept.actions = std::move(acts);
    kept.segments = {DemoSegment{true, src.task.object_id, 0, grasp_tick},
                     DemoSegment{false, src.task.receptacle_id, grasp_tick + 1,
                                 release_tick}};
    out_demos.push_back(std::move(kept));
    ++report.retained;
    ++report.per_source[src_idx];
  }

  report.yield = report.attempts > 0
                     ? static_cast<double>(report.retained) / report.attempts
                     : 0.0;
  return report;
}

nlohmann::ordered_json EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["trials"] = trials;
  j["successes"] = successes;
  j["success_rate"] = success_rate;
  j["per_trial"] = nlohmann::ordered_json::array();
  for (const auto& t : per_trial) {
    j["per_trial"].push_back(
        {{"trial", t.trial}, {"success", t.success}, {"ticks", t.ticks}});
  }
  return j;
}

EvalReport evaluate(const ChunkController& controller,
                    const SceneConfig& config, int trials, int max_ticks,
                    uint64_t seed) {
  if (trials < 1 || max_ticks < 1) {
    raise(FORGE_ERR_BAD_CONFIG, "evaluation needs positive trials and ticks");
  }
  EvalReport report;
  report.trials = trials;
  Rng root(seed);
  for (int trial = 0; trial < trials; ++trial) {
    Rng r = root.split(static_cast<uint64_t>(trial));
    WorldState s = random_scene(config, r);
    TaskSpec task = random_task(config, r);
    TrialResult res;
    res.trial = trial;
    int t = 0;
    while (t < max_ticks && !res.success) {
      std::vector<double> chunk = controller(s, task, r);
      if (chunk.empty() || chunk.size() % 4 != 0) {
        raise(FORGE_ERR_DIM_MISMATCH,
              "controller must return ticks * 4 action values");
      }
      for (size_t row = 0; row * 4 < chunk.size() && t < max_ticks; ++row) {
        WorldAction a{chunk[row * 4], chunk[row * 4 + 1], chunk[row * 4 + 2],
                      chunk[row * 4 + 3]};
        s = step(s, a);
        ++t;
        if (check_success(s, task)) {
          res.success = true;
          break;
        }
      }
    }
    res.ticks = t;
    report.per_trial.push_back(res);
    if (res.success) ++report.successes;
  }
  report.success_rate =
      static_cast<double>(report.successes) / static_cast<double>(trials);
  return report;
}

int select_checkpoint(const std::vector<double>& scores) {
  if (scores.empty()) {
    raise(FORGE_ERR_EMPTY_SCORES, "checkpoint selection over an empty list");
  }
  size_t window = std::min<size_t>(5, scores.size());
  size_t first = scores.size() - window;
  size_t best = first;
  for (size_t i = first + 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return static_cast<int>(best);
}

}  // namespace forge
