#pragma once

// Deterministic planar tabletop simulator used as the benchmark environment.
// A gripper moves on the unit square, grasps discs, and drops them into
// rectangular receptacles. Everything is double precision on a fixed binary
// grid so trajectories replay bit-exactly from stored actions.

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <forge/episode.hpp>
#include <forge/rng.hpp>

#include <json.hpp>

namespace forge {

// Positions and per-tick deltas are snapped to multiples of 2^-20. Grid
// points add exactly in doubles, so applying a delta and then its negation
// restores the previous coordinate bit for bit.
inline constexpr double kWorldGrid = 1.0 / (1 << 20);

// Per-tick translation clamp, each axis.
inline constexpr double kMaxDelta = 0.05;

// A grasp engages when the gripper command crosses 0.5 upward with the
// effector within this distance of a disc center.
inline constexpr double kGraspRadius = 0.03;

double snap_to_grid(double v);

struct WorldObject {
  int id = 0;
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;
  double radius = 0.045;
};

struct Receptacle {
  int id = 0;
  double cx = 0.0;
  double cy = 0.0;
  double hx = 0.08;  // half extent along x
  double hy = 0.08;
};

struct Eef {
  double x = 0.5;
  double y = 0.5;
  double heading = 0.0;
  double gripper = 0.0;
};

struct WorldState {
  std::vector<WorldObject> objects;
  std::vector<Receptacle> receptacles;
  Eef eef;
  int held_object = -1;  // object id, -1 when the gripper is empty
};

// Action layout: [dx, dy, dheading, gripper]. dx/dy are clamped per axis to
// kMaxDelta and snapped to the grid; gripper is an absolute command.
using WorldAction = std::array<double, 4>;

struct StepFlags {
  bool clamped = false;   // any delta was non-finite or out of range
  bool grasped = false;
  bool released = false;
};

WorldState step(const WorldState& state, const WorldAction& action,
                StepFlags* flags = nullptr);

struct TaskSpec {
  int object_id = 0;
  int receptacle_id = 0;
};

// Instruction ids enumerate (object, receptacle) pairs in row-major order.
int instruction_for(const TaskSpec& task, int receptacle_count);
TaskSpec task_for_instruction(int instruction_id, int receptacle_count);
std::string instruction_text(const TaskSpec& task);

// Success: the commanded disc center lies inside the commanded receptacle
// rectangle and the gripper is not holding it.
bool check_success(const WorldState& state, const TaskSpec& task);

// Top-down grayscale render in [0, 1], row-major, row 0 at y = 0. The
// effector paints brightest, discs next (brightness encodes id), receptacle
// interiors dimmest. Returns height * width values.
std::vector<double> render_world(const WorldState& state, int height, int width);

struct SceneConfig {
  int object_count = 2;
  int receptacle_count = 2;
  double min_separation = 0.08;
  double object_radius = 0.045;
  double receptacle_hx = 0.08;
  double receptacle_hy = 0.08;
  // Placement rectangles, [lo, hi] per axis.
  std::array<double, 2> object_x{0.15, 0.85};
  std::array<double, 2> object_y{0.12, 0.55};
  std::array<double, 2> receptacle_x{0.15, 0.85};
  std::array<double, 2> receptacle_y{0.68, 0.88};
  bool randomize_heading = true;

  nlohmann::ordered_json to_json() const;
  static SceneConfig from_json(const nlohmann::ordered_json& j);
};

// Rejection-samples disc and receptacle centers with pairwise separation of
// at least min_separation between centers of the same kind.
WorldState random_scene(const SceneConfig& config, Rng& rng);
TaskSpec random_task(const SceneConfig& config, Rng& rng);

nlohmann::ordered_json scene_to_json(const WorldState& state);
WorldState scene_from_json(const nlohmann::ordered_json& j);

// Planar rigid transform, rotation about the origin then translation.
struct Se2 {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;
};

Se2 se2_mul(const Se2& a, const Se2& b);
Se2 se2_inv(const Se2& a);
std::array<double, 2> se2_apply(const Se2& t, double px, double py);

// Pose the effector must take in a new scene so that its pose relative to
// the reference entity matches the source scene: ref_new * inv(ref_src) *
// eef_src. The demo multiplier maps every segment through this.
Se2 transplant_pose(const Se2& ref_src, const Se2& ref_new, const Se2& eef_src);

// A demonstration splits at gripper transitions into object-centric pieces.
// Each references the scene entity whose pose anchors it when the demo is
// transplanted into a new scene: the grasped disc for the reach piece, the
// destination receptacle for the transport piece.
struct DemoSegment {
  bool object_ref = true;  // false: receptacle reference
  int ref_id = 0;
  int start = 0;  // tick range [start, end], inclusive
  int end = 0;
};

struct SourceDemo {
  WorldState initial;
  TaskSpec task;
  std::vector<WorldAction> actions;
  std::vector<DemoSegment> segments;
};

// Pose of a segment's reference entity within a scene.
Se2 reference_pose(const WorldState& scene, const DemoSegment& segment);

// Scripted picker: approach the commanded disc, close, carry to the
// commanded receptacle, open. Every returned demo passes check_success.
std::vector<SourceDemo> generate_source_demos(int count,
                                              const SceneConfig& config,
                                              Rng& rng);

// Runs a demo's actions from its initial state and packages each tick as a
// dataset frame (pre-step render + eef state + action + target center).
Episode episode_from_demo(const SourceDemo& demo, const std::string& episode_id,
                          int height, int width);

// Writes demos as a trajectory dataset under root: embodiment tag "planar",
// camera "top", per-frame instruction and per-episode scene annotations.
void write_demo_dataset(const std::vector<SourceDemo>& demos,
                        const std::string& root, int height, int width);

struct ExpansionReport {
  int attempts = 0;
  int retained = 0;
  double yield = 0.0;  // retained / attempts
  std::vector<int> per_source;

  nlohmann::ordered_json to_json() const;
};

// Demo multiplier. Each attempt drops a uniformly chosen source demo into a
// fresh random scene: every segment's actions are mapped through the rigid
// transform between the reference entity's old and new poses, a straight
// bridge (ceil(distance / 0.04) ticks, constant gripper) leads into each
// segment, and the result is replayed open loop. Only attempts that end in
// success are kept. Stops at target_demos retained or when attempt_budget is
// spent, whichever comes first, and always reports the yield.
ExpansionReport mimicgen_expand(const std::vector<SourceDemo>& sources,
                                int target_demos, const SceneConfig& config,
                                Rng& rng, std::vector<SourceDemo>& out_demos,
                                int attempt_budget = 0);

// Closed-loop evaluation. The controller sees the full world plus the task
// and returns a flat chunk of ticks * 4 action values; policy adapters are
// expected to look only at render_world / eef / instruction. Each trial runs
// a fresh random scene for at most max_ticks ticks, consuming chunks whole.
using ChunkController = std::function<std::vector<double>(
    const WorldState& state, const TaskSpec& task, Rng& rng)>;

struct TrialResult {
  int trial = 0;
  bool success = false;
  int ticks = 0;
};

struct EvalReport {
  int trials = 0;
  int successes = 0;
  double success_rate = 0.0;
  std::vector<TrialResult> per_trial;

  nlohmann::ordered_json to_json() const;
};

EvalReport evaluate(const ChunkController& controller, const SceneConfig& config,
                    int trials, int max_ticks, uint64_t seed);

// Picks the best score among the last five entries (fewer when the list is
// shorter) and returns its index in the full list.
int select_checkpoint(const std::vector<double>& scores);

}  // namespace forge
