#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "nav/common.hpp"
#include "nav/tensor.hpp"

namespace nav::sim {

inline constexpr double kCellSize = 0.125;       // meters per occupancy cell
inline constexpr double kForwardStep = 0.25;     // meters
inline constexpr double kTurnStep = kPi / 6.0;   // 30 degrees
inline constexpr int kNumCategories = 6;
inline constexpr double kObjectRadius = 0.2;     // rendered disc, meters
inline constexpr double kMaxRayRange = 50.0;     // meters
inline constexpr double kSuccessRadius = 1.0;    // r_g, meters
inline constexpr double kSuccessAngle = 25.0 * kPi / 180.0;  // theta_g

enum class Action : int {
  kStop = 0,
  kMoveForward = 1,
  kTurnLeft = 2,
  kTurnRight = 3,
};
inline constexpr int kNumActions = 4;

struct ObjectInstance {
  int category = 0;   // 0..5
  double x = 0, y = 0;
  double hue = 0;     // instance tint in [0,1)
};

struct Scene {
  std::uint64_t seed = 0;
  int width = 0, height = 0;            // cells
  double cell_size = kCellSize;
  std::vector<std::uint8_t> occupancy;  // 1 = solid, row-major [y][x]
  std::vector<float> wall_hue;          // per-cell hue in [0,1)
  std::vector<ObjectInstance> objects;

  bool in_bounds(int cx, int cy) const {
    return cx >= 0 && cy >= 0 && cx < width && cy < height;
  }
  bool occupied(int cx, int cy) const {
    if (!in_bounds(cx, cy)) return true;
    return occupancy[static_cast<std::size_t>(cy) * width + cx] != 0;
  }
  bool occupied_at(double x, double y) const {
    return occupied(static_cast<int>(std::floor(x / cell_size)),
                    static_cast<int>(std::floor(y / cell_size)));
  }
  double extent() const { return width * cell_size; }
};

struct AgentState {
  double x = 0, y = 0;
  double heading = 0;  // radians in [0, 2*pi), 0 = +x axis
};

struct EpisodeSpec {
  std::uint64_t scene_seed = 0;
  AgentState start;
  AgentState goal;          // ImageNav goal pose (ignored for ObjectNav)
  int goal_category = -1;   // >= 0 selects ObjectNav
  int max_steps = 200;
  double geodesic_start_to_goal = 0;

  bool is_objectnav() const { return goal_category >= 0; }
};

struct StepRecord {
  AgentState state;  // post-action state
  Action action = Action::kStop;
  double d = 0;      // meters to goal (nearest instance for ObjectNav)
  double theta = 0;  // radians in [0, pi]; 0 for ObjectNav
  bool goal_visible = false;
  bool collision = false;
};

struct TrajectoryRecord {
  EpisodeSpec episode;
  StepRecord initial;            // pre-action state (action field unused)
  std::vector<StepRecord> steps;
  bool stop_called = false;
};

/// One action sequence for behavior cloning; observations are regenerated
/// on replay.
struct Demo {
  EpisodeSpec episode;
  std::vector<Action> actions;
};

// ---- scene generation and kinematics ----

/// Deterministic under seed. Free space is one connected component; the
/// boundary ring is solid; at least one instance of every object category.
Scene generate_scene(std::uint64_t seed);

/// Applies one action. FORWARD that would cross solid space leaves the
/// position unchanged and reports a collision; turns wrap the heading.
std::pair<AgentState, bool> step(const Scene& scene, const AgentState& state,
                                 Action action);

/// True when the open segment between two free points crosses no solid cell.
bool line_of_sight(const Scene& scene, double x0, double y0, double x1,
                   double y1);

/// Distance until a solid cell is entered along direction `angle`,
/// capped at kMaxRayRange. Also reports the hit cell.
double raycast(const Scene& scene, double x, double y, double angle,
               int* hit_cx = nullptr, int* hit_cy = nullptr);

/// Egocentric 2.5-D render: per-column raycast over the horizontal FoV,
/// column hue shaded by 1/(1+d), hit extent inversely proportional to
/// distance. Returns float32 [3, height, width] with values in [0, 1].
Tensor<float> render_observation(const Scene& scene, const AgentState& state,
                                 int width = 64, int height = 64,
                                 double fov = kPi / 2.0);

// ---- geodesics ----

inline constexpr double kInfDistance = std::numeric_limits<double>::infinity();

/// Shortest-path length over the 8-connected free grid, in meters
/// (diagonal cost sqrt(2) * cell). Infinity when unreachable. Corner
/// cutting through diagonally-touching walls is disallowed.
double geodesic_distance(const Scene& scene, double x0, double y0, double x1,
                         double y1);

/// Cell-center waypoints of the shortest path (including both endpoints'
/// cells); empty when unreachable.
std::vector<std::pair<int, int>> geodesic_path(const Scene& scene, double x0,
                                               double y0, double x1,
                                               double y1);

// ---- episodes, success, oracle ----

struct EpisodeSamplerConfig {
  int max_steps = 200;
  double min_geodesic = 2.0;   // meters
  double max_geodesic = 25.0;  // meters
  int max_tries = 200;
};

/// Draws a start pose and goal (pose or category) with a finite geodesic in
/// the configured band. Throws ConfigError when the scene admits none.
EpisodeSpec sample_episode(const Scene& scene, Rng& rng, bool objectnav,
                           const EpisodeSamplerConfig& cfg = {});

/// Distance from a position to the goal: Euclidean to the goal pose, or to
/// the nearest instance of the goal category.
double goal_distance(const Scene& scene, const EpisodeSpec& ep, double x,
                     double y);

/// Heading error theta_t: |heading - goal.heading| folded to [0, pi].
/// Zero for ObjectNav (no goal pose).
double goal_heading_error(const EpisodeSpec& ep, double heading);

/// Fills d/theta/goal_visible for a state under this episode's goal.
StepRecord make_record(const Scene& scene, const EpisodeSpec& ep,
                       const AgentState& state, Action action, bool collision);

/// success = stopped within r_g; angle_success additionally theta < theta_g.
std::pair<bool, bool> imagenav_success(const TrajectoryRecord& traj,
                                       double r_g = kSuccessRadius,
                                       double theta_g = kSuccessAngle);

/// Stopped within 1 m of a goal-category instance that is in line of sight.
bool objectnav_success(const TrajectoryRecord& traj, const Scene& scene,
                       int goal_category);

/// Shortest-path demonstration: greedy waypoint following (turn when the
/// bearing error exceeds 15 degrees, else move forward), STOP at the goal.
/// Throws ConfigError when the goal is unreachable or max_steps is too low.
TrajectoryRecord oracle_demonstration(const Scene& scene,
                                      const EpisodeSpec& episode);

/// Replays an action sequence, rebuilding the full trajectory record.
TrajectoryRecord replay_actions(const Scene& scene, const EpisodeSpec& episode,
                                const std::vector<Action>& actions);

// ---- demo / trajectory serialization (JSONL, versioned) ----

void write_demos(const std::string& path, const std::vector<Demo>& demos);
std::vector<Demo> read_demos(const std::string& path);  // IoError on bad input

}  // namespace nav::sim
