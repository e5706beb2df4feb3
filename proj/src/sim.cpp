#include "nav/sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <queue>
#include <utility>

#include <json.hpp>

#include "nav/color.hpp"

namespace nav::sim {
namespace {

using json = nlohmann::json;

/// Grid traversal (Amanatides-Woo). Returns the distance at which the ray
/// enters a solid cell, or +inf when none is entered within max_range.
double dda(const Scene& s, double x, double y, double dx, double dy,
           double max_range, int* hit_cx, int* hit_cy) {
  const double inf = std::numeric_limits<double>::infinity();
  int cx = static_cast<int>(std::floor(x / s.cell_size));
  int cy = static_cast<int>(std::floor(y / s.cell_size));
  if (s.occupied(cx, cy)) {
    if (hit_cx) *hit_cx = cx;
    if (hit_cy) *hit_cy = cy;
    return 0.0;
  }
  const int sx = dx > 0 ? 1 : -1;
  const int sy = dy > 0 ? 1 : -1;
  const double tdx = dx != 0 ? s.cell_size / std::fabs(dx) : inf;
  const double tdy = dy != 0 ? s.cell_size / std::fabs(dy) : inf;
  double tmx = inf, tmy = inf;
  if (dx > 0) tmx = ((cx + 1) * s.cell_size - x) / dx;
  else if (dx < 0) tmx = (x - cx * s.cell_size) / -dx;
  if (dy > 0) tmy = ((cy + 1) * s.cell_size - y) / dy;
  else if (dy < 0) tmy = (y - cy * s.cell_size) / -dy;
  while (true) {
    double t;
    if (tmx <= tmy) {
      t = tmx;
      cx += sx;
      tmx += tdx;
    } else {
      t = tmy;
      cy += sy;
      tmy += tdy;
    }
    if (t > max_range) return inf;
    if (s.occupied(cx, cy)) {
      if (hit_cx) *hit_cx = cx;
      if (hit_cy) *hit_cy = cy;
      return t;
    }
  }
}

std::pair<int, int> cell_of(const Scene& s, double x, double y) {
  return {static_cast<int>(std::floor(x / s.cell_size)),
          static_cast<int>(std::floor(y / s.cell_size))};
}

double cell_center(const Scene& s, int c) { return (c + 0.5) * s.cell_size; }

bool near_wall(const Scene& s, int cx, int cy) {
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx)
      if ((dx || dy) && s.occupied(cx + dx, cy + dy)) return true;
  return false;
}

struct PathResult {
  double dist = kInfDistance;
  std::vector<std::pair<int, int>> cells;
};

/// Dijkstra over the 8-connected free grid. `wall_penalty` (meters) is added
/// when entering a cell adjacent to a solid one; zero gives the pure metric.
PathResult dijkstra(const Scene& s, std::pair<int, int> from,
                    std::pair<int, int> to, double wall_penalty) {
  const int w = s.width, h = s.height;
  const int start = from.second * w + from.first;
  const int target = to.second * w + to.first;
  std::vector<double> dist(static_cast<std::size_t>(w) * h, kInfDistance);
  std::vector<int> prev(static_cast<std::size_t>(w) * h, -1);
  using QItem = std::pair<double, int>;
  std::priority_queue<QItem, std::vector<QItem>, std::greater<QItem>> pq;
  dist[start] = 0.0;
  pq.push({0.0, start});
  static constexpr int kDx[8] = {1, -1, 0, 0, 1, 1, -1, -1};
  static constexpr int kDy[8] = {0, 0, 1, -1, 1, -1, 1, -1};
  const double diag = std::sqrt(2.0) * s.cell_size;
  while (!pq.empty()) {
    auto [d, id] = pq.top();
    pq.pop();
    if (d > dist[id]) continue;
    if (id == target) break;
    const int cx = id % w, cy = id / w;
    for (int k = 0; k < 8; ++k) {
      const int nx = cx + kDx[k], ny = cy + kDy[k];
      if (s.occupied(nx, ny)) continue;
      // No cutting corners: a diagonal move needs both orthogonal
      // neighbors free.
      if (kDx[k] && kDy[k] &&
          (s.occupied(cx + kDx[k], cy) || s.occupied(cx, cy + kDy[k])))
        continue;
      double nd = d + (k < 4 ? s.cell_size : diag);
      if (wall_penalty > 0 && near_wall(s, nx, ny)) nd += wall_penalty;
      const int nid = ny * w + nx;
      if (nd < dist[nid]) {
        dist[nid] = nd;
        prev[nid] = id;
        pq.push({nd, nid});
      }
    }
  }
  PathResult res;
  res.dist = dist[target];
  if (std::isfinite(res.dist)) {
    for (int id = target; id != -1; id = prev[id])
      res.cells.push_back({id % w, id / w});
    std::reverse(res.cells.begin(), res.cells.end());
  }
  return res;
}

std::pair<int, int> checked_cell(const Scene& s, double x, double y,
                                 const char* what) {
  auto c = cell_of(s, x, y);
  NAV_CHECK_CONFIG(!s.occupied(c.first, c.second),
                   std::string(what) + " position is in an occupied cell");
  return c;
}

const ObjectInstance* nearest_instance(const Scene& scene, int category,
                                       double x, double y) {
  const ObjectInstance* best = nullptr;
  double best_d = kInfDistance;
  for (const auto& obj : scene.objects) {
    if (obj.category != category) continue;
    const double d = std::hypot(obj.x - x, obj.y - y);
    if (d < best_d) {
      best_d = d;
      best = &obj;
    }
  }
  return best;
}

}  // namespace

Scene generate_scene(std::uint64_t seed) {
  Rng base(splitmix64(seed ^ 0x5ce9e6e9ULL));
  for (int attempt = 0; attempt < 16; ++attempt) {
    Rng rng = base.fork(static_cast<std::uint64_t>(attempt));
    Scene s;
    s.seed = seed;
    const int side_m = rng.uniform_int(8, 16);
    s.width = s.height = side_m * 8;  // 0.125 m cells
    const int w = s.width, h = s.height;
    s.occupancy.assign(static_cast<std::size_t>(w) * h, 1);
    auto carve = [&](int x0, int y0, int x1, int y1) {
      x0 = std::max(x0, 1);
      y0 = std::max(y0, 1);
      x1 = std::min(x1, w - 2);
      y1 = std::min(y1, h - 2);
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x)
          s.occupancy[static_cast<std::size_t>(y) * w + x] = 0;
    };

    const int n_rooms = rng.uniform_int(6, 12);
    std::vector<std::pair<int, int>> centers;
    for (int r = 0; r < n_rooms; ++r) {
      const int rw = rng.uniform_int(12, 28);
      const int rh = rng.uniform_int(12, 28);
      const int x0 = rng.uniform_int(1, std::max(1, w - rw - 2));
      const int y0 = rng.uniform_int(1, std::max(1, h - rh - 2));
      carve(x0, y0, x0 + rw - 1, y0 + rh - 1);
      centers.push_back({x0 + rw / 2, y0 + rh / 2});
    }
    // Width-3 L-corridors between consecutive room centers.
    for (std::size_t i = 0; i + 1 < centers.size(); ++i) {
      const auto [ax, ay] = centers[i];
      const auto [bx, by] = centers[i + 1];
      carve(std::min(ax, bx) - 1, ay - 1, std::max(ax, bx) + 1, ay + 1);
      carve(bx - 1, std::min(ay, by) - 1, bx + 1, std::max(ay, by) + 1);
    }
    // 2x2 pillars for visual structure; the component pass below restores
    // connectivity if one happens to split the space.
    const int n_pillars = rng.uniform_int(6, 16);
    for (int p = 0; p < n_pillars; ++p) {
      const int x = rng.uniform_int(2, w - 4);
      const int y = rng.uniform_int(2, h - 4);
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx)
          s.occupancy[static_cast<std::size_t>(y + dy) * w + (x + dx)] = 1;
    }

    // Keep only the largest 4-connected free component.
    std::vector<int> comp(static_cast<std::size_t>(w) * h, -1);
    int n_comp = 0;
    std::vector<int> comp_size;
    for (int i = 0; i < w * h; ++i) {
      if (s.occupancy[i] || comp[i] >= 0) continue;
      int size = 0;
      std::vector<int> stack{i};
      comp[i] = n_comp;
      while (!stack.empty()) {
        const int id = stack.back();
        stack.pop_back();
        ++size;
        const int cx = id % w, cy = id / w;
        const int nbr[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
        for (auto& nb : nbr) {
          const int nx = cx + nb[0], ny = cy + nb[1];
          if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
          const int nid = ny * w + nx;
          if (s.occupancy[nid] || comp[nid] >= 0) continue;
          comp[nid] = n_comp;
          stack.push_back(nid);
        }
      }
      comp_size.push_back(size);
      ++n_comp;
    }
    if (n_comp == 0) continue;
    const int keep = static_cast<int>(
        std::max_element(comp_size.begin(), comp_size.end()) -
        comp_size.begin());
    int free_count = 0;
    for (int i = 0; i < w * h; ++i) {
      if (!s.occupancy[i] && comp[i] != keep) s.occupancy[i] = 1;
      if (!s.occupancy[i]) ++free_count;
    }
    if (free_count < 500) continue;

    s.wall_hue.resize(static_cast<std::size_t>(w) * h);
    for (auto& hue : s.wall_hue) hue = static_cast<float>(rng.uniform());

    // Object instances at cell centers with full clearance; the first six
    // cover every category.
    std::vector<std::pair<int, int>> clear_cells;
    for (int cy = 1; cy < h - 1; ++cy)
      for (int cx = 1; cx < w - 1; ++cx)
        if (!s.occupied(cx, cy) && !near_wall(s, cx, cy))
          clear_cells.push_back({cx, cy});
    if (clear_cells.size() < 32) continue;
    const int n_objects = 6 + rng.uniform_int(2, 6);
    for (int i = 0; i < n_objects; ++i) {
      const int category = i < kNumCategories ? i : rng.uniform_int(0, 5);
      for (int t = 0; t < 200; ++t) {
        const auto [cx, cy] = clear_cells[rng.uniform_int(
            0, static_cast<int>(clear_cells.size()) - 1)];
        ObjectInstance obj;
        obj.category = category;
        obj.x = cell_center(s, cx);
        obj.y = cell_center(s, cy);
        obj.hue = rng.uniform();
        const bool clash =
            std::any_of(s.objects.begin(), s.objects.end(), [&](auto& o) {
              return std::hypot(o.x - obj.x, o.y - obj.y) < 0.5;
            });
        if (!clash) {
          s.objects.push_back(obj);
          break;
        }
      }
    }
    bool all_cats = true;
    for (int c = 0; c < kNumCategories; ++c)
      all_cats = all_cats &&
                 std::any_of(s.objects.begin(), s.objects.end(),
                              [&](auto& o) { return o.category == c; });
    if (!all_cats) continue;
    return s;
  }
  throw ConfigError("scene generation failed to produce a usable layout");
}

std::pair<AgentState, bool> step(const Scene& scene, const AgentState& state,
                                 Action action) {
  AgentState next = state;
  bool collision = false;
  switch (action) {
    case Action::kStop:
      break;
    case Action::kMoveForward: {
      const double dx = std::cos(state.heading), dy = std::sin(state.heading);
      const double t =
          dda(scene, state.x, state.y, dx, dy, kForwardStep, nullptr, nullptr);
      if (t <= kForwardStep) {
        collision = true;  // blocked entirely; no wall sliding
      } else {
        next.x += kForwardStep * dx;
        next.y += kForwardStep * dy;
      }
      break;
    }
    case Action::kTurnLeft:
      next.heading = wrap_angle(state.heading + kTurnStep);
      break;
    case Action::kTurnRight:
      next.heading = wrap_angle(state.heading - kTurnStep);
      break;
  }
  return {next, collision};
}

bool line_of_sight(const Scene& scene, double x0, double y0, double x1,
                   double y1) {
  const double dx = x1 - x0, dy = y1 - y0;
  const double dist = std::hypot(dx, dy);
  if (dist < 1e-12) return !scene.occupied_at(x0, y0);
  const double t =
      dda(scene, x0, y0, dx / dist, dy / dist, dist, nullptr, nullptr);
  return !std::isfinite(t);
}

double raycast(const Scene& scene, double x, double y, double angle,
               int* hit_cx, int* hit_cy) {
  int cx = -1, cy = -1;
  const double t =
      dda(scene, x, y, std::cos(angle), std::sin(angle), kMaxRayRange, &cx, &cy);
  if (hit_cx) *hit_cx = cx;
  if (hit_cy) *hit_cy = cy;
  return std::isfinite(t) ? t : kMaxRayRange;
}

Tensor<float> render_observation(const Scene& scene, const AgentState& state,
                                 int width, int height, double fov) {
  NAV_CHECK_CONFIG(width > 0 && height > 0 && fov > 0,
                   "render dimensions and fov must be positive");
  Tensor<float> img = Tensor<float>::zeros({3, height, width});
  float* px = img.data();
  const auto put = [&](int c, int row, int col, double v) {
    px[(static_cast<std::size_t>(c) * height + row) * width + col] =
        static_cast<float>(v);
  };
  const double colw = fov / width;
  constexpr double kCeiling = 0.78, kFloor = 0.22;
  for (int j = 0; j < width; ++j) {
    const double ang = state.heading + fov / 2.0 - (j + 0.5) * colw;
    const double dirx = std::cos(ang), diry = std::sin(ang);
    int hx = -1, hy = -1;
    double t_wall =
        dda(scene, state.x, state.y, dirx, diry, kMaxRayRange, &hx, &hy);

    // Nearest object disc along the ray, if closer than the wall.
    const ObjectInstance* hit_obj = nullptr;
    double t_obj = kInfDistance;
    for (const auto& obj : scene.objects) {
      const double ox = obj.x - state.x, oy = obj.y - state.y;
      const double b = ox * dirx + oy * diry;
      const double disc =
          b * b - (ox * ox + oy * oy - kObjectRadius * kObjectRadius);
      if (disc < 0) continue;
      const double t = b - std::sqrt(disc);
      if (t > 1e-9 && t < t_obj) {
        t_obj = t;
        hit_obj = &obj;
      }
    }

    double d, hue, sat;
    if (hit_obj && t_obj < t_wall) {
      d = t_obj;
      // Category sets the base hue; the instance tint keeps duplicates
      // distinguishable.
      hue = static_cast<double>(hit_obj->category) / kNumCategories +
            0.06 * (hit_obj->hue - 0.5);
      sat = 0.95;
    } else if (std::isfinite(t_wall)) {
      d = t_wall;
      hue = scene.wall_hue[static_cast<std::size_t>(hy) * scene.width + hx];
      sat = 0.6;
    } else {
      for (int row = 0; row < height; ++row) {
        const double v = row < height / 2 ? kCeiling : kFloor;
        for (int c = 0; c < 3; ++c) put(c, row, j, v);
      }
      continue;
    }
    const double shade = 1.0 / (1.0 + d);
    double r, g, b;
    hsv_to_rgb(hue, sat, shade, &r, &g, &b);
    const int span = static_cast<int>(std::clamp<long>(
        std::lround(height / std::max(d, 1e-6)), 1, height));
    const int top = (height - span) / 2;
    for (int row = 0; row < height; ++row) {
      if (row >= top && row < top + span) {
        put(0, row, j, r);
        put(1, row, j, g);
        put(2, row, j, b);
      } else {
        const double v = row < top ? kCeiling : kFloor;
        for (int c = 0; c < 3; ++c) put(c, row, j, v);
      }
    }
  }
  return img;
}

double geodesic_distance(const Scene& scene, double x0, double y0, double x1,
                         double y1) {
  const auto from = checked_cell(scene, x0, y0, "from");
  const auto to = checked_cell(scene, x1, y1, "to");
  if (from == to) return 0.0;
  return dijkstra(scene, from, to, 0.0).dist;
}

std::vector<std::pair<int, int>> geodesic_path(const Scene& scene, double x0,
                                               double y0, double x1,
                                               double y1) {
  const auto from = checked_cell(scene, x0, y0, "from");
  const auto to = checked_cell(scene, x1, y1, "to");
  if (from == to) return {from};
  return dijkstra(scene, from, to, 0.0).cells;
}

EpisodeSpec sample_episode(const Scene& scene, Rng& rng, bool objectnav,
                           const EpisodeSamplerConfig& cfg) {
  std::vector<std::pair<int, int>> clear_cells;
  for (int cy = 1; cy < scene.height - 1; ++cy)
    for (int cx = 1; cx < scene.width - 1; ++cx)
      if (!scene.occupied(cx, cy) && !near_wall(scene, cx, cy))
        clear_cells.push_back({cx, cy});
  NAV_CHECK_CONFIG(!clear_cells.empty(), "scene has no clear cells");

  for (int attempt = 0; attempt < cfg.max_tries; ++attempt) {
    const auto [sx, sy] = clear_cells[rng.uniform_int(
        0, static_cast<int>(clear_cells.size()) - 1)];
    EpisodeSpec ep;
    ep.scene_seed = scene.seed;
    ep.max_steps = cfg.max_steps;
    ep.start.x = cell_center(scene, sx);
    ep.start.y = cell_center(scene, sy);
    ep.start.heading = wrap_angle(rng.uniform() * 2.0 * kPi);
    if (objectnav) {
      ep.goal_category = rng.uniform_int(0, kNumCategories - 1);
      double best = kInfDistance;
      for (const auto& obj : scene.objects) {
        if (obj.category != ep.goal_category) continue;
        const double g =
            geodesic_distance(scene, ep.start.x, ep.start.y, obj.x, obj.y);
        if (g < best) {
          best = g;
          ep.goal.x = obj.x;
          ep.goal.y = obj.y;
        }
      }
      ep.goal.heading = 0.0;
      ep.geodesic_start_to_goal = best;
    } else {
      const auto [gx, gy] = clear_cells[rng.uniform_int(
          0, static_cast<int>(clear_cells.size()) - 1)];
      if (gx == sx && gy == sy) continue;
      ep.goal.x = cell_center(scene, gx);
      ep.goal.y = cell_center(scene, gy);
      ep.goal.heading = wrap_angle(rng.uniform() * 2.0 * kPi);
      ep.geodesic_start_to_goal =
          geodesic_distance(scene, ep.start.x, ep.start.y, ep.goal.x, ep.goal.y);
    }
    if (std::isfinite(ep.geodesic_start_to_goal) &&
        ep.geodesic_start_to_goal >= cfg.min_geodesic &&
        ep.geodesic_start_to_goal <= cfg.max_geodesic)
      return ep;
  }
  throw ConfigError("could not sample an episode in the geodesic band");
}

double goal_distance(const Scene& scene, const EpisodeSpec& ep, double x,
                     double y) {
  if (!ep.is_objectnav()) return std::hypot(ep.goal.x - x, ep.goal.y - y);
  const ObjectInstance* obj = nearest_instance(scene, ep.goal_category, x, y);
  NAV_CHECK_CONFIG(obj != nullptr, "scene has no instance of the goal category");
  return std::hypot(obj->x - x, obj->y - y);
}

double goal_heading_error(const EpisodeSpec& ep, double heading) {
  if (ep.is_objectnav()) return 0.0;
  return angle_diff(heading, ep.goal.heading);
}

StepRecord make_record(const Scene& scene, const EpisodeSpec& ep,
                       const AgentState& state, Action action,
                       bool collision) {
  StepRecord rec;
  rec.state = state;
  rec.action = action;
  rec.collision = collision;
  rec.d = goal_distance(scene, ep, state.x, state.y);
  rec.theta = goal_heading_error(ep, state.heading);
  if (ep.is_objectnav()) {
    const ObjectInstance* obj =
        nearest_instance(scene, ep.goal_category, state.x, state.y);
    rec.goal_visible =
        obj && line_of_sight(scene, state.x, state.y, obj->x, obj->y);
  } else {
    rec.goal_visible =
        line_of_sight(scene, state.x, state.y, ep.goal.x, ep.goal.y);
  }
  return rec;
}

std::pair<bool, bool> imagenav_success(const TrajectoryRecord& traj,
                                       double r_g, double theta_g) {
  if (!traj.stop_called || traj.steps.empty()) return {false, false};
  const StepRecord& last = traj.steps.back();
  const bool success = last.d < r_g;
  return {success, success && last.theta < theta_g};
}

bool objectnav_success(const TrajectoryRecord& traj, const Scene& scene,
                       int goal_category) {
  if (!traj.stop_called || traj.steps.empty()) return false;
  const AgentState& fin = traj.steps.back().state;
  for (const auto& obj : scene.objects) {
    if (obj.category != goal_category) continue;
    if (std::hypot(obj.x - fin.x, obj.y - fin.y) >= 1.0) continue;
    if (line_of_sight(scene, fin.x, fin.y, obj.x, obj.y)) return true;
  }
  return false;
}

TrajectoryRecord oracle_demonstration(const Scene& scene,
                                      const EpisodeSpec& episode) {
  constexpr double kAlign = kPi / 12.0;  // 15 degrees
  constexpr double kStopDist = 0.2;
  constexpr double kObjectStopDist = 0.8;

  double goal_x = episode.goal.x, goal_y = episode.goal.y;
  if (episode.is_objectnav()) {
    // Head for the instance with the shortest path, not the closest crow-fly.
    double best = kInfDistance;
    for (const auto& obj : scene.objects) {
      if (obj.category != episode.goal_category) continue;
      const auto from = cell_of(scene, episode.start.x, episode.start.y);
      const auto to = cell_of(scene, obj.x, obj.y);
      const double g = dijkstra(scene, from, to, 0.0).dist;
      if (g < best) {
        best = g;
        goal_x = obj.x;
        goal_y = obj.y;
      }
    }
    NAV_CHECK_CONFIG(std::isfinite(best), "no reachable goal instance");
  }

  // A wall penalty keeps the followed path off corridor edges and corner
  // cells; reported metrics still use the pure geodesic.
  const auto path = dijkstra(scene, cell_of(scene, episode.start.x, episode.start.y),
                             cell_of(scene, goal_x, goal_y),
                             2.0 * scene.cell_size);
  NAV_CHECK_CONFIG(!path.cells.empty() || std::isfinite(path.dist),
                   "oracle: goal unreachable from start");
  std::vector<std::pair<double, double>> waypoints;
  for (const auto& [cx, cy] : path.cells)
    waypoints.push_back({cell_center(scene, cx), cell_center(scene, cy)});
  waypoints.push_back({goal_x, goal_y});

  // Pure pursuit along the cell polyline: project the agent onto the path,
  // aim at a carrot a short arc ahead. The short lookahead keeps cross-track
  // drift bounded, which matters in 0.375 m doorways where a far lookahead
  // lets the 15-degree heading slack walk the agent into a jamb.
  constexpr double kLookahead = 0.3;

  TrajectoryRecord traj;
  traj.episode = episode;
  AgentState state = episode.start;
  traj.initial = make_record(scene, episode, state, Action::kStop, false);
  std::size_t prog = 0;  // current polyline vertex (monotonic)
  int wedged = 0;
  while (static_cast<int>(traj.steps.size()) < episode.max_steps) {
    const double d_goal = goal_distance(scene, episode, state.x, state.y);
    const bool done =
        episode.is_objectnav()
            ? (d_goal <= kObjectStopDist &&
               line_of_sight(scene, state.x, state.y, goal_x, goal_y))
            : d_goal <= kStopDist;
    if (done) {
      traj.steps.push_back(
          make_record(scene, episode, state, Action::kStop, false));
      traj.stop_called = true;
      break;
    }
    // Advance the projection within a small forward window; the window stops
    // it from hopping across a folded-back stretch of path.
    const std::size_t hi = std::min(prog + 8, waypoints.size() - 1);
    double best_d = kInfDistance;
    for (std::size_t i = prog; i <= hi; ++i) {
      const double di = std::hypot(waypoints[i].first - state.x,
                                   waypoints[i].second - state.y);
      if (di < best_d - 1e-12) {
        best_d = di;
        prog = i;
      }
    }
    std::size_t carrot = prog;
    for (double acc = 0.0; carrot + 1 < waypoints.size() && acc < kLookahead;
         ++carrot)
      acc += std::hypot(waypoints[carrot + 1].first - waypoints[carrot].first,
                        waypoints[carrot + 1].second - waypoints[carrot].second);
    const double bearing = std::atan2(waypoints[carrot].second - state.y,
                                      waypoints[carrot].first - state.x);
    const double err = std::remainder(bearing - state.heading, 2.0 * kPi);
    const auto forward_free = [&](double heading) {
      AgentState probe = state;
      probe.heading = heading;
      return !step(scene, probe, Action::kMoveForward).second;
    };
    Action act;
    if (std::fabs(err) <= kAlign && forward_free(state.heading)) {
      act = Action::kMoveForward;
    } else {
      // Aligned move unavailable: turn toward the reachable heading closest
      // to the bearing whose forward move is actually free (simulated, so a
      // corner poking into the lane cannot pin the agent).
      constexpr int kNoCandidate = 100;
      int best_k = kNoCandidate;
      double best_err = kInfDistance;
      for (int k = -6; k <= 6; ++k) {
        const double hk = state.heading + k * kTurnStep;
        const double ek = std::fabs(std::remainder(bearing - hk, 2.0 * kPi));
        if (ek > 1.75) continue;  // no progress beyond ~100 degrees off
        if (!forward_free(hk)) continue;
        if (ek < best_err - 1e-12) {
          best_err = ek;
          best_k = k;
        }
      }
      if (best_k == kNoCandidate) {
        // Penned in; spin one way only (alternating directions livelocks).
        act = Action::kTurnLeft;
        NAV_CHECK_CONFIG(++wedged < 64, "oracle wedged against geometry");
      } else if (best_k == 0) {
        act = Action::kMoveForward;
      } else {
        act = best_k > 0 ? Action::kTurnLeft : Action::kTurnRight;
      }
    }
    auto [next, collision] = step(scene, state, act);
    state = next;
    traj.steps.push_back(make_record(scene, episode, state, act, collision));
  }
  NAV_CHECK_CONFIG(traj.stop_called, "oracle exceeded the step budget");
  return traj;
}

TrajectoryRecord replay_actions(const Scene& scene, const EpisodeSpec& episode,
                                const std::vector<Action>& actions) {
  TrajectoryRecord traj;
  traj.episode = episode;
  AgentState state = episode.start;
  traj.initial = make_record(scene, episode, state, Action::kStop, false);
  for (const Action a : actions) {
    if (static_cast<int>(traj.steps.size()) >= episode.max_steps) break;
    auto [next, collision] = step(scene, state, a);
    state = next;
    traj.steps.push_back(make_record(scene, episode, state, a, collision));
    if (a == Action::kStop) {
      traj.stop_called = true;
      break;
    }
  }
  return traj;
}

void write_demos(const std::string& path, const std::vector<Demo>& demos) {
  std::ofstream out(path);
  NAV_CHECK_IO(out.good(), "cannot open " + path + " for writing");
  for (const auto& demo : demos) {
    json j;
    j["v"] = 1;
    j["scene_seed"] = demo.episode.scene_seed;
    j["start"] = {demo.episode.start.x, demo.episode.start.y,
                  demo.episode.start.heading};
    j["goal"] = {demo.episode.goal.x, demo.episode.goal.y,
                 demo.episode.goal.heading};
    j["goal_category"] = demo.episode.goal_category;
    j["max_steps"] = demo.episode.max_steps;
    j["geodesic"] = demo.episode.geodesic_start_to_goal;
    std::vector<int> acts;
    for (Action a : demo.actions) acts.push_back(static_cast<int>(a));
    j["actions"] = acts;
    out << j.dump() << "\n";
  }
  NAV_CHECK_IO(out.good(), "failed writing " + path);
}

std::vector<Demo> read_demos(const std::string& path) {
  std::ifstream in(path);
  NAV_CHECK_IO(in.good(), "cannot open " + path);
  std::vector<Demo> demos;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw IoError(path + ":" + std::to_string(line_no) +
                    ": bad demo record: " + e.what());
    }
    try {
      NAV_CHECK_IO(j.at("v").get<int>() == 1,
                   path + ":" + std::to_string(line_no) +
                       ": unsupported demo record version");
      Demo d;
      d.episode.scene_seed = j.at("scene_seed").get<std::uint64_t>();
      const auto& st = j.at("start");
      d.episode.start = {st.at(0).get<double>(), st.at(1).get<double>(),
                         st.at(2).get<double>()};
      const auto& gl = j.at("goal");
      d.episode.goal = {gl.at(0).get<double>(), gl.at(1).get<double>(),
                        gl.at(2).get<double>()};
      d.episode.goal_category = j.at("goal_category").get<int>();
      d.episode.max_steps = j.at("max_steps").get<int>();
      d.episode.geodesic_start_to_goal = j.at("geodesic").get<double>();
      for (const auto& a : j.at("actions")) {
        const int v = a.get<int>();
        NAV_CHECK_IO(v >= 0 && v < kNumActions,
                     path + ":" + std::to_string(line_no) +
                         ": action id out of range");
        d.actions.push_back(static_cast<Action>(v));
      }
      demos.push_back(std::move(d));
    } catch (const json::exception& e) {
      throw IoError(path + ":" + std::to_string(line_no) +
                    ": bad demo record: " + e.what());
    }
  }
  return demos;
}

}  // namespace nav::sim
