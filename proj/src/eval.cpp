#include "nav/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <exception>
#include <map>
#include <mutex>
#include <thread>
#include <utility>

#include "nav/ops.hpp"
#include "nav/train.hpp"

namespace nav::eval {

using nlohmann::json;

// ---- metrics ----

double spl(std::span<const SplSample> episodes) {
  NAV_CHECK_CONFIG(!episodes.empty(), "spl: empty episode list");
  double sum = 0.0;
  for (const SplSample& e : episodes) {
    NAV_CHECK_CONFIG(e.geodesic > 0.0, "spl: geodesic must be positive");
    NAV_CHECK_CONFIG(e.path_length >= 0.0, "spl: negative path length");
    if (e.success) sum += e.geodesic / std::max(e.path_length, e.geodesic);
  }
  return sum / static_cast<double>(episodes.size());
}

double path_length(const sim::TrajectoryRecord& traj) {
  double total = 0.0;
  const sim::AgentState* prev = &traj.initial.state;
  for (const sim::StepRecord& s : traj.steps) {
    total += std::hypot(s.state.x - prev->x, s.state.y - prev->y);
    prev = &s.state;
  }
  return total;
}

// ---- failure taxonomy ----

std::string failure_name(FailureCategory c) {
  switch (c) {
    case FailureCategory::kSuccess: return "success";
    case FailureCategory::kNearlyReached: return "nearly_reached";
    case FailureCategory::kSlightlyFar: return "slightly_far";
    case FailureCategory::kDidntStop: return "didnt_stop";
    case FailureCategory::kExplorationFailure: return "exploration_failure";
    case FailureCategory::kUnknown: return "unknown";
  }
  throw ConfigError("failure_name: bad category");
}

FailureCategory failure_from(const std::string& name) {
  for (int i = 0; i < kNumFailureCategories; ++i) {
    const auto c = static_cast<FailureCategory>(i);
    if (failure_name(c) == name) return c;
  }
  throw ConfigError("unknown failure category: " + name);
}

namespace {

/// True when at least kLoopFraction of the recorded states sit inside a
/// kLoopRadius disk around the most-visited kModalCellSize cell (ties
/// resolve to the smallest cell index, so the verdict is deterministic).
bool loops_in_place(const sim::TrajectoryRecord& traj) {
  std::vector<std::pair<double, double>> pts;
  pts.reserve(traj.steps.size() + 1);
  pts.emplace_back(traj.initial.state.x, traj.initial.state.y);
  for (const sim::StepRecord& s : traj.steps)
    pts.emplace_back(s.state.x, s.state.y);

  std::map<std::pair<int, int>, int> counts;
  for (const auto& [x, y] : pts)
    ++counts[{static_cast<int>(std::floor(x / kModalCellSize)),
              static_cast<int>(std::floor(y / kModalCellSize))}];
  std::pair<int, int> modal = counts.begin()->first;
  int best = 0;
  for (const auto& [cell, n] : counts)
    if (n > best) {
      best = n;
      modal = cell;
    }
  const double cx = (modal.first + 0.5) * kModalCellSize;
  const double cy = (modal.second + 0.5) * kModalCellSize;
  std::size_t inside = 0;
  for (const auto& [x, y] : pts)
    if (std::hypot(x - cx, y - cy) <= kLoopRadius) ++inside;
  return static_cast<double>(inside) >=
         kLoopFraction * static_cast<double>(pts.size());
}

}  // namespace

FailureCategory classify_failure(const sim::TrajectoryRecord& traj,
                                 const reward::RewardConfig& cfg,
                                 std::optional<bool> success) {
  cfg.validate();
  const bool terminated =
      traj.stop_called ||
      static_cast<int>(traj.steps.size()) >= traj.episode.max_steps;
  NAV_CHECK_CONFIG(terminated, "classify_failure: unterminated trajectory");

  const sim::StepRecord& last =
      traj.steps.empty() ? traj.initial : traj.steps.back();
  const bool ok =
      success.has_value()
          ? *success
          : traj.stop_called && last.d < cfg.r_g &&
                (!traj.episode.is_objectnav() || last.goal_visible);
  if (ok) return FailureCategory::kSuccess;

  if (traj.stop_called && last.d >= kNearLow && last.d <= kNearHigh &&
      last.theta < kGazeAngle)
    return FailureCategory::kNearlyReached;
  if (traj.stop_called && last.d > kNearHigh && last.theta < kGazeAngle)
    return FailureCategory::kSlightlyFar;
  if (!traj.stop_called) {
    auto close_sighting = [&](const sim::StepRecord& s) {
      return s.goal_visible && s.d < 2.0 * cfg.r_g;
    };
    if (close_sighting(traj.initial) ||
        std::any_of(traj.steps.begin(), traj.steps.end(), close_sighting))
      return FailureCategory::kDidntStop;
  }
  if (traj.stop_called && last.d > kFarStop)
    return FailureCategory::kExplorationFailure;
  if (loops_in_place(traj)) return FailureCategory::kExplorationFailure;
  return FailureCategory::kUnknown;
}

// ---- agents ----

void OracleAgent::begin_episode(const sim::Scene& scene,
                                const sim::EpisodeSpec& ep) {
  const sim::TrajectoryRecord demo = sim::oracle_demonstration(scene, ep);
  actions_.clear();
  actions_.reserve(demo.steps.size());
  for (const sim::StepRecord& s : demo.steps) actions_.push_back(s.action);
  next_ = 0;
}

sim::Action OracleAgent::act(const sim::Scene&, const sim::EpisodeSpec&,
                             const sim::AgentState&, sim::Action, bool) {
  if (next_ >= actions_.size()) return sim::Action::kStop;
  return actions_[next_++];
}

namespace {

// Hash of (seed, episode identity) so per-episode randomness does not depend
// on which worker runs which episode.
std::uint64_t episode_hash(std::uint64_t seed, const sim::EpisodeSpec& ep) {
  std::uint64_t h = splitmix64(seed ^ splitmix64(ep.scene_seed));
  const auto mix = [&h](double v) {
    std::uint64_t bits = 0;
    std::memcpy(&bits, &v, sizeof bits);
    h = splitmix64(h ^ bits);
  };
  mix(ep.start.x);
  mix(ep.start.y);
  mix(ep.start.heading);
  mix(ep.goal.x);
  mix(ep.goal.y);
  mix(static_cast<double>(ep.goal_category));
  return h;
}

}  // namespace

void RandomAgent::begin_episode(const sim::Scene&,
                                const sim::EpisodeSpec& ep) {
  rng_ = Rng(episode_hash(seed_, ep));
}

sim::Action RandomAgent::act(const sim::Scene&, const sim::EpisodeSpec&,
                             const sim::AgentState&, sim::Action, bool) {
  return static_cast<sim::Action>(rng_.uniform_int(0, sim::kNumActions - 1));
}

PolicyAgent::PolicyAgent(const policy::PolicyNet<float>& net, int image_size,
                         std::optional<policy::AugmentConfig> aug,
                         std::uint64_t aug_seed)
    : net_(&net),
      image_size_(image_size),
      aug_(std::move(aug)),
      aug_seed_(aug_seed),
      state_(net.initial_state(1)) {
  if (net.cfg.obs_mode == policy::ObsMode::kImage) {
    if (image_size_ == 0) image_size_ = net.cfg.encoder.image_size;
    NAV_CHECK_CONFIG(image_size_ == net.cfg.encoder.image_size,
                     "policy agent: render size != encoder image size");
  }
  if (aug_) aug_->validate();
}

void PolicyAgent::begin_episode(const sim::Scene& scene,
                                const sim::EpisodeSpec& ep) {
  state_ = net_->initial_state(1);
  if (aug_ && aug_->apply_at_eval) {
    Rng aug_rng(episode_hash(aug_seed_, ep));
    aug_params_ = policy::draw_augment_params(*aug_, aug_rng);
  }
  goal_image_ = Tensor<float>();
  if (net_->cfg.obs_mode == policy::ObsMode::kImage) {
    if (net_->cfg.goal_mode == policy::GoalMode::kImage) {
      NAV_CHECK_CONFIG(!ep.is_objectnav(),
                       "policy agent: image-goal policy on an ObjectNav episode");
      goal_image_ =
          reshape(sim::render_observation(scene, ep.goal, image_size_,
                                          image_size_),
                  {1, 3, image_size_, image_size_});
    } else {
      NAV_CHECK_CONFIG(ep.is_objectnav(),
                       "policy agent: category-goal policy on an ImageNav episode");
    }
  }
}

sim::Action PolicyAgent::act(const sim::Scene& scene,
                             const sim::EpisodeSpec& ep,
                             const sim::AgentState& state, sim::Action prev,
                             bool collided) {
  NoGradGuard no_grad;
  Tensor<float> feature;
  if (net_->cfg.obs_mode == policy::ObsMode::kCompass) {
    const auto c = train::compass_observation(scene, ep, state, collided);
    feature = net_->encode_compass(
        Tensor<float>::from({1, train::VecEnv::kCompassDim},
                            std::vector<float>(c.begin(), c.end())),
        {prev});
  } else {
    Tensor<float> obs =
        reshape(sim::render_observation(scene, state, image_size_, image_size_),
                {1, 3, image_size_, image_size_});
    if (aug_ && aug_->apply_at_eval) obs = policy::apply_augment(obs, aug_params_);
    if (net_->cfg.goal_mode == policy::GoalMode::kCategory)
      feature = net_->encode_observation(obs, std::vector<int>{ep.goal_category},
                                         {prev});
    else
      feature = net_->encode_observation(obs, goal_image_, {prev});
  }
  const auto out = net_->step(feature, state_.hc);
  state_.hc = out.hc;
  const float* logits = out.logits.data();
  int best = 0;
  for (int a = 1; a < sim::kNumActions; ++a)
    if (logits[a] > logits[best]) best = a;
  return static_cast<sim::Action>(best);
}

sim::TrajectoryRecord run_episode(const sim::Scene& scene,
                                  const sim::EpisodeSpec& ep, Agent& agent) {
  agent.begin_episode(scene, ep);
  sim::TrajectoryRecord traj;
  traj.episode = ep;
  sim::AgentState state = ep.start;
  traj.initial = sim::make_record(scene, ep, state, sim::Action::kStop, false);
  sim::Action prev = sim::Action::kStop;
  bool collided = false;
  while (static_cast<int>(traj.steps.size()) < ep.max_steps) {
    const sim::Action a = agent.act(scene, ep, state, prev, collided);
    auto [next, collision] = sim::step(scene, state, a);
    state = next;
    traj.steps.push_back(sim::make_record(scene, ep, state, a, collision));
    prev = a;
    collided = collision;
    if (a == sim::Action::kStop) {
      traj.stop_called = true;
      break;
    }
  }
  return traj;
}

// ---- evaluation ----

void EvalConfig::validate() const {
  NAV_CHECK_CONFIG(num_episodes >= 1, "eval: num_episodes must be >= 1");
  NAV_CHECK_CONFIG(episodes_per_scene >= 1,
                   "eval: episodes_per_scene must be >= 1");
  reward_cfg.validate();
}

namespace {

sim::Scene next_scene(std::uint64_t& seed) {
  for (int t = 0; t < 64; ++t) {
    const std::uint64_t s = seed++;
    try {
      return sim::generate_scene(s);
    } catch (const ConfigError&) {
    }
  }
  throw ConfigError("evaluate: no usable scene in 64 consecutive seeds");
}

}  // namespace

EpisodePlan plan_episodes(const EvalConfig& cfg) {
  cfg.validate();
  EpisodePlan plan;
  std::uint64_t sseed = cfg.scene_seed;
  plan.scenes.push_back(next_scene(sseed));
  for (int i = 0; i < cfg.num_episodes; ++i) {
    if (i > 0 && i % cfg.episodes_per_scene == 0)
      plan.scenes.push_back(next_scene(sseed));
    bool placed = false;
    for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
      Rng base(cfg.episode_seed +
               0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(attempt));
      Rng rng = base.fork(static_cast<std::uint64_t>(i));
      try {
        plan.episodes.push_back(
            sim::sample_episode(plan.scenes.back(), rng, cfg.objectnav,
                                cfg.sampler));
        placed = true;
      } catch (const ConfigError&) {
        plan.scenes.push_back(next_scene(sseed));
      }
    }
    NAV_CHECK_CONFIG(placed, "evaluate: could not sample an episode");
    plan.scene_of.push_back(static_cast<int>(plan.scenes.size()) - 1);
  }
  return plan;
}

namespace {

EvalRow run_one(Agent& agent, const sim::Scene& scene,
                const sim::EpisodeSpec& ep, int id, const EvalConfig& cfg) {
  const sim::TrajectoryRecord traj = run_episode(scene, ep, agent);
  EvalRow row;
  row.episode = id;
  row.scene_seed = scene.seed;
  if (ep.is_objectnav()) {
    row.success = sim::objectnav_success(traj, scene, ep.goal_category);
    row.angle_success = row.success;  // no goal pose to face
  } else {
    const auto [ok, angle_ok] =
        sim::imagenav_success(traj, cfg.reward_cfg.r_g, cfg.reward_cfg.theta_g);
    row.success = ok;
    row.angle_success = angle_ok;
  }
  row.geodesic = ep.geodesic_start_to_goal;
  row.path_length = path_length(traj);
  row.steps = static_cast<int>(traj.steps.size());
  row.spl = row.success
                ? row.geodesic / std::max(row.path_length, row.geodesic)
                : 0.0;
  row.failure = classify_failure(traj, cfg.reward_cfg, row.success);
  return row;
}

EvalReport reduce_rows(std::vector<EvalRow> rows) {
  EvalReport rep;
  rep.num_episodes = static_cast<int>(rows.size());
  for (const EvalRow& r : rows) {
    rep.success_rate += r.success ? 1.0 : 0.0;
    rep.angle_success_rate += r.angle_success ? 1.0 : 0.0;
    rep.spl += r.spl;
  }
  if (rep.num_episodes > 0) {
    rep.success_rate /= rep.num_episodes;
    rep.angle_success_rate /= rep.num_episodes;
    rep.spl /= rep.num_episodes;
  }
  rep.rows = std::move(rows);
  return rep;
}

}  // namespace

EvalReport evaluate(Agent& agent, const EvalConfig& cfg) {
  const EpisodePlan plan = plan_episodes(cfg);
  std::vector<EvalRow> rows(plan.episodes.size());
  for (std::size_t i = 0; i < plan.episodes.size(); ++i)
    rows[i] = run_one(agent, plan.scenes[static_cast<std::size_t>(
                                 plan.scene_of[i])],
                      plan.episodes[i], static_cast<int>(i), cfg);
  return reduce_rows(std::move(rows));
}

EvalReport evaluate(const AgentFactory& make_agent, const EvalConfig& cfg,
                    int threads) {
  NAV_CHECK_CONFIG(threads >= 1, "evaluate: threads must be >= 1");
  const EpisodePlan plan = plan_episodes(cfg);
  const int n = static_cast<int>(plan.episodes.size());
  std::vector<EvalRow> rows(static_cast<std::size_t>(n));
  std::atomic<int> cursor{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto worker = [&] {
    try {
      const std::unique_ptr<Agent> agent = make_agent();
      for (;;) {
        const int i = cursor.fetch_add(1);
        if (i >= n) break;
        rows[static_cast<std::size_t>(i)] =
            run_one(*agent, plan.scenes[static_cast<std::size_t>(
                                plan.scene_of[static_cast<std::size_t>(i)])],
                    plan.episodes[static_cast<std::size_t>(i)], i, cfg);
      }
    } catch (...) {
      const std::lock_guard<std::mutex> lock(failure_mu);
      if (!failure) failure = std::current_exception();
      cursor.store(n);  // drain remaining work
    }
  };
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return reduce_rows(std::move(rows));
}

// ---- report serialization ----

std::map<FailureCategory, int> EvalReport::failure_counts() const {
  std::map<FailureCategory, int> counts;
  for (int i = 0; i < kNumFailureCategories; ++i)
    counts[static_cast<FailureCategory>(i)] = 0;
  for (const EvalRow& r : rows) ++counts[r.failure];
  return counts;
}

json EvalReport::to_json() const {
  json rows_j = json::array();
  for (const EvalRow& r : rows) {
    rows_j.push_back({{"episode", r.episode},
                      {"scene_seed", r.scene_seed},
                      {"success", r.success},
                      {"angle_success", r.angle_success},
                      {"spl", r.spl},
                      {"geodesic", r.geodesic},
                      {"path_length", r.path_length},
                      {"steps", r.steps},
                      {"failure", failure_name(r.failure)}});
  }
  json counts = json::object();
  for (const auto& [cat, n] : failure_counts()) counts[failure_name(cat)] = n;
  return json{{"format", "nav-eval-report"},
              {"version", 1},
              {"num_episodes", num_episodes},
              {"success_rate", success_rate},
              {"spl", spl},
              {"angle_success_rate", angle_success_rate},
              {"failure_counts", counts},
              {"rows", rows_j}};
}

EvalReport EvalReport::from_json(const json& j) {
  try {
    NAV_CHECK_IO(j.at("format").get<std::string>() == "nav-eval-report" &&
                     j.at("version").get<int>() == 1,
                 "not a v1 nav-eval-report document");
    EvalReport rep;
    rep.num_episodes = j.at("num_episodes").get<int>();
    rep.success_rate = j.at("success_rate").get<double>();
    rep.spl = j.at("spl").get<double>();
    rep.angle_success_rate = j.at("angle_success_rate").get<double>();
    for (const json& r : j.at("rows")) {
      EvalRow row;
      row.episode = r.at("episode").get<int>();
      row.scene_seed = r.at("scene_seed").get<std::uint64_t>();
      row.success = r.at("success").get<bool>();
      row.angle_success = r.at("angle_success").get<bool>();
      row.spl = r.at("spl").get<double>();
      row.geodesic = r.at("geodesic").get<double>();
      row.path_length = r.at("path_length").get<double>();
      row.steps = r.at("steps").get<int>();
      row.failure = failure_from(r.at("failure").get<std::string>());
      rep.rows.push_back(row);
    }
    return rep;
  } catch (const json::exception& e) {
    throw IoError(std::string("bad eval report: ") + e.what());
  }
}

std::string EvalReport::to_csv() const {
  std::string out =
      "episode,scene_seed,success,angle_success,spl,geodesic,path_length,"
      "steps,failure\n";
  for (const EvalRow& r : rows) {
    out += std::to_string(r.episode) + ',' + std::to_string(r.scene_seed) +
           ',' + (r.success ? '1' : '0') + ',' + (r.angle_success ? '1' : '0') +
           ',' + json(r.spl).dump() + ',' + json(r.geodesic).dump() + ',' +
           json(r.path_length).dump() + ',' + std::to_string(r.steps) + ',' +
           failure_name(r.failure) + '\n';
  }
  return out;
}

// ---- plots ----

namespace {

std::string fmt1(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", v);
  return buf;
}

std::string square(double cx, double cy, double side, const std::string& fill) {
  return "  <rect x=\"" + fmt1(cx - side / 2) + "\" y=\"" + fmt1(cy - side / 2) +
         "\" width=\"" + fmt1(side) + "\" height=\"" + fmt1(side) +
         "\" fill=\"" + fill + "\" stroke=\"#333333\" stroke-width=\"1\"/>\n";
}

}  // namespace

std::string render_topdown(const sim::Scene& scene,
                           const sim::TrajectoryRecord& traj) {
  constexpr double kPxPerM = 40.0;
  const double cell = scene.cell_size * kPxPerM;
  const double w = scene.width * cell;
  const double h = scene.height * cell;
  const auto X = [&](double x) { return x * kPxPerM; };
  const auto Y = [&](double y) { return h - y * kPxPerM; };

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt1(w) +
         "\" height=\"" + fmt1(h) + "\" viewBox=\"0 0 " + fmt1(w) + " " +
         fmt1(h) + "\">\n";
  svg += "  <rect width=\"" + fmt1(w) + "\" height=\"" + fmt1(h) +
         "\" fill=\"#f7f6f2\"/>\n";

  // Occupancy outline: solid cells that border free space.
  svg += "  <g fill=\"#59596b\">\n";
  for (int cy = 0; cy < scene.height; ++cy)
    for (int cx = 0; cx < scene.width; ++cx) {
      if (!scene.occupied(cx, cy)) continue;
      const bool edge = !scene.occupied(cx - 1, cy) ||
                        !scene.occupied(cx + 1, cy) ||
                        !scene.occupied(cx, cy - 1) ||
                        !scene.occupied(cx, cy + 1);
      if (!edge) continue;
      svg += "    <rect x=\"" + fmt1(cx * cell) + "\" y=\"" +
             fmt1(h - (cy + 1) * cell) + "\" width=\"" + fmt1(cell) +
             "\" height=\"" + fmt1(cell) + "\"/>\n";
    }
  svg += "  </g>\n";

  const sim::EpisodeSpec& ep = traj.episode;
  const double radius_px = sim::kSuccessRadius * kPxPerM;
  const auto circle = [&](double x, double y) {
    svg += "  <circle cx=\"" + fmt1(X(x)) + "\" cy=\"" + fmt1(Y(y)) +
           "\" r=\"" + fmt1(radius_px) +
           "\" fill=\"none\" stroke=\"#9a9aa6\" stroke-width=\"1.5\" "
           "stroke-dasharray=\"3 3\"/>\n";
  };
  if (ep.is_objectnav()) {
    for (const sim::ObjectInstance& obj : scene.objects)
      if (obj.category == ep.goal_category) circle(obj.x, obj.y);
  } else {
    circle(ep.goal.x, ep.goal.y);
  }

  if (!traj.steps.empty()) {
    std::string points = fmt1(X(traj.initial.state.x)) + "," +
                         fmt1(Y(traj.initial.state.y));
    for (const sim::StepRecord& s : traj.steps)
      points += " " + fmt1(X(s.state.x)) + "," + fmt1(Y(s.state.y));
    svg += "  <polyline points=\"" + points +
           "\" fill=\"none\" stroke=\"#ff8c00\" stroke-width=\"2\" "
           "stroke-dasharray=\"6 4\"/>\n";
  }

  svg += square(X(ep.start.x), Y(ep.start.y), 0.3 * kPxPerM, "#3cb043");
  if (ep.is_objectnav()) {
    for (const sim::ObjectInstance& obj : scene.objects)
      if (obj.category == ep.goal_category)
        svg += square(X(obj.x), Y(obj.y), 0.3 * kPxPerM, "#ffcba4");
  } else {
    svg += square(X(ep.goal.x), Y(ep.goal.y), 0.3 * kPxPerM, "#ffcba4");
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace nav::eval
