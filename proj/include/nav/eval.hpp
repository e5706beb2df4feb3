#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "nav/common.hpp"
#include "nav/policy.hpp"
#include "nav/reward.hpp"
#include "nav/sim.hpp"

namespace nav::eval {

// ---- metrics ----

struct SplSample {
  bool success = false;
  double geodesic = 0;     // l_i, meters, > 0
  double path_length = 0;  // p_i, meters, >= 0
};

/// (1/N) * sum_i success_i * l_i / max(p_i, l_i).
/// ConfigError when empty or any l_i <= 0 / p_i < 0.
double spl(std::span<const SplSample> episodes);

/// Meters walked: summed Euclidean distance over the recorded states.
double path_length(const sim::TrajectoryRecord& traj);

// ---- failure taxonomy ----

enum class FailureCategory : int {
  kSuccess = 0,
  kNearlyReached = 1,      // stopped just outside the radius, facing the goal
  kSlightlyFar = 2,        // stopped well outside, facing the goal
  kDidntStop = 3,          // saw the goal up close but never called STOP
  kExplorationFailure = 4, // looped in one small region, or stopped far away
  kUnknown = 5,
};
inline constexpr int kNumFailureCategories = 6;

std::string failure_name(FailureCategory c);
FailureCategory failure_from(const std::string& name);

/// Classifier geometry. The gaze cone is deliberately wider than the
/// success angle: "facing the goal" is a looser claim than angle-success.
inline constexpr double kGazeAngle = 45.0 * kPi / 180.0;
inline constexpr double kNearLow = 1.0;        // m
inline constexpr double kNearHigh = 1.5;       // m
inline constexpr double kFarStop = 3.0;        // m
inline constexpr double kLoopRadius = 2.0;     // m
inline constexpr double kLoopFraction = 0.5;
inline constexpr double kModalCellSize = 0.5;  // m

/// First-match classification of a terminated trajectory:
///   Success        success predicate holds (see below)
///   NearlyReached  stop, kNearLow <= d <= kNearHigh, theta < kGazeAngle
///   SlightlyFar    stop, d > kNearHigh, theta < kGazeAngle
///   DidntStop      no stop, some step had the goal visible at d < 2*r_g
///   Exploration    >= kLoopFraction of states inside a kLoopRadius disk
///                  around the modal kModalCellSize cell, or stop > kFarStop
///   Unknown        everything else
/// `success` overrides the built-in predicate (stop inside r_g, plus goal
/// visibility for ObjectNav) when the caller has scene access and can
/// evaluate the real one. ConfigError on an unterminated trajectory.
FailureCategory classify_failure(const sim::TrajectoryRecord& traj,
                                 const reward::RewardConfig& cfg,
                                 std::optional<bool> success = std::nullopt);

// ---- agents ----

/// One navigation episode, seen through a minimal act() interface so that
/// policies, oracles and baselines evaluate through identical plumbing.
class Agent {
 public:
  virtual ~Agent() = default;
  virtual void begin_episode(const sim::Scene& scene,
                             const sim::EpisodeSpec& ep) = 0;
  virtual sim::Action act(const sim::Scene& scene, const sim::EpisodeSpec& ep,
                          const sim::AgentState& state, sim::Action prev,
                          bool collided) = 0;
};

/// Replays the shortest-path demonstration.
class OracleAgent final : public Agent {
 public:
  void begin_episode(const sim::Scene& scene,
                     const sim::EpisodeSpec& ep) override;
  sim::Action act(const sim::Scene&, const sim::EpisodeSpec&,
                  const sim::AgentState&, sim::Action, bool) override;

 private:
  std::vector<sim::Action> actions_;
  std::size_t next_ = 0;
};

/// Uniform over all four actions; the SR floor for untrained baselines.
/// Reseeds per episode from (seed, episode identity) so results do not
/// depend on which worker runs which episode.
class RandomAgent final : public Agent {
 public:
  explicit RandomAgent(std::uint64_t seed) : seed_(seed), rng_(seed) {}
  void begin_episode(const sim::Scene&, const sim::EpisodeSpec& ep) override;
  sim::Action act(const sim::Scene&, const sim::EpisodeSpec&,
                  const sim::AgentState&, sim::Action, bool) override;

 private:
  std::uint64_t seed_;
  Rng rng_;
};

/// Calls STOP immediately.
class StopAgent final : public Agent {
 public:
  void begin_episode(const sim::Scene&, const sim::EpisodeSpec&) override {}
  sim::Action act(const sim::Scene&, const sim::EpisodeSpec&,
                  const sim::AgentState&, sim::Action, bool) override {
    return sim::Action::kStop;
  }
};

/// Greedy (argmax) rollout of a trained policy. Observations are built
/// exactly as during training. `image_size` 0 uses the encoder's size.
/// Augmentation (off by default, and skipped unless `apply_at_eval`)
/// draws one parameter set per episode from `aug_seed`.
class PolicyAgent final : public Agent {
 public:
  explicit PolicyAgent(const policy::PolicyNet<float>& net, int image_size = 0,
                       std::optional<policy::AugmentConfig> aug = std::nullopt,
                       std::uint64_t aug_seed = 0);
  void begin_episode(const sim::Scene& scene,
                     const sim::EpisodeSpec& ep) override;
  sim::Action act(const sim::Scene& scene, const sim::EpisodeSpec& ep,
                  const sim::AgentState& state, sim::Action prev,
                  bool collided) override;

 private:
  const policy::PolicyNet<float>* net_;
  int image_size_;
  std::optional<policy::AugmentConfig> aug_;
  std::uint64_t aug_seed_;  // augmentation draws reseed per episode
  policy::AugmentParams aug_params_;
  Tensor<float> goal_image_;  // cached per episode when the goal is an image
  policy::PolicyState<float> state_;
};

/// Runs one episode to STOP or the step limit and records the trajectory.
sim::TrajectoryRecord run_episode(const sim::Scene& scene,
                                  const sim::EpisodeSpec& ep, Agent& agent);

// ---- evaluation ----

struct EvalConfig {
  int num_episodes = 100;
  bool objectnav = false;
  std::uint64_t scene_seed = 1;
  std::uint64_t episode_seed = 5000;
  int episodes_per_scene = 4;
  sim::EpisodeSamplerConfig sampler;
  reward::RewardConfig reward_cfg;  // r_g / theta_g for success + classifier

  void validate() const;
};

struct EvalRow {
  int episode = 0;
  std::uint64_t scene_seed = 0;
  bool success = false;
  bool angle_success = false;
  double spl = 0;  // per-episode term s_i * l_i / max(p_i, l_i)
  double geodesic = 0;
  double path_length = 0;
  int steps = 0;
  FailureCategory failure = FailureCategory::kUnknown;
};

struct EvalReport {
  int num_episodes = 0;
  double success_rate = 0;
  double spl = 0;
  double angle_success_rate = 0;
  std::vector<EvalRow> rows;

  std::map<FailureCategory, int> failure_counts() const;
  nlohmann::json to_json() const;  // schema "nav-eval-report" v1
  static EvalReport from_json(const nlohmann::json& j);
  std::string to_csv() const;
};

/// The deterministic episode set an evaluation run visits: scenes come
/// from a seed stream, each hosting episodes_per_scene episodes; a scene
/// that cannot host an episode is abandoned for the next seed.
struct EpisodePlan {
  std::vector<sim::Scene> scenes;
  std::vector<int> scene_of;  // per episode, index into scenes
  std::vector<sim::EpisodeSpec> episodes;
};
EpisodePlan plan_episodes(const EvalConfig& cfg);

/// Sequential evaluation with a single (stateful) agent.
EvalReport evaluate(Agent& agent, const EvalConfig& cfg);

/// Episodes are independent; with threads > 1 each worker gets its own
/// agent from the factory and results reduce into one report. The report
/// is identical for every thread count.
using AgentFactory = std::function<std::unique_ptr<Agent>()>;
EvalReport evaluate(const AgentFactory& make_agent, const EvalConfig& cfg,
                    int threads);

// ---- plots ----

/// Top-down SVG: occupancy outline, goal-radius circle, dashed orange
/// path, green start square, peach goal square.
std::string render_topdown(const sim::Scene& scene,
                           const sim::TrajectoryRecord& traj);

}  // namespace nav::eval
