#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "nav/optim.hpp"
#include "nav/policy.hpp"
#include "nav/reward.hpp"
#include "nav/sim.hpp"
#include "nav/vit.hpp"

namespace nav::train {

enum class Task { kImageNav = 0, kObjectNav = 1 };
enum class RewardKind { kZer = 0, kPotential = 1 };

std::string task_name(Task t);
Task task_from(const std::string& name);
std::string reward_kind_name(RewardKind k);
RewardKind reward_kind_from(const std::string& name);

reward::RewardFn reward_fn(RewardKind k);

// ---- vectorized environment ----

struct VecEnvConfig {
  int num_envs = 8;
  Task task = Task::kImageNav;
  policy::ObsMode obs_mode = policy::ObsMode::kImage;
  int image_size = 64;
  std::uint64_t scene_seed = 1;
  std::uint64_t episode_seed = 1000;
  RewardKind reward = RewardKind::kPotential;
  reward::RewardConfig reward_cfg;
  sim::EpisodeSamplerConfig sampler;

  void validate() const;
};

/// Terminal summary of one finished episode.
struct EpisodeResult {
  bool success = false;
  double geodesic = 0;     // shortest start-to-goal path, meters
  double path_length = 0;  // agent path, meters
  int steps = 0;
  bool timeout = false;

  double spl_term() const {
    return success ? geodesic / std::max(path_length, geodesic) : 0.0;
  }
};

struct StepOutcome {
  double reward = 0;
  bool done = false;
  bool collision = false;
  std::optional<EpisodeResult> episode;  // present when done
};

/// Fixed bank of environments with automatic reset. Observations are either
/// rendered images [3,S,S] or a compass vector
/// [min(d,10)/10, sin(bearing), cos(bearing), collided-last-step].
class VecEnv {
 public:
  static constexpr int kCompassDim = 4;
  static constexpr double kCompassRange = 10.0;  // meters, distance cap

  explicit VecEnv(const VecEnvConfig& cfg);

  const VecEnvConfig& config() const { return cfg_; }
  int num_envs() const { return cfg_.num_envs; }
  Shape obs_shape() const;  // per-sample shape
  int obs_width() const;    // flattened per-sample size

  /// True until the first action of the current episode is taken.
  bool episode_is_fresh(int e) const;
  const sim::EpisodeSpec& episode(int e) const;
  const sim::Scene& scene(int e) const;
  const sim::AgentState& agent_state(int e) const;

  void write_obs(int e, float* out) const;
  void write_goal_obs(int e, float* out) const;  // ImageNav goal image
  int goal_category(int e) const;                // ObjectNav goal

  std::vector<StepOutcome> step(const std::vector<sim::Action>& actions);

 private:
  struct Env {
    sim::Scene scene;
    std::uint64_t scene_seed = 0;
    Rng rng{0};
    sim::EpisodeSpec ep;
    sim::AgentState state;
    int steps = 0;
    double path_length = 0;
    bool last_collision = false;
    Tensor<float> goal_image;  // cached ImageNav goal render
  };

  void reset_env(Env& env);
  bool stop_success(const Env& env) const;

  VecEnvConfig cfg_;
  reward::RewardFn reward_ = nullptr;
  std::vector<Env> envs_;
};

/// Compass channels [min(d,10)/10, sin(bearing), cos(bearing), collided];
/// the single source for compass observations (rollouts, BC replay, eval).
std::array<float, VecEnv::kCompassDim> compass_observation(
    const sim::Scene& scene, const sim::EpisodeSpec& ep,
    const sim::AgentState& state, bool collided);

// ---- rollout storage ----

/// Flat [t][e] storage for one on-policy rollout. All per-step slices use
/// index t * num_envs + e.
struct RolloutBuffer {
  int num_envs = 0;
  int len = 0;
  Shape obs_item_shape;
  std::int64_t obs_width = 0;
  bool has_goal_obs = false;
  bool has_goal_categories = false;

  std::vector<float> obs;                    // [len*num_envs*obs_width]
  std::vector<float> goal_obs;               // same layout as obs
  std::vector<int> goal_categories;          // [len*num_envs]
  std::vector<int> actions;                  // [len*num_envs]
  std::vector<int> prev_actions;             // [len*num_envs]
  std::vector<std::uint8_t> episode_starts;  // [len*num_envs]
  std::vector<std::uint8_t> dones;           // [len*num_envs]
  std::vector<double> log_probs;             // [len*num_envs]
  std::vector<double> values;                // [len*num_envs]
  std::vector<double> rewards;               // [len*num_envs]
  std::vector<float> initial_hc;             // [num_envs * 2*hidden]
  std::vector<double> bootstrap_values;      // [num_envs]

  std::vector<double> advantages;  // filled by attach_gae
  std::vector<double> returns;

  std::vector<EpisodeResult> finished;  // episodes completed this rollout

  std::size_t idx(int t, int e) const {
    return static_cast<std::size_t>(t) * num_envs + e;
  }
};

/// Samples `len` steps from every environment, carrying the recurrent state
/// across calls. Actions are drawn from the policy's categorical via `rng`.
RolloutBuffer collect_rollouts(VecEnv& env, const policy::PolicyNet<float>& net,
                               policy::PolicyState<float>& state, int len,
                               Rng& rng);

struct GaeResult {
  std::vector<double> advantages;  // [len*num_envs]
  std::vector<double> returns;     // advantages + values
};

/// delta_t = r_t + discount * V_{t+1} * (1 - done_t) - V_t
/// A_t     = delta_t + discount * lambda * (1 - done_t) * A_{t+1}
/// V_{len} comes from `bootstrap` (one value per environment).
GaeResult compute_gae(const std::vector<double>& rewards,
                      const std::vector<double>& values,
                      const std::vector<std::uint8_t>& dones,
                      const std::vector<double>& bootstrap, int num_envs,
                      int len, double discount, double lambda);

void attach_gae(RolloutBuffer& buffer, double discount, double lambda);

// ---- PPO ----

struct PpoConfig {
  int num_envs = 8;
  int rollout_length = 64;
  int ppo_epochs = 2;
  int minibatches = 2;
  double clip_epsilon = 0.2;
  double discount = 0.99;
  double gae_lambda = 0.95;
  double learning_rate = 2.5e-4;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
  double max_grad_norm = 0.5;

  void validate() const;
};

struct PpoStats {
  double policy_loss = 0;
  double value_loss = 0;
  double entropy = 0;
  double clip_fraction = 0;
  double grad_norm = 0;
  double approx_kl = 0;
};

/// Elementwise clipped surrogate: min(r*A, clamp(r, 1-eps, 1+eps)*A).
Tensor<float> ppo_surrogate(const Tensor<float>& ratio,
                            const Tensor<float>& advantage, double eps);

/// One PPO update over a collected buffer (advantages must be attached).
/// Minibatches split the environment axis into contiguous groups; the
/// recurrent state is replayed from initial_hc and zeroed at episode starts.
/// NumericError when a loss turns non-finite.
PpoStats ppo_update(const RolloutBuffer& buffer, policy::PolicyNet<float>& net,
                    AdamW<float>& optim, const PpoConfig& cfg);

// ---- end-to-end PPO driver ----

class MetricsLogger {
 public:
  MetricsLogger() = default;  // disabled
  explicit MetricsLogger(const std::string& path, bool append = false);
  void write(const nlohmann::json& record);
  bool enabled() const { return out_ != nullptr; }

 private:
  std::shared_ptr<std::ofstream> out_;
};

/// Greedy-argmax success rate over `episodes` completed episodes.
double greedy_success_rate(const policy::PolicyNet<float>& net,
                           const VecEnvConfig& env_cfg, int episodes);

struct PpoRunConfig {
  PpoConfig ppo;
  VecEnvConfig env;
  std::uint64_t seed = 1;  // policy init + action sampling
  std::int64_t total_env_steps = 2'000'000;
  int eval_every_updates = 25;
  int eval_episodes = 32;
  std::uint64_t eval_episode_seed = 900'000;  // held-out episode stream
  double early_stop_success = -1.0;           // stop once eval SR >= this
  std::string checkpoint_path;                // best-so-far policy, optional
};

struct PpoRunResult {
  std::int64_t env_steps = 0;
  int updates = 0;
  double best_success = 0.0;
  double final_success = 0.0;
  bool early_stopped = false;
};

PpoRunResult run_ppo(const PpoRunConfig& cfg, policy::PolicyNet<float>& net,
                     MetricsLogger log = {});

// ---- behavior cloning ----

struct BcConfig {
  double encoder_lr = 1e-4;  // visual encoder parameter group
  double head_lr = 1e-3;     // everything else
  double weight_decay = 1e-6;
  int batch_episodes = 8;
  int epochs = 10;

  void validate() const;
};

struct BcStats {
  double loss = 0;             // mean cross-entropy per action
  double action_accuracy = 0;  // argmax == demo action
  std::int64_t actions = 0;
};

/// Two learning-rate groups: visual-encoder parameters (enc./comp. and the
/// goal twins) at encoder_lr, everything else at head_lr.
AdamW<float> make_bc_optimizer(const policy::PolicyNet<float>& net,
                               const BcConfig& cfg);

/// Scenes rebuilt from seeds on demand; demos store only actions.
class SceneCache {
 public:
  const sim::Scene& get(std::uint64_t seed);

 private:
  std::unordered_map<std::uint64_t, sim::Scene> scenes_;
};

/// One gradient step over a batch of demos (teacher forcing, loss averaged
/// per action across the batch).
BcStats bc_update(policy::PolicyNet<float>& net, AdamW<float>& optim,
                  std::span<const sim::Demo> batch, SceneCache& scenes);

/// Cross-entropy/accuracy without a gradient step.
BcStats bc_evaluate(const policy::PolicyNet<float>& net,
                    std::span<const sim::Demo> demos, SceneCache& scenes);

// ---- masked-autoencoder pretraining ----

struct MaeModel {
  vit::ViTConfig cfg;
  double mask_ratio = 0.75;
  ParamStore<float> params;
  vit::VitEncoder<float> encoder;  // parameters prefixed "enc." like PolicyNet
  vit::MaeDecoder<float> decoder;

  MaeModel(const vit::ViTConfig& c, double mask_ratio, std::uint64_t seed);

  /// Reconstruction loss on masked patches for one batch [B,3,S,S].
  Tensor<float> loss(const Tensor<float>& images, std::uint64_t mask_seed) const;
};

/// Renders frames along oracle demonstrations: [N,3,S,S] in [0,1].
Tensor<float> render_frames(std::uint64_t scene_seed,
                            std::uint64_t episode_seed, int num_frames,
                            int image_size);

/// One pass over `frames` in batches; returns the mean loss per batch.
double mae_pretrain_epoch(MaeModel& model, const Tensor<float>& frames,
                          AdamW<float>& optim, Rng& rng, int batch_size = 32);

/// Deterministic no-grad loss (mask seeds derived from `seed`).
double mae_eval_loss(const MaeModel& model, const Tensor<float>& frames,
                     std::uint64_t seed, int batch_size = 32);

void save_mae(const std::string& path, const MaeModel& model);
MaeModel load_mae(const std::string& path);

/// Copies enc.* tensors from a checkpoint (policy or MAE) into the policy's
/// observation encoder. CheckpointError on missing/mismatched tensors.
void load_encoder_params(policy::PolicyNet<float>& net,
                         const std::string& path);

// ---- resumable training state ----

void save_train_state(const std::string& path,
                      const policy::PolicyNet<float>& net, AdamW<float>& optim,
                      std::int64_t progress,
                      const nlohmann::json& extra = nlohmann::json::object());

/// Restores parameters and optimizer moments; returns the saved progress
/// counter. CheckpointError on any mismatch.
std::int64_t load_train_state(const std::string& path,
                              policy::PolicyNet<float>& net,
                              AdamW<float>& optim);

}  // namespace nav::train
