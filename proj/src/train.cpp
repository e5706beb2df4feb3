#include "nav/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>
#include <utility>

#include "nav/checkpoint.hpp"
#include "nav/ops.hpp"

namespace nav::train {

namespace {

/// Angle from the agent's heading to the goal, in [-pi, pi].
double goal_bearing(const sim::Scene& scene, const sim::EpisodeSpec& ep,
                    const sim::AgentState& state) {
  double gx = ep.goal.x, gy = ep.goal.y;
  if (ep.is_objectnav()) {
    double best = sim::kInfDistance;
    for (const auto& obj : scene.objects) {
      if (obj.category != ep.goal_category) continue;
      const double d = std::hypot(obj.x - state.x, obj.y - state.y);
      if (d < best) {
        best = d;
        gx = obj.x;
        gy = obj.y;
      }
    }
    NAV_CHECK_CONFIG(best < sim::kInfDistance,
                     "vecenv: scene has no instance of the goal category");
  }
  return std::remainder(std::atan2(gy - state.y, gx - state.x) - state.heading,
                        2.0 * kPi);
}

sim::Scene make_scene(std::uint64_t& seed, std::uint64_t stride) {
  for (int i = 0; i < 64; ++i) {
    try {
      return sim::generate_scene(seed);
    } catch (const ConfigError&) {
      seed += stride;
    }
  }
  throw ConfigError("vecenv: scene generation kept failing");
}

Tensor<float> rows_from(const std::vector<float>& store, std::size_t offset,
                        int rows, const Shape& item_shape,
                        std::int64_t item_width) {
  Shape shape;
  shape.push_back(rows);
  for (const int d : item_shape) shape.push_back(d);
  const std::size_t count = static_cast<std::size_t>(rows) * item_width;
  NAV_CHECK_SHAPE(offset + count <= store.size(), "rollout slice out of range");
  std::vector<float> values(store.begin() + static_cast<std::ptrdiff_t>(offset),
                            store.begin() +
                                static_cast<std::ptrdiff_t>(offset + count));
  return Tensor<float>::from(shape, std::move(values));
}

Tensor<float> slice_frames(const Tensor<float>& frames, int first, int count) {
  Shape shape = frames.shape();
  shape[0] = count;
  const std::int64_t item = frames.numel() / frames.dim(0);
  std::vector<float> values(static_cast<std::size_t>(count) * item);
  std::memcpy(values.data(), frames.data() + first * item,
              values.size() * sizeof(float));
  return Tensor<float>::from(shape, std::move(values));
}

int sample_categorical(const float* logits, int n, Rng& rng, double* logp) {
  double mx = logits[0];
  for (int j = 1; j < n; ++j) mx = std::max(mx, static_cast<double>(logits[j]));
  std::vector<double> p(static_cast<std::size_t>(n));
  double z = 0.0;
  for (int j = 0; j < n; ++j) {
    p[static_cast<std::size_t>(j)] = std::exp(logits[j] - mx);
    z += p[static_cast<std::size_t>(j)];
  }
  const double u = rng.uniform() * z;
  int a = n - 1;
  double cum = 0.0;
  for (int j = 0; j < n; ++j) {
    cum += p[static_cast<std::size_t>(j)];
    if (u < cum) {
      a = j;
      break;
    }
  }
  *logp = std::log(p[static_cast<std::size_t>(a)] / z);
  return a;
}

bool is_encoder_param(const std::string& name) {
  return name.starts_with("enc.") || name.starts_with("comp.") ||
         name.starts_with("goal_enc.") || name.starts_with("goal_comp.");
}

}  // namespace

std::array<float, VecEnv::kCompassDim> compass_observation(
    const sim::Scene& scene, const sim::EpisodeSpec& ep,
    const sim::AgentState& state, bool collided) {
  const double d = sim::goal_distance(scene, ep, state.x, state.y);
  const double bearing = goal_bearing(scene, ep, state);
  return {static_cast<float>(std::min(d, VecEnv::kCompassRange) /
                             VecEnv::kCompassRange),
          static_cast<float>(std::sin(bearing)),
          static_cast<float>(std::cos(bearing)), collided ? 1.0f : 0.0f};
}

std::string task_name(Task t) {
  return t == Task::kImageNav ? "imagenav" : "objectnav";
}

Task task_from(const std::string& name) {
  if (name == "imagenav") return Task::kImageNav;
  if (name == "objectnav") return Task::kObjectNav;
  throw ConfigError("unknown task: " + name);
}

std::string reward_kind_name(RewardKind k) {
  return k == RewardKind::kZer ? "zer" : "potential";
}

RewardKind reward_kind_from(const std::string& name) {
  if (name == "zer") return RewardKind::kZer;
  if (name == "potential") return RewardKind::kPotential;
  throw ConfigError("unknown reward kind: " + name);
}

reward::RewardFn reward_fn(RewardKind k) {
  return k == RewardKind::kZer ? reward::zer_reward : reward::potential_reward;
}

// ---- VecEnv ----

void VecEnvConfig::validate() const {
  NAV_CHECK_CONFIG(num_envs > 0, "vecenv: num_envs must be positive");
  NAV_CHECK_CONFIG(image_size > 0, "vecenv: image_size must be positive");
  NAV_CHECK_CONFIG(sampler.max_steps > 0,
                   "vecenv: episode step limit must be positive");
  reward_cfg.validate();
}

VecEnv::VecEnv(const VecEnvConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  reward_ = reward_fn(cfg_.reward);
  Rng episode_root(cfg_.episode_seed);
  envs_.resize(static_cast<std::size_t>(cfg_.num_envs));
  for (int e = 0; e < cfg_.num_envs; ++e) {
    Env& env = envs_[static_cast<std::size_t>(e)];
    env.scene_seed = cfg_.scene_seed + static_cast<std::uint64_t>(e);
    env.scene = make_scene(env.scene_seed,
                           static_cast<std::uint64_t>(cfg_.num_envs));
    env.rng = episode_root.fork(static_cast<std::uint64_t>(e));
    reset_env(env);
  }
}

Shape VecEnv::obs_shape() const {
  if (cfg_.obs_mode == policy::ObsMode::kImage)
    return {3, cfg_.image_size, cfg_.image_size};
  return {kCompassDim};
}

int VecEnv::obs_width() const {
  return static_cast<int>(shape_numel(obs_shape()));
}

bool VecEnv::episode_is_fresh(int e) const {
  return envs_[static_cast<std::size_t>(e)].steps == 0;
}

const sim::EpisodeSpec& VecEnv::episode(int e) const {
  return envs_[static_cast<std::size_t>(e)].ep;
}

const sim::Scene& VecEnv::scene(int e) const {
  return envs_[static_cast<std::size_t>(e)].scene;
}

const sim::AgentState& VecEnv::agent_state(int e) const {
  return envs_[static_cast<std::size_t>(e)].state;
}

void VecEnv::reset_env(Env& env) {
  const bool objectnav = cfg_.task == Task::kObjectNav;
  for (int attempt = 0;; ++attempt) {
    NAV_CHECK_CONFIG(attempt < 64, "vecenv: episode sampling kept failing");
    try {
      env.ep = sim::sample_episode(env.scene, env.rng, objectnav, cfg_.sampler);
      break;
    } catch (const ConfigError&) {
      // Hostile scene; move to a fresh one (stride keeps envs disjoint).
      env.scene_seed += static_cast<std::uint64_t>(cfg_.num_envs);
      env.scene =
          make_scene(env.scene_seed, static_cast<std::uint64_t>(cfg_.num_envs));
    }
  }
  env.state = env.ep.start;
  env.steps = 0;
  env.path_length = 0;
  env.last_collision = false;
  if (cfg_.obs_mode == policy::ObsMode::kImage && !objectnav)
    env.goal_image = sim::render_observation(env.scene, env.ep.goal,
                                             cfg_.image_size, cfg_.image_size);
}

void VecEnv::write_obs(int e, float* out) const {
  const Env& env = envs_[static_cast<std::size_t>(e)];
  if (cfg_.obs_mode == policy::ObsMode::kImage) {
    const Tensor<float> img = sim::render_observation(
        env.scene, env.state, cfg_.image_size, cfg_.image_size);
    std::memcpy(out, img.data(),
                static_cast<std::size_t>(img.numel()) * sizeof(float));
    return;
  }
  const auto compass =
      compass_observation(env.scene, env.ep, env.state, env.last_collision);
  std::copy(compass.begin(), compass.end(), out);
}

void VecEnv::write_goal_obs(int e, float* out) const {
  const Env& env = envs_[static_cast<std::size_t>(e)];
  NAV_CHECK_CONFIG(env.goal_image.numel() > 0,
                   "vecenv: no goal image in this configuration");
  std::memcpy(out, env.goal_image.data(),
              static_cast<std::size_t>(env.goal_image.numel()) * sizeof(float));
}

int VecEnv::goal_category(int e) const {
  const sim::EpisodeSpec& ep = envs_[static_cast<std::size_t>(e)].ep;
  NAV_CHECK_CONFIG(ep.is_objectnav(), "vecenv: episode has no goal category");
  return ep.goal_category;
}

bool VecEnv::stop_success(const Env& env) const {
  if (cfg_.task == Task::kObjectNav) {
    for (const auto& obj : env.scene.objects) {
      if (obj.category != env.ep.goal_category) continue;
      if (std::hypot(obj.x - env.state.x, obj.y - env.state.y) >=
          sim::kSuccessRadius)
        continue;
      if (sim::line_of_sight(env.scene, env.state.x, env.state.y, obj.x,
                             obj.y))
        return true;
    }
    return false;
  }
  return sim::goal_distance(env.scene, env.ep, env.state.x, env.state.y) <
         sim::kSuccessRadius;
}

std::vector<StepOutcome> VecEnv::step(const std::vector<sim::Action>& actions) {
  NAV_CHECK_SHAPE(actions.size() == envs_.size(),
                  "vecenv: one action per environment");
  std::vector<StepOutcome> out(envs_.size());
  for (std::size_t e = 0; e < envs_.size(); ++e) {
    Env& env = envs_[e];
    const sim::Action act = actions[e];
    reward::StepInfo prev;
    prev.d = sim::goal_distance(env.scene, env.ep, env.state.x, env.state.y);
    prev.theta = sim::goal_heading_error(env.ep, env.state.heading);
    prev.action = sim::Action::kMoveForward;
    const auto [next, collided] = sim::step(env.scene, env.state, act);
    env.path_length += std::hypot(next.x - env.state.x, next.y - env.state.y);
    env.state = next;
    env.last_collision = collided;
    env.steps += 1;
    const bool stopped = act == sim::Action::kStop;
    reward::StepInfo cur;
    cur.d = sim::goal_distance(env.scene, env.ep, env.state.x, env.state.y);
    cur.theta = sim::goal_heading_error(env.ep, env.state.heading);
    cur.action = act;
    cur.is_terminal_stop = stopped;
    const reward::RewardTerms terms = reward_(prev, cur, cfg_.reward_cfg);
    StepOutcome& o = out[e];
    o.reward = terms.total();
    o.collision = collided;
    const bool timeout = !stopped && env.steps >= env.ep.max_steps;
    if (stopped || timeout) {
      EpisodeResult res;
      res.success = stopped && stop_success(env);
      res.geodesic = env.ep.geodesic_start_to_goal;
      res.path_length = env.path_length;
      res.steps = env.steps;
      res.timeout = timeout;
      o.done = true;
      o.episode = res;
      reset_env(env);
    }
  }
  return out;
}

// ---- rollout collection ----

namespace {

/// Checks that a policy can act in an environment and reports which goal
/// stream the rollout needs.
struct RolloutPlan {
  bool image_obs = false;
  bool goal_images = false;
  bool goal_categories = false;
};

RolloutPlan plan_rollout(const VecEnvConfig& env_cfg,
                         const policy::PolicyConfig& pc) {
  NAV_CHECK_CONFIG(pc.obs_mode == env_cfg.obs_mode,
                   "rollout: policy and environment observation modes differ");
  RolloutPlan plan;
  plan.image_obs = pc.obs_mode == policy::ObsMode::kImage;
  if (!plan.image_obs) return plan;
  NAV_CHECK_CONFIG(pc.encoder.image_size == env_cfg.image_size,
                   "rollout: policy image size differs from environment");
  if (env_cfg.task == Task::kObjectNav) {
    NAV_CHECK_CONFIG(pc.goal_mode == policy::GoalMode::kCategory,
                     "rollout: object goals need a category-goal policy");
    plan.goal_categories = true;
  } else {
    NAV_CHECK_CONFIG(pc.goal_mode == policy::GoalMode::kImage,
                     "rollout: image goals need an image-goal policy");
    plan.goal_images = true;
  }
  return plan;
}

Tensor<float> featurize(const policy::PolicyNet<float>& net,
                        const RolloutPlan& plan, const Tensor<float>& obs,
                        const Tensor<float>& goal_obs,
                        const std::vector<int>& goal_cats,
                        const std::vector<sim::Action>& prev) {
  if (!plan.image_obs) return net.encode_compass(obs, prev);
  if (plan.goal_categories) return net.encode_observation(obs, goal_cats, prev);
  return net.encode_observation(obs, goal_obs, prev);
}

}  // namespace

RolloutBuffer collect_rollouts(VecEnv& env, const policy::PolicyNet<float>& net,
                               policy::PolicyState<float>& state, int len,
                               Rng& rng) {
  NAV_CHECK_CONFIG(len > 0, "rollout: length must be positive");
  const RolloutPlan plan = plan_rollout(env.config(), net.cfg);
  const int n = env.num_envs();
  NAV_CHECK_SHAPE(state.hc.dim(0) == n && static_cast<int>(
                      state.prev_actions.size()) == n,
                  "rollout: recurrent state batch mismatch");
  const std::int64_t width = env.obs_width();

  RolloutBuffer buf;
  buf.num_envs = n;
  buf.len = len;
  buf.obs_item_shape = env.obs_shape();
  buf.obs_width = width;
  buf.has_goal_obs = plan.goal_images;
  buf.has_goal_categories = plan.goal_categories;
  const std::size_t slots = static_cast<std::size_t>(len) * n;
  buf.obs.resize(slots * static_cast<std::size_t>(width));
  if (plan.goal_images) buf.goal_obs.resize(buf.obs.size());
  if (plan.goal_categories) buf.goal_categories.resize(slots, -1);
  buf.actions.resize(slots);
  buf.prev_actions.resize(slots);
  buf.episode_starts.resize(slots);
  buf.dones.resize(slots);
  buf.log_probs.resize(slots);
  buf.values.resize(slots);
  buf.rewards.resize(slots);
  buf.initial_hc = state.hc.vec();
  buf.bootstrap_values.resize(static_cast<std::size_t>(n));

  NoGradGuard no_grad;
  std::vector<sim::Action> acts(static_cast<std::size_t>(n));
  std::vector<int> cats(static_cast<std::size_t>(n), 0);
  for (int t = 0; t < len; ++t) {
    const std::size_t row = buf.idx(t, 0);
    for (int e = 0; e < n; ++e) {
      const std::size_t i = row + static_cast<std::size_t>(e);
      const bool fresh = env.episode_is_fresh(e);
      buf.episode_starts[i] = fresh;
      if (fresh) state.reset_slot(e);
      env.write_obs(e, buf.obs.data() + i * static_cast<std::size_t>(width));
      if (plan.goal_images)
        env.write_goal_obs(e,
                           buf.goal_obs.data() + i * static_cast<std::size_t>(width));
      if (plan.goal_categories) {
        buf.goal_categories[i] = env.goal_category(e);
        cats[static_cast<std::size_t>(e)] = buf.goal_categories[i];
      }
      buf.prev_actions[i] =
          static_cast<int>(state.prev_actions[static_cast<std::size_t>(e)]);
    }
    const Tensor<float> obs = rows_from(buf.obs, row * width, n,
                                        buf.obs_item_shape, width);
    Tensor<float> goal;
    if (plan.goal_images)
      goal = rows_from(buf.goal_obs, row * width, n, buf.obs_item_shape, width);
    const Tensor<float> feature =
        featurize(net, plan, obs, goal, cats, state.prev_actions);
    const auto out = net.step(feature, state.hc);
    const float* logits = out.logits.data();
    const float* values = out.value.data();
    for (int e = 0; e < n; ++e) {
      const std::size_t i = row + static_cast<std::size_t>(e);
      double logp = 0.0;
      const int a = sample_categorical(logits + e * net.cfg.num_actions,
                                       net.cfg.num_actions, rng, &logp);
      buf.actions[i] = a;
      buf.log_probs[i] = logp;
      buf.values[i] = values[e];
      acts[static_cast<std::size_t>(e)] = static_cast<sim::Action>(a);
    }
    const std::vector<StepOutcome> outcomes = env.step(acts);
    for (int e = 0; e < n; ++e) {
      const std::size_t i = row + static_cast<std::size_t>(e);
      buf.rewards[i] = outcomes[static_cast<std::size_t>(e)].reward;
      buf.dones[i] = outcomes[static_cast<std::size_t>(e)].done;
      if (outcomes[static_cast<std::size_t>(e)].episode)
        buf.finished.push_back(*outcomes[static_cast<std::size_t>(e)].episode);
      state.prev_actions[static_cast<std::size_t>(e)] =
          acts[static_cast<std::size_t>(e)];
    }
    state.hc = out.hc;
  }

  // Bootstrap value of the next observation; recurrent state is left where
  // the next collect call will resume.
  std::vector<float> next_obs(static_cast<std::size_t>(n) *
                              static_cast<std::size_t>(width));
  std::vector<float> next_goal(plan.goal_images ? next_obs.size() : 0);
  for (int e = 0; e < n; ++e) {
    if (env.episode_is_fresh(e)) state.reset_slot(e);
    env.write_obs(e, next_obs.data() +
                         static_cast<std::size_t>(e) *
                             static_cast<std::size_t>(width));
    if (plan.goal_images)
      env.write_goal_obs(e, next_goal.data() +
                                static_cast<std::size_t>(e) *
                                    static_cast<std::size_t>(width));
    if (plan.goal_categories) cats[static_cast<std::size_t>(e)] =
        env.goal_category(e);
  }
  const Tensor<float> obs = rows_from(next_obs, 0, n, buf.obs_item_shape, width);
  Tensor<float> goal;
  if (plan.goal_images)
    goal = rows_from(next_goal, 0, n, buf.obs_item_shape, width);
  const auto out = net.step(
      featurize(net, plan, obs, goal, cats, state.prev_actions), state.hc);
  for (int e = 0; e < n; ++e)
    buf.bootstrap_values[static_cast<std::size_t>(e)] = out.value.data()[e];
  return buf;
}

GaeResult compute_gae(const std::vector<double>& rewards,
                      const std::vector<double>& values,
                      const std::vector<std::uint8_t>& dones,
                      const std::vector<double>& bootstrap, int num_envs,
                      int len, double discount, double lambda) {
  const std::size_t slots = static_cast<std::size_t>(len) * num_envs;
  NAV_CHECK_SHAPE(rewards.size() == slots && values.size() == slots &&
                      dones.size() == slots &&
                      bootstrap.size() == static_cast<std::size_t>(num_envs),
                  "gae: input sizes disagree");
  GaeResult out;
  out.advantages.assign(slots, 0.0);
  out.returns.assign(slots, 0.0);
  for (int e = 0; e < num_envs; ++e) {
    double next_adv = 0.0;
    for (int t = len - 1; t >= 0; --t) {
      const std::size_t i = static_cast<std::size_t>(t) * num_envs + e;
      const double mask = dones[i] ? 0.0 : 1.0;
      const double next_value =
          t == len - 1 ? bootstrap[static_cast<std::size_t>(e)]
                       : values[i + static_cast<std::size_t>(num_envs)];
      const double delta =
          rewards[i] + discount * next_value * mask - values[i];
      next_adv = delta + discount * lambda * mask * next_adv;
      out.advantages[i] = next_adv;
      out.returns[i] = next_adv + values[i];
    }
  }
  return out;
}

void attach_gae(RolloutBuffer& buffer, double discount, double lambda) {
  GaeResult g = compute_gae(buffer.rewards, buffer.values, buffer.dones,
                            buffer.bootstrap_values, buffer.num_envs,
                            buffer.len, discount, lambda);
  buffer.advantages = std::move(g.advantages);
  buffer.returns = std::move(g.returns);
}

// ---- PPO ----

void PpoConfig::validate() const {
  NAV_CHECK_CONFIG(num_envs > 0 && rollout_length > 0,
                   "ppo: num_envs and rollout_length must be positive");
  NAV_CHECK_CONFIG(ppo_epochs > 0, "ppo: ppo_epochs must be positive");
  NAV_CHECK_CONFIG(minibatches > 0 && num_envs % minibatches == 0,
                   "ppo: minibatches must evenly split num_envs");
  NAV_CHECK_CONFIG(clip_epsilon > 0.0 && clip_epsilon < 1.0,
                   "ppo: clip_epsilon must lie in (0, 1)");
  NAV_CHECK_CONFIG(discount > 0.0 && discount <= 1.0,
                   "ppo: discount must lie in (0, 1]");
  NAV_CHECK_CONFIG(gae_lambda >= 0.0 && gae_lambda <= 1.0,
                   "ppo: gae_lambda must lie in [0, 1]");
  NAV_CHECK_CONFIG(learning_rate > 0.0, "ppo: learning_rate must be positive");
  NAV_CHECK_CONFIG(value_coef >= 0.0 && entropy_coef >= 0.0,
                   "ppo: loss coefficients must be non-negative");
  NAV_CHECK_CONFIG(max_grad_norm > 0.0, "ppo: max_grad_norm must be positive");
}

Tensor<float> ppo_surrogate(const Tensor<float>& ratio,
                            const Tensor<float>& advantage, double eps) {
  NAV_CHECK_SHAPE(ratio.shape() == advantage.shape(),
                  "ppo: ratio/advantage shape mismatch");
  const Tensor<float> clipped = clamp_op(ratio, static_cast<float>(1.0 - eps),
                                         static_cast<float>(1.0 + eps));
  return min_elem(mul(ratio, advantage), mul(clipped, advantage));
}

PpoStats ppo_update(const RolloutBuffer& buf, policy::PolicyNet<float>& net,
                    AdamW<float>& optim, const PpoConfig& cfg) {
  cfg.validate();
  const int n = buf.num_envs, len = buf.len;
  NAV_CHECK_CONFIG(n > 0 && len > 0, "ppo: empty rollout buffer");
  NAV_CHECK_CONFIG(buf.advantages.size() == buf.rewards.size() &&
                       !buf.advantages.empty(),
                   "ppo: attach_gae before ppo_update");
  NAV_CHECK_CONFIG(n % cfg.minibatches == 0,
                   "ppo: minibatches must evenly split the buffer's envs");
  const bool image_obs = buf.obs_item_shape.size() == 3;
  RolloutPlan plan;
  plan.image_obs = image_obs;
  plan.goal_images = buf.has_goal_obs;
  plan.goal_categories = buf.has_goal_categories;

  // Advantages normalized over the whole buffer, once per update.
  const std::size_t slots = buf.advantages.size();
  double mean = 0.0;
  for (const double a : buf.advantages) mean += a;
  mean /= static_cast<double>(slots);
  double var = 0.0;
  for (const double a : buf.advantages) var += (a - mean) * (a - mean);
  var /= static_cast<double>(slots);
  const double scale = 1.0 / (std::sqrt(var) + 1e-8);
  std::vector<float> norm_adv(slots);
  for (std::size_t i = 0; i < slots; ++i)
    norm_adv[i] = static_cast<float>((buf.advantages[i] - mean) * scale);

  const std::int64_t width = buf.obs_width;
  const int per_mb = n / cfg.minibatches;
  const int hc_width = static_cast<int>(buf.initial_hc.size()) / n;
  PpoStats stats;
  std::int64_t clipped_total = 0, samples_total = 0;
  double kl_total = 0.0;
  int passes = 0;
  for (int epoch = 0; epoch < cfg.ppo_epochs; ++epoch) {
    for (int mb = 0; mb < cfg.minibatches; ++mb) {
      const int e0 = mb * per_mb;
      const int m = per_mb;
      std::vector<float> hc0(static_cast<std::size_t>(m) * hc_width);
      std::memcpy(hc0.data(),
                  buf.initial_hc.data() +
                      static_cast<std::size_t>(e0) * hc_width,
                  hc0.size() * sizeof(float));
      Tensor<float> hc = Tensor<float>::from({m, hc_width}, std::move(hc0));
      Tensor<float> policy_sum = Tensor<float>::zeros({1});
      Tensor<float> value_sum = Tensor<float>::zeros({1});
      Tensor<float> entropy_sum = Tensor<float>::zeros({1});
      double kl_sum = 0.0;
      std::vector<sim::Action> prev(static_cast<std::size_t>(m));
      std::vector<int> act_sub(static_cast<std::size_t>(m));
      std::vector<int> cat_sub(static_cast<std::size_t>(m), 0);
      std::vector<float> old_logp(static_cast<std::size_t>(m));
      std::vector<float> adv_sub(static_cast<std::size_t>(m));
      std::vector<float> ret_sub(static_cast<std::size_t>(m));
      for (int t = 0; t < len; ++t) {
        const std::size_t row = buf.idx(t, e0);
        bool any_start = false;
        for (int k = 0; k < m; ++k)
          any_start |= buf.episode_starts[row + static_cast<std::size_t>(k)] != 0;
        if (any_start) {
          // Zeroing rows by multiplication also cuts the gradient across
          // the episode boundary.
          std::vector<float> mv(static_cast<std::size_t>(m) * hc_width, 1.0f);
          for (int k = 0; k < m; ++k)
            if (buf.episode_starts[row + static_cast<std::size_t>(k)])
              std::fill_n(mv.begin() + static_cast<std::size_t>(k) * hc_width,
                          hc_width, 0.0f);
          hc = mul(hc, Tensor<float>::from({m, hc_width}, std::move(mv)));
        }
        const Tensor<float> obs = rows_from(buf.obs, row * width, m,
                                            buf.obs_item_shape, width);
        Tensor<float> goal;
        if (plan.goal_images)
          goal = rows_from(buf.goal_obs, row * width, m, buf.obs_item_shape,
                           width);
        for (int k = 0; k < m; ++k) {
          const std::size_t i = row + static_cast<std::size_t>(k);
          prev[static_cast<std::size_t>(k)] =
              static_cast<sim::Action>(buf.prev_actions[i]);
          act_sub[static_cast<std::size_t>(k)] = buf.actions[i];
          if (plan.goal_categories)
            cat_sub[static_cast<std::size_t>(k)] = buf.goal_categories[i];
          old_logp[static_cast<std::size_t>(k)] =
              static_cast<float>(buf.log_probs[i]);
          adv_sub[static_cast<std::size_t>(k)] = norm_adv[i];
          ret_sub[static_cast<std::size_t>(k)] =
              static_cast<float>(buf.returns[i]);
        }
        const Tensor<float> feature =
            featurize(net, plan, obs, goal, cat_sub, prev);
        const auto out = net.step(feature, hc);
        hc = out.hc;
        const Tensor<float> logp = logp_actions(out.logits, act_sub);
        const Tensor<float> old_t = Tensor<float>::from({m}, old_logp);
        const Tensor<float> adv_t = Tensor<float>::from({m}, adv_sub);
        const Tensor<float> ret_t = Tensor<float>::from({m}, ret_sub);
        const Tensor<float> ratio = exp_op(sub(logp, old_t));
        policy_sum =
            add(policy_sum, sum_all(ppo_surrogate(ratio, adv_t,
                                                  cfg.clip_epsilon)));
        value_sum = add(value_sum, sum_all(square(sub(out.value, ret_t))));
        const Tensor<float> probs = softmax_lastdim(out.logits);
        const Tensor<float> logs = log_softmax_lastdim(out.logits);
        entropy_sum = sub(entropy_sum, sum_all(mul(probs, logs)));
        const float* rd = ratio.data();
        const float* lp = logp.data();
        for (int k = 0; k < m; ++k) {
          if (std::fabs(rd[k] - 1.0f) > cfg.clip_epsilon) ++clipped_total;
          kl_sum += old_logp[static_cast<std::size_t>(k)] - lp[k];
          ++samples_total;
        }
      }
      const float inv = 1.0f / static_cast<float>(m * len);
      const Tensor<float> policy_loss = mul_scalar(policy_sum, -inv);
      const Tensor<float> value_loss = mul_scalar(value_sum, inv);
      const Tensor<float> entropy = mul_scalar(entropy_sum, inv);
      const Tensor<float> total =
          add(add(policy_loss,
                  mul_scalar(value_loss, static_cast<float>(cfg.value_coef))),
              mul_scalar(entropy, static_cast<float>(-cfg.entropy_coef)));
      const double pl = policy_loss.data()[0];
      const double vl = value_loss.data()[0];
      const double ent = entropy.data()[0];
      NAV_CHECK(std::isfinite(static_cast<double>(total.data()[0])),
                NumericError,
                "ppo: non-finite loss (policy=" + std::to_string(pl) +
                    ", value=" + std::to_string(vl) +
                    ", entropy=" + std::to_string(ent) + ")");
      optim.zero_grad();
      Tensor<float> root = total;
      root.backward();
      const double gn = net.params.clip_grad_norm(
          static_cast<float>(cfg.max_grad_norm));
      optim.step();
      stats.policy_loss += pl;
      stats.value_loss += vl;
      stats.entropy += ent;
      stats.grad_norm += gn;
      kl_total += kl_sum;
      ++passes;
    }
  }
  stats.policy_loss /= passes;
  stats.value_loss /= passes;
  stats.entropy /= passes;
  stats.grad_norm /= passes;
  stats.clip_fraction =
      static_cast<double>(clipped_total) / static_cast<double>(samples_total);
  stats.approx_kl = kl_total / static_cast<double>(samples_total);
  return stats;
}

// ---- metrics + PPO driver ----

MetricsLogger::MetricsLogger(const std::string& path, bool append)
    : out_(std::make_shared<std::ofstream>(
          path, append ? std::ios::app : std::ios::trunc)) {
  NAV_CHECK(out_->good(), IoError, "cannot open metrics file " + path);
}

void MetricsLogger::write(const nlohmann::json& record) {
  if (!out_) return;
  (*out_) << record.dump() << '\n';
  out_->flush();
}

double greedy_success_rate(const policy::PolicyNet<float>& net,
                           const VecEnvConfig& env_cfg, int episodes) {
  NAV_CHECK_CONFIG(episodes > 0, "eval: episode count must be positive");
  VecEnv env(env_cfg);
  const RolloutPlan plan = plan_rollout(env.config(), net.cfg);
  const int n = env.num_envs();
  const std::int64_t width = env.obs_width();
  policy::PolicyState<float> state = net.initial_state(n);
  NoGradGuard no_grad;
  std::vector<float> obs_v(static_cast<std::size_t>(n) * width);
  std::vector<float> goal_v(plan.goal_images ? obs_v.size() : 0);
  std::vector<int> cats(static_cast<std::size_t>(n), 0);
  std::vector<sim::Action> acts(static_cast<std::size_t>(n));
  int done_count = 0, success_count = 0;
  while (done_count < episodes) {
    for (int e = 0; e < n; ++e) {
      if (env.episode_is_fresh(e)) state.reset_slot(e);
      env.write_obs(e, obs_v.data() + static_cast<std::size_t>(e) * width);
      if (plan.goal_images)
        env.write_goal_obs(e,
                           goal_v.data() + static_cast<std::size_t>(e) * width);
      if (plan.goal_categories) cats[static_cast<std::size_t>(e)] =
          env.goal_category(e);
    }
    const Tensor<float> obs =
        rows_from(obs_v, 0, n, env.obs_shape(), width);
    Tensor<float> goal;
    if (plan.goal_images)
      goal = rows_from(goal_v, 0, n, env.obs_shape(), width);
    const auto out = net.step(
        featurize(net, plan, obs, goal, cats, state.prev_actions), state.hc);
    for (int e = 0; e < n; ++e)
      acts[static_cast<std::size_t>(e)] = static_cast<sim::Action>(argmax_row(
          out.logits.data() + e * net.cfg.num_actions, net.cfg.num_actions));
    const std::vector<StepOutcome> outcomes = env.step(acts);
    state.hc = out.hc;
    for (int e = 0; e < n; ++e) {
      state.prev_actions[static_cast<std::size_t>(e)] =
          acts[static_cast<std::size_t>(e)];
      if (outcomes[static_cast<std::size_t>(e)].episode) {
        ++done_count;
        success_count +=
            outcomes[static_cast<std::size_t>(e)].episode->success ? 1 : 0;
      }
    }
  }
  return static_cast<double>(success_count) / static_cast<double>(done_count);
}

PpoRunResult run_ppo(const PpoRunConfig& cfg, policy::PolicyNet<float>& net,
                     MetricsLogger log) {
  cfg.ppo.validate();
  VecEnvConfig env_cfg = cfg.env;
  env_cfg.num_envs = cfg.ppo.num_envs;
  VecEnv env(env_cfg);
  AdamWConfig<float> oc;
  oc.learning_rate = static_cast<float>(cfg.ppo.learning_rate);
  AdamW<float> optim(oc);
  optim.add_params(net.params.items());
  policy::PolicyState<float> state = net.initial_state(env_cfg.num_envs);
  Rng sample_rng(cfg.seed + 0x5eed);
  VecEnvConfig eval_cfg = env_cfg;
  eval_cfg.episode_seed = cfg.eval_episode_seed;

  PpoRunResult res;
  const std::int64_t steps_per_update =
      static_cast<std::int64_t>(cfg.ppo.num_envs) * cfg.ppo.rollout_length;
  bool saved_any = false;
  while (res.env_steps < cfg.total_env_steps) {
    RolloutBuffer buf =
        collect_rollouts(env, net, state, cfg.ppo.rollout_length, sample_rng);
    attach_gae(buf, cfg.ppo.discount, cfg.ppo.gae_lambda);
    const PpoStats stats = ppo_update(buf, net, optim, cfg.ppo);
    res.env_steps += steps_per_update;
    res.updates += 1;
    double reward_sum = 0.0;
    for (const double r : buf.rewards) reward_sum += r;
    int train_success = 0;
    for (const EpisodeResult& ep : buf.finished) train_success += ep.success;
    if (log.enabled())
      log.write({{"kind", "ppo_update"},
                 {"update", res.updates},
                 {"env_steps", res.env_steps},
                 {"policy_loss", stats.policy_loss},
                 {"value_loss", stats.value_loss},
                 {"entropy", stats.entropy},
                 {"clip_fraction", stats.clip_fraction},
                 {"approx_kl", stats.approx_kl},
                 {"grad_norm", stats.grad_norm},
                 {"mean_step_reward",
                  reward_sum / static_cast<double>(buf.rewards.size())},
                 {"episodes_finished", buf.finished.size()},
                 {"train_success", buf.finished.empty()
                                       ? 0.0
                                       : static_cast<double>(train_success) /
                                             buf.finished.size()}});
    const bool last =
        res.env_steps >= cfg.total_env_steps;
    if (res.updates % cfg.eval_every_updates == 0 || last) {
      const double sr =
          greedy_success_rate(net, eval_cfg, cfg.eval_episodes);
      res.final_success = sr;
      if (log.enabled())
        log.write({{"kind", "eval"},
                   {"update", res.updates},
                   {"env_steps", res.env_steps},
                   {"success_rate", sr}});
      if (sr > res.best_success || !saved_any) {
        res.best_success = std::max(res.best_success, sr);
        if (!cfg.checkpoint_path.empty()) {
          policy::save_policy(cfg.checkpoint_path, net,
                              {{"env_steps", res.env_steps},
                               {"success_rate", sr}});
          saved_any = true;
        }
      }
      if (cfg.early_stop_success >= 0.0 && sr >= cfg.early_stop_success) {
        res.early_stopped = true;
        break;
      }
    }
  }
  if (!cfg.checkpoint_path.empty() && !saved_any)
    policy::save_policy(cfg.checkpoint_path, net,
                        {{"env_steps", res.env_steps}});
  return res;
}

// ---- behavior cloning ----

void BcConfig::validate() const {
  NAV_CHECK_CONFIG(encoder_lr > 0.0 && head_lr > 0.0,
                   "bc: learning rates must be positive");
  NAV_CHECK_CONFIG(weight_decay >= 0.0, "bc: weight decay must be >= 0");
  NAV_CHECK_CONFIG(batch_episodes > 0 && epochs > 0,
                   "bc: batch_episodes and epochs must be positive");
}

AdamW<float> make_bc_optimizer(const policy::PolicyNet<float>& net,
                               const BcConfig& cfg) {
  cfg.validate();
  AdamWConfig<float> oc;
  oc.learning_rate = static_cast<float>(cfg.head_lr);
  oc.weight_decay = static_cast<float>(cfg.weight_decay);
  AdamW<float> optim(oc);
  std::vector<std::pair<std::string, Tensor<float>>> encoder_group, head_group;
  for (const auto& item : net.params.items())
    (is_encoder_param(item.first) ? encoder_group : head_group)
        .push_back(item);
  optim.add_params(encoder_group, static_cast<float>(cfg.encoder_lr));
  optim.add_params(head_group, static_cast<float>(cfg.head_lr));
  return optim;
}

const sim::Scene& SceneCache::get(std::uint64_t seed) {
  auto it = scenes_.find(seed);
  if (it == scenes_.end())
    it = scenes_.emplace(seed, sim::generate_scene(seed)).first;
  return it->second;
}

namespace {

struct BcEpisode {
  Tensor<float> obs;         // [T, ...]
  Tensor<float> goal_image;  // [1, 3, S, S] when the policy takes image goals
  int goal_category = -1;
  std::vector<int> labels;
  std::vector<sim::Action> prev;
};

BcEpisode build_bc_episode(const policy::PolicyConfig& pc,
                           const sim::Scene& scene, const sim::Demo& demo) {
  const sim::TrajectoryRecord traj =
      sim::replay_actions(scene, demo.episode, demo.actions);
  const int steps = static_cast<int>(traj.steps.size());
  NAV_CHECK_CONFIG(steps > 0, "bc: demo replays to an empty trajectory");
  BcEpisode ep;
  ep.labels.resize(static_cast<std::size_t>(steps));
  ep.prev.resize(static_cast<std::size_t>(steps));
  const bool image = pc.obs_mode == policy::ObsMode::kImage;
  const int s = pc.encoder.image_size;
  if (image) {
    ep.obs = Tensor<float>::zeros({steps, 3, s, s});
  } else {
    ep.obs = Tensor<float>::zeros({steps, VecEnv::kCompassDim});
  }
  const std::int64_t item = ep.obs.numel() / steps;
  for (int t = 0; t < steps; ++t) {
    const sim::AgentState& at =
        t == 0 ? traj.initial.state
               : traj.steps[static_cast<std::size_t>(t - 1)].state;
    const bool collided =
        t > 0 && traj.steps[static_cast<std::size_t>(t - 1)].collision;
    float* dst = ep.obs.data() + t * item;
    if (image) {
      const Tensor<float> img = sim::render_observation(scene, at, s, s);
      std::memcpy(dst, img.data(),
                  static_cast<std::size_t>(item) * sizeof(float));
    } else {
      const auto compass = compass_observation(scene, demo.episode, at, collided);
      std::copy(compass.begin(), compass.end(), dst);
    }
    ep.labels[static_cast<std::size_t>(t)] =
        static_cast<int>(traj.steps[static_cast<std::size_t>(t)].action);
    ep.prev[static_cast<std::size_t>(t)] =
        t == 0 ? sim::Action::kStop
               : traj.steps[static_cast<std::size_t>(t - 1)].action;
  }
  if (image) {
    if (pc.goal_mode == policy::GoalMode::kCategory) {
      NAV_CHECK_CONFIG(demo.episode.is_objectnav(),
                       "bc: category-goal policy needs ObjectNav demos");
      ep.goal_category = demo.episode.goal_category;
    } else {
      NAV_CHECK_CONFIG(!demo.episode.is_objectnav(),
                       "bc: image-goal policy needs ImageNav demos");
      const Tensor<float> img =
          sim::render_observation(scene, demo.episode.goal, s, s);
      ep.goal_image = reshape(img, {1, 3, s, s});
    }
  }
  return ep;
}

/// Sum of per-action cross-entropies plus the argmax-correct count.
std::pair<Tensor<float>, int> bc_episode_loss(
    const policy::PolicyNet<float>& net, const BcEpisode& ep) {
  const int steps = static_cast<int>(ep.labels.size());
  Tensor<float> features;
  if (net.cfg.obs_mode == policy::ObsMode::kCompass) {
    features = net.encode_compass(ep.obs, ep.prev);
  } else {
    const Tensor<float> obs_f = net.obs_features(ep.obs);
    Tensor<float> goal_f;
    if (net.cfg.goal_mode == policy::GoalMode::kCategory) {
      goal_f = net.goal_features(
          std::vector<int>(static_cast<std::size_t>(steps), ep.goal_category));
    } else {
      const Tensor<float> g1 =
          net.cfg.share_encoder_with_goal
              ? net.obs_features(ep.goal_image)
              : net.goal_compress.forward(
                    net.goal_encoder.forward_tokens(ep.goal_image));
      goal_f = gather_rows(
          g1, std::vector<int>(static_cast<std::size_t>(steps), 0));
    }
    features = concat_lastdim<float>(
        {obs_f, goal_f, net.action_features(ep.prev)});
  }
  Tensor<float> hc = net.lstm.initial_state(1);
  Tensor<float> loss_sum = Tensor<float>::zeros({1});
  int correct = 0;
  for (int t = 0; t < steps; ++t) {
    const Tensor<float> f_t = gather_rows(features, {t});
    const auto out = net.step(f_t, hc);
    hc = out.hc;
    loss_sum = add(loss_sum, cross_entropy(out.logits,
                                           {ep.labels[static_cast<std::size_t>(
                                               t)]}));
    if (argmax_row(out.logits.data(), net.cfg.num_actions) ==
        ep.labels[static_cast<std::size_t>(t)])
      ++correct;
  }
  return {loss_sum, correct};
}

}  // namespace

BcStats bc_update(policy::PolicyNet<float>& net, AdamW<float>& optim,
                  std::span<const sim::Demo> batch, SceneCache& scenes) {
  NAV_CHECK_CONFIG(!batch.empty(), "bc: empty demo batch");
  std::vector<BcEpisode> episodes;
  episodes.reserve(batch.size());
  std::int64_t total_actions = 0;
  for (const sim::Demo& demo : batch) {
    episodes.push_back(
        build_bc_episode(net.cfg, scenes.get(demo.episode.scene_seed), demo));
    total_actions += static_cast<std::int64_t>(episodes.back().labels.size());
  }
  optim.zero_grad();
  double loss_total = 0.0;
  std::int64_t correct_total = 0;
  for (const BcEpisode& ep : episodes) {
    auto [loss_sum, correct] = bc_episode_loss(net, ep);
    Tensor<float> scaled = mul_scalar(
        loss_sum, static_cast<float>(1.0 / static_cast<double>(total_actions)));
    scaled.backward();
    loss_total += loss_sum.data()[0];
    correct_total += correct;
  }
  NAV_CHECK(std::isfinite(loss_total), NumericError, "bc: non-finite loss");
  optim.step();
  return {loss_total / static_cast<double>(total_actions),
          static_cast<double>(correct_total) /
              static_cast<double>(total_actions),
          total_actions};
}

BcStats bc_evaluate(const policy::PolicyNet<float>& net,
                    std::span<const sim::Demo> demos, SceneCache& scenes) {
  NAV_CHECK_CONFIG(!demos.empty(), "bc: nothing to evaluate");
  NoGradGuard no_grad;
  double loss_total = 0.0;
  std::int64_t correct_total = 0, total_actions = 0;
  for (const sim::Demo& demo : demos) {
    const BcEpisode ep =
        build_bc_episode(net.cfg, scenes.get(demo.episode.scene_seed), demo);
    auto [loss_sum, correct] = bc_episode_loss(net, ep);
    loss_total += loss_sum.data()[0];
    correct_total += correct;
    total_actions += static_cast<std::int64_t>(ep.labels.size());
  }
  return {loss_total / static_cast<double>(total_actions),
          static_cast<double>(correct_total) /
              static_cast<double>(total_actions),
          total_actions};
}

// ---- MAE pretraining ----

MaeModel::MaeModel(const vit::ViTConfig& c, double ratio, std::uint64_t seed)
    : cfg(c), mask_ratio(ratio) {
  cfg.validate();
  NAV_CHECK_CONFIG(mask_ratio > 0.0 && mask_ratio < 1.0,
                   "mae: mask_ratio must lie in (0, 1)");
  Rng rng(seed);
  encoder = vit::VitEncoder<float>(params, "enc", cfg, rng);
  decoder = vit::MaeDecoder<float>(params, "dec", cfg, rng);
}

Tensor<float> MaeModel::loss(const Tensor<float>& images,
                             std::uint64_t mask_seed) const {
  const vit::MaeMask mask =
      vit::mae_mask(cfg.num_patches(), mask_ratio, mask_seed);
  const Tensor<float> target = patchify(images, cfg.patch_size);
  const Tensor<float> encoded =
      encoder.forward_masked(images, mask.visible_indices);
  const Tensor<float> predicted =
      decoder.forward(encoded, mask.visible_indices);
  return vit::mae_loss(predicted, target, mask, /*normalize_pixels=*/true);
}

Tensor<float> render_frames(std::uint64_t scene_seed,
                            std::uint64_t episode_seed, int num_frames,
                            int image_size) {
  NAV_CHECK_CONFIG(num_frames > 0 && image_size > 0,
                   "render_frames: counts must be positive");
  Tensor<float> out = Tensor<float>::zeros({num_frames, 3, image_size,
                                            image_size});
  const std::int64_t item =
      static_cast<std::int64_t>(3) * image_size * image_size;
  Rng rng(episode_seed);
  std::uint64_t seed = scene_seed;
  int count = 0;
  while (count < num_frames) {
    const sim::Scene scene = make_scene(seed, 1);
    for (int k = 0; k < 4 && count < num_frames; ++k) {
      sim::EpisodeSpec ep;
      try {
        ep = sim::sample_episode(scene, rng, /*objectnav=*/false, {});
      } catch (const ConfigError&) {
        break;
      }
      sim::TrajectoryRecord traj;
      try {
        traj = sim::oracle_demonstration(scene, ep);
      } catch (const ConfigError&) {
        continue;
      }
      std::vector<sim::AgentState> states;
      states.push_back(traj.initial.state);
      for (const sim::StepRecord& st : traj.steps) states.push_back(st.state);
      for (std::size_t i = 0; i < states.size() && count < num_frames;
           i += 2) {
        const Tensor<float> img = sim::render_observation(
            scene, states[i], image_size, image_size);
        std::memcpy(out.data() + static_cast<std::int64_t>(count) * item,
                    img.data(),
                    static_cast<std::size_t>(item) * sizeof(float));
        ++count;
      }
    }
    ++seed;
  }
  return out;
}

double mae_pretrain_epoch(MaeModel& model, const Tensor<float>& frames,
                          AdamW<float>& optim, Rng& rng, int batch_size) {
  NAV_CHECK_SHAPE(frames.ndim() == 4 && frames.dim(1) == 3,
                  "mae: frames must be [N,3,S,S]");
  NAV_CHECK_CONFIG(batch_size > 0, "mae: batch_size must be positive");
  const int n = frames.dim(0);
  double weighted = 0.0;
  int seen = 0;
  for (int b0 = 0; b0 < n; b0 += batch_size) {
    const int m = std::min(batch_size, n - b0);
    const Tensor<float> batch = slice_frames(frames, b0, m);
    const Tensor<float> loss = model.loss(batch, rng.next_u64());
    const double lv = loss.data()[0];
    NAV_CHECK(std::isfinite(lv), NumericError, "mae: non-finite loss");
    optim.zero_grad();
    Tensor<float> root = loss;
    root.backward();
    optim.step();
    weighted += lv * m;
    seen += m;
  }
  return weighted / static_cast<double>(seen);
}

double mae_eval_loss(const MaeModel& model, const Tensor<float>& frames,
                     std::uint64_t seed, int batch_size) {
  NAV_CHECK_SHAPE(frames.ndim() == 4 && frames.dim(1) == 3,
                  "mae: frames must be [N,3,S,S]");
  NAV_CHECK_CONFIG(batch_size > 0, "mae: batch_size must be positive");
  NoGradGuard no_grad;
  Rng rng(seed);
  const int n = frames.dim(0);
  double weighted = 0.0;
  int seen = 0;
  for (int b0 = 0; b0 < n; b0 += batch_size) {
    const int m = std::min(batch_size, n - b0);
    const Tensor<float> batch = slice_frames(frames, b0, m);
    weighted += static_cast<double>(model.loss(batch, rng.next_u64()).data()[0]) * m;
    seen += m;
  }
  return weighted / static_cast<double>(seen);
}

void save_mae(const std::string& path, const MaeModel& model) {
  Checkpoint ck;
  ck.meta["format"] = "nav-mae";
  ck.meta["version"] = 1;
  ck.meta["config"] = model.cfg;
  ck.meta["mask_ratio"] = model.mask_ratio;
  pack_params(model.params, ck);
  save_checkpoint(path, ck);
}

MaeModel load_mae(const std::string& path) {
  const Checkpoint ck = load_checkpoint(path);
  vit::ViTConfig cfg;
  double ratio = 0.0;
  try {
    NAV_CHECK(ck.meta.value("format", "") == "nav-mae", CheckpointError,
              "not an autoencoder checkpoint: " + path);
    cfg = ck.meta.at("config").get<vit::ViTConfig>();
    ratio = ck.meta.at("mask_ratio").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("bad autoencoder header in " + path + ": " +
                          e.what());
  }
  MaeModel model(cfg, ratio, /*seed=*/0);
  unpack_params(ck, model.params);
  return model;
}

void load_encoder_params(policy::PolicyNet<float>& net,
                         const std::string& path) {
  const Checkpoint ck = load_checkpoint(path);
  int copied = 0;
  for (auto& [name, t] : net.params.items()) {
    if (!name.starts_with("enc.")) continue;
    const NamedTensor* src = ck.find(name);
    NAV_CHECK(src != nullptr, CheckpointError,
              "checkpoint is missing encoder parameter " + name);
    NAV_CHECK(src->shape == t.shape(), CheckpointError,
              "checkpoint shape mismatch for " + name);
    float* dst = t.data();
    std::memcpy(dst, src->values.data(), src->values.size() * sizeof(float));
    ++copied;
  }
  NAV_CHECK(copied > 0, CheckpointError,
            "policy has no enc.* parameters to load into");
}

// ---- resumable training state ----

void save_train_state(const std::string& path,
                      const policy::PolicyNet<float>& net, AdamW<float>& optim,
                      std::int64_t progress, const nlohmann::json& extra) {
  Checkpoint ck;
  ck.meta = extra.is_object() ? extra : nlohmann::json::object();
  ck.meta["format"] = "nav-train-state";
  ck.meta["version"] = 1;
  ck.meta["config"] = net.cfg;
  ck.meta["progress"] = progress;
  ck.meta["optim_step"] = optim.step_count();
  pack_params(net.params, ck);
  for (const auto& [name, vec] : optim.state())
    ck.add(name, {static_cast<int>(vec->size())}, *vec);
  save_checkpoint(path, ck);
}

std::int64_t load_train_state(const std::string& path,
                              policy::PolicyNet<float>& net,
                              AdamW<float>& optim) {
  const Checkpoint ck = load_checkpoint(path);
  std::int64_t progress = 0;
  std::int64_t optim_step = 0;
  try {
    NAV_CHECK(ck.meta.value("format", "") == "nav-train-state",
              CheckpointError, "not a training-state checkpoint: " + path);
    const auto cfg = ck.meta.at("config").get<policy::PolicyConfig>();
    NAV_CHECK(cfg == net.cfg, CheckpointError,
              "training state was saved for a different policy architecture");
    progress = ck.meta.at("progress").get<std::int64_t>();
    optim_step = ck.meta.at("optim_step").get<std::int64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("bad training-state header in " + path + ": " +
                          e.what());
  }
  unpack_params(ck, net.params);
  for (auto& [name, vec] : optim.state()) {
    const NamedTensor* src = ck.find(name);
    NAV_CHECK(src != nullptr, CheckpointError,
              "training state is missing " + name);
    NAV_CHECK(src->values.size() == vec->size(), CheckpointError,
              "training state size mismatch for " + name);
    *vec = src->values;
  }
  optim.set_step_count(optim_step);
  return progress;
}

}  // namespace nav::train
