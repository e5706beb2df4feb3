#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <vector>

#include "nav/ops.hpp"
#include "nav/train.hpp"

using namespace nav;

namespace {

policy::PolicyConfig compass_config(int hidden = 32) {
  policy::PolicyConfig pc;
  pc.obs_mode = policy::ObsMode::kCompass;
  pc.goal_mode = policy::GoalMode::kImage;
  pc.compass_hidden = 16;
  pc.prev_action_embed_dim = 8;
  pc.lstm_hidden = hidden;
  return pc;
}

train::VecEnvConfig compass_env(int num_envs = 4) {
  train::VecEnvConfig ec;
  ec.num_envs = num_envs;
  ec.task = train::Task::kImageNav;
  ec.obs_mode = policy::ObsMode::kCompass;
  ec.scene_seed = 7;
  ec.episode_seed = 21;
  ec.sampler.max_steps = 64;
  return ec;
}

vit::ViTConfig tiny_vit() {
  vit::ViTConfig vc;
  vc.image_size = 16;
  vc.patch_size = 8;
  vc.embed_dim = 8;
  vc.depth = 1;
  vc.num_heads = 2;
  return vc;
}

/// O(T^2) reference: A_t = sum_k (discount*lambda)^(k-t) * masked delta_k.
std::vector<double> gae_reference(const std::vector<double>& rewards,
                                  const std::vector<double>& values,
                                  const std::vector<std::uint8_t>& dones,
                                  const std::vector<double>& bootstrap, int n,
                                  int len, double discount, double lambda) {
  std::vector<double> adv(rewards.size(), 0.0);
  for (int e = 0; e < n; ++e) {
    for (int t = 0; t < len; ++t) {
      double acc = 0.0, coef = 1.0;
      for (int k = t; k < len; ++k) {
        const std::size_t i = static_cast<std::size_t>(k) * n + e;
        const double next_v =
            k == len - 1 ? bootstrap[static_cast<std::size_t>(e)]
                         : values[i + static_cast<std::size_t>(n)];
        const double mask = dones[i] ? 0.0 : 1.0;
        acc += coef * (rewards[i] + discount * next_v * mask - values[i]);
        if (dones[i]) break;
        coef *= discount * lambda;
      }
      adv[static_cast<std::size_t>(t) * n + e] = acc;
    }
  }
  return adv;
}

}  // namespace

TEST_CASE("gae matches the quadratic reference on random inputs") {
  Rng rng(404);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = rng.uniform_int(1, 4), len = rng.uniform_int(1, 16);
    const std::size_t slots = static_cast<std::size_t>(n) * len;
    std::vector<double> rewards(slots), values(slots), bootstrap(
        static_cast<std::size_t>(n));
    std::vector<std::uint8_t> dones(slots);
    for (auto& r : rewards) r = rng.uniform(-2.0, 2.0);
    for (auto& v : values) v = rng.uniform(-2.0, 2.0);
    for (auto& b : bootstrap) b = rng.uniform(-2.0, 2.0);
    for (auto& d : dones) d = rng.uniform() < 0.2;
    const double discount = rng.uniform(0.9, 0.999);
    const double lambda = rng.uniform(0.8, 1.0);
    const train::GaeResult got = train::compute_gae(
        rewards, values, dones, bootstrap, n, len, discount, lambda);
    const std::vector<double> want = gae_reference(
        rewards, values, dones, bootstrap, n, len, discount, lambda);
    for (std::size_t i = 0; i < slots; ++i) {
      CHECK(std::fabs(got.advantages[i] - want[i]) < 1e-9);
      CHECK(std::fabs(got.returns[i] - (want[i] + values[i])) < 1e-9);
    }
  }
}

TEST_CASE("gae hand case with an episode boundary") {
  // n=1, len=3, done at t=1. delta_2 = 1 + 0.5*2 - 1 = 1, A_2 = 1.
  // delta_1 = 1 - 3 = -2 (masked next), A_1 = -2.
  // delta_0 = 1 + 0.5*3 - 2 = 0.5, A_0 = 0.5 + 0.5*0.5*(-2) = 0.
  const train::GaeResult g = train::compute_gae(
      {1.0, 1.0, 1.0}, {2.0, 3.0, 1.0}, {0, 1, 0}, {2.0}, 1, 3, 0.5, 0.5);
  CHECK(std::fabs(g.advantages[0] - 0.0) < 1e-12);
  CHECK(std::fabs(g.advantages[1] - (-2.0)) < 1e-12);
  CHECK(std::fabs(g.advantages[2] - 1.0) < 1e-12);
}

TEST_CASE("vecenv steps, terminates and auto-resets deterministically") {
  train::VecEnvConfig ec = compass_env(3);
  ec.sampler.max_steps = 5;
  train::VecEnv env(ec);
  train::VecEnv twin(ec);
  CHECK(env.obs_width() == train::VecEnv::kCompassDim);
  for (int e = 0; e < 3; ++e) {
    CHECK(env.episode_is_fresh(e));
    // Compass distance channel agrees with the geodesic-free goal distance.
    float obs[train::VecEnv::kCompassDim];
    env.write_obs(e, obs);
    const double d = sim::goal_distance(env.scene(e), env.episode(e),
                                        env.agent_state(e).x,
                                        env.agent_state(e).y);
    CHECK(obs[0] == doctest::Approx(std::min(d, 10.0) / 10.0));
    CHECK(obs[1] * obs[1] + obs[2] * obs[2] == doctest::Approx(1.0));
    CHECK(obs[3] == 0.0f);
  }
  // Never stopping forces a timeout after exactly max_steps actions.
  const std::vector<sim::Action> forward(
      3, sim::Action::kMoveForward);
  int dones = 0;
  for (int t = 0; t < 5; ++t) {
    const auto out = env.step(forward);
    const auto out2 = twin.step(forward);
    for (int e = 0; e < 3; ++e) {
      CHECK(out[static_cast<std::size_t>(e)].reward ==
            out2[static_cast<std::size_t>(e)].reward);
      CHECK(std::isfinite(out[static_cast<std::size_t>(e)].reward));
      if (out[static_cast<std::size_t>(e)].episode) {
        ++dones;
        CHECK(out[static_cast<std::size_t>(e)].done);
        CHECK(out[static_cast<std::size_t>(e)].episode->timeout);
        CHECK_FALSE(out[static_cast<std::size_t>(e)].episode->success);
        CHECK(out[static_cast<std::size_t>(e)].episode->steps == 5);
        CHECK(out[static_cast<std::size_t>(e)].episode->geodesic >= 2.0);
      }
    }
  }
  CHECK(dones == 3);
  for (int e = 0; e < 3; ++e) CHECK(env.episode_is_fresh(e));
}

TEST_CASE("vecenv stop inside the goal radius scores a success") {
  train::VecEnvConfig ec = compass_env(1);
  train::VecEnv env(ec);
  // Drive with the oracle to the goal, then STOP.
  const sim::TrajectoryRecord demo =
      sim::oracle_demonstration(env.scene(0), env.episode(0));
  REQUIRE(demo.stop_called);
  bool saw_success = false;
  double path = 0.0;
  for (const sim::StepRecord& st : demo.steps) {
    const auto out = env.step({st.action});
    if (out[0].episode) {
      saw_success = out[0].episode->success;
      path = out[0].episode->path_length;
      CHECK_FALSE(out[0].episode->timeout);
    }
  }
  CHECK(saw_success);
  CHECK(path > 0.0);
  CHECK(env.episode_is_fresh(0));  // auto-reset happened
}

TEST_CASE("rollout buffer log-probs and values replay to the same numbers") {
  train::VecEnvConfig ec = compass_env(4);
  train::VecEnv env(ec);
  policy::PolicyNet<float> net(compass_config(), 11);
  // Give the heads real weights so probabilities are informative.
  Rng wrng(5);
  for (auto& [name, t] : net.params.items())
    if (name.starts_with("actor.") || name.starts_with("critic."))
      for (std::int64_t i = 0; i < t.numel(); ++i)
        t.data()[i] = static_cast<float>(wrng.normal() * 0.3);
  policy::PolicyState<float> state = net.initial_state(4);
  Rng arng(99);
  const int len = 24;
  const train::RolloutBuffer buf =
      train::collect_rollouts(env, net, state, len, arng);

  CHECK(buf.num_envs == 4);
  CHECK(buf.len == len);
  CHECK(buf.obs.size() == static_cast<std::size_t>(len) * 4 * 4);
  CHECK(buf.initial_hc.size() == static_cast<std::size_t>(4) * 2 * 32);
  CHECK(buf.bootstrap_values.size() == 4);
  for (int e = 0; e < 4; ++e) CHECK(buf.episode_starts[buf.idx(0, e)] == 1);

  // Replay exactly as the optimizer does and compare stored numbers.
  const int hc_width = 2 * 32;
  Tensor<float> hc = Tensor<float>::from({4, hc_width}, buf.initial_hc);
  NoGradGuard no_grad;
  for (int t = 0; t < len; ++t) {
    std::vector<float> mask(static_cast<std::size_t>(4) * hc_width, 1.0f);
    bool any = false;
    for (int e = 0; e < 4; ++e)
      if (buf.episode_starts[buf.idx(t, e)]) {
        any = true;
        std::fill_n(mask.begin() + static_cast<std::size_t>(e) * hc_width,
                    hc_width, 0.0f);
      }
    if (any) hc = mul(hc, Tensor<float>::from({4, hc_width}, mask));
    std::vector<float> obs_v(buf.obs.begin() + buf.idx(t, 0) * 4,
                             buf.obs.begin() + buf.idx(t, 0) * 4 + 16);
    const Tensor<float> obs = Tensor<float>::from({4, 4}, obs_v);
    std::vector<sim::Action> prev(4);
    std::vector<int> acts(4);
    for (int e = 0; e < 4; ++e) {
      prev[static_cast<std::size_t>(e)] =
          static_cast<sim::Action>(buf.prev_actions[buf.idx(t, e)]);
      acts[static_cast<std::size_t>(e)] = buf.actions[buf.idx(t, e)];
    }
    const auto out = net.step(net.encode_compass(obs, prev), hc);
    hc = out.hc;
    const Tensor<float> logp = logp_actions(out.logits, acts);
    for (int e = 0; e < 4; ++e) {
      CHECK(std::fabs(logp.data()[e] - buf.log_probs[buf.idx(t, e)]) < 1e-5);
      CHECK(std::fabs(out.value.data()[e] - buf.values[buf.idx(t, e)]) < 1e-5);
    }
  }
}

TEST_CASE("ppo surrogate clips exactly where it should") {
  // ratio, advantage -> expected gradient d(surrogate)/d(ratio):
  //  1.5, +1: clipped branch wins, gradient 0
  //  1.5, -1: unclipped branch wins, gradient -1
  //  0.5, +1: unclipped branch wins, gradient +1
  //  0.5, -1: clipped branch wins, gradient 0
  //  1.0, +2: tie, unclipped branch keeps gradient +2
  Tensor<float> ratio = Tensor<float>::from({5}, {1.5f, 1.5f, 0.5f, 0.5f, 1.0f});
  ratio.set_requires_grad(true);
  const Tensor<float> adv =
      Tensor<float>::from({5}, {1.0f, -1.0f, 1.0f, -1.0f, 2.0f});
  Tensor<float> surr = train::ppo_surrogate(ratio, adv, 0.2);
  const std::vector<float> values = surr.vec();
  CHECK(values[0] == doctest::Approx(1.2f));
  CHECK(values[1] == doctest::Approx(-1.5f));
  CHECK(values[2] == doctest::Approx(0.5f));
  CHECK(values[3] == doctest::Approx(-0.8f));
  CHECK(values[4] == doctest::Approx(2.0f));
  Tensor<float> total = sum_all(surr);
  total.backward();
  const auto& grad = ratio.node()->grad;
  CHECK(grad[0] == doctest::Approx(0.0f));
  CHECK(grad[1] == doctest::Approx(-1.0f));
  CHECK(grad[2] == doctest::Approx(1.0f));
  CHECK(grad[3] == doctest::Approx(0.0f));
  CHECK(grad[4] == doctest::Approx(2.0f));
}

TEST_CASE("first ppo pass has unit ratios, zero policy loss, ln4 entropy") {
  train::VecEnvConfig ec = compass_env(4);
  train::VecEnv env(ec);
  policy::PolicyNet<float> net(compass_config(), 3);
  policy::PolicyState<float> state = net.initial_state(4);
  Rng arng(17);
  train::RolloutBuffer buf = train::collect_rollouts(env, net, state, 16, arng);
  train::attach_gae(buf, 0.99, 0.95);
  train::PpoConfig pc;
  pc.num_envs = 4;
  pc.rollout_length = 16;
  pc.ppo_epochs = 1;
  pc.minibatches = 1;
  AdamWConfig<float> oc;
  AdamW<float> optim(oc);
  optim.add_params(net.params.items());
  const train::PpoStats stats = train::ppo_update(buf, net, optim, pc);
  CHECK(std::fabs(stats.policy_loss) < 1e-3);
  CHECK(stats.entropy == doctest::Approx(std::log(4.0)).epsilon(1e-5));
  CHECK(stats.clip_fraction == 0.0);
  CHECK(std::fabs(stats.approx_kl) < 1e-5);
  CHECK(stats.value_loss >= 0.0);
  CHECK(std::isfinite(stats.grad_norm));
}

TEST_CASE("ppo actor-bias gradient matches the closed form on a fresh policy") {
  train::VecEnvConfig ec = compass_env(4);
  train::VecEnv env(ec);
  policy::PolicyNet<float> net(compass_config(), 29);
  policy::PolicyState<float> state = net.initial_state(4);
  Rng arng(31);
  const int len = 16;
  train::RolloutBuffer buf =
      train::collect_rollouts(env, net, state, len, arng);
  train::attach_gae(buf, 0.99, 0.95);
  train::PpoConfig pc;
  pc.num_envs = 4;
  pc.rollout_length = len;
  pc.ppo_epochs = 1;
  pc.minibatches = 1;
  pc.value_coef = 0.0;    // isolate the policy term
  pc.entropy_coef = 0.0;
  pc.max_grad_norm = 1e9;  // keep gradients unscaled
  AdamWConfig<float> oc;
  AdamW<float> optim(oc);
  optim.add_params(net.params.items());
  train::ppo_update(buf, net, optim, pc);

  // Zero actor weights make pi uniform and ratios one, so
  // d(policy_loss)/d(b_j) = -(1/M) * sum_i A_i * (1[a_i = j] - 1/4)
  // with A the normalized advantages.
  const std::size_t slots = buf.advantages.size();
  double mean = 0.0;
  for (const double a : buf.advantages) mean += a;
  mean /= static_cast<double>(slots);
  double var = 0.0;
  for (const double a : buf.advantages) var += (a - mean) * (a - mean);
  var /= static_cast<double>(slots);
  const double scale = 1.0 / (std::sqrt(var) + 1e-8);
  std::vector<double> want(4, 0.0);
  for (std::size_t i = 0; i < slots; ++i) {
    const double a_norm = (buf.advantages[i] - mean) * scale;
    for (int j = 0; j < 4; ++j) {
      const double indicator = buf.actions[i] == j ? 1.0 : 0.0;
      want[static_cast<std::size_t>(j)] +=
          -a_norm * (indicator - 0.25) / static_cast<double>(slots);
    }
  }
  const Tensor<float>& bias = net.actor.b;
  REQUIRE(static_cast<int>(bias.node()->grad.size()) == 4);
  for (int j = 0; j < 4; ++j)
    CHECK(std::fabs(bias.node()->grad[static_cast<std::size_t>(j)] -
                    want[static_cast<std::size_t>(j)]) < 1e-4);
}

TEST_CASE("shifted old log-probs clip every sample") {
  train::VecEnvConfig ec = compass_env(4);
  train::VecEnv env(ec);
  policy::PolicyNet<float> net(compass_config(), 41);
  policy::PolicyState<float> state = net.initial_state(4);
  Rng arng(43);
  train::RolloutBuffer buf = train::collect_rollouts(env, net, state, 8, arng);
  train::attach_gae(buf, 0.99, 0.95);
  for (double& lp : buf.log_probs) lp -= std::log(2.0);  // ratio == 2
  train::PpoConfig pc;
  pc.num_envs = 4;
  pc.rollout_length = 8;
  pc.ppo_epochs = 1;
  pc.minibatches = 1;
  AdamWConfig<float> oc;
  AdamW<float> optim(oc);
  optim.add_params(net.params.items());
  const train::PpoStats stats = train::ppo_update(buf, net, optim, pc);
  CHECK(stats.clip_fraction == 1.0);
  CHECK(stats.approx_kl == doctest::Approx(-std::log(2.0)).epsilon(1e-4));
}

TEST_CASE("ppo config validation rejects bad splits") {
  train::PpoConfig pc;
  pc.num_envs = 4;
  pc.minibatches = 3;
  CHECK_THROWS_AS(pc.validate(), ConfigError);
  pc.minibatches = 2;
  pc.clip_epsilon = 0.0;
  CHECK_THROWS_AS(pc.validate(), ConfigError);
}

TEST_CASE("run_ppo smoke: counts steps, logs metrics, saves a checkpoint") {
  train::PpoRunConfig rc;
  rc.ppo.num_envs = 4;
  rc.ppo.rollout_length = 16;
  rc.ppo.ppo_epochs = 1;
  rc.ppo.minibatches = 1;
  rc.env = compass_env(4);
  rc.seed = 5;
  rc.total_env_steps = 256;  // 4 updates
  rc.eval_every_updates = 2;
  rc.eval_episodes = 4;
  rc.checkpoint_path = "run_ppo_smoke.ckpt";
  rc.env.sampler.max_steps = 32;
  policy::PolicyNet<float> net(compass_config(), rc.seed);
  const train::PpoRunResult res = train::run_ppo(
      rc, net, train::MetricsLogger("run_ppo_smoke.jsonl"));
  CHECK(res.env_steps == 256);
  CHECK(res.updates == 4);
  CHECK(res.final_success >= 0.0);
  CHECK(res.final_success <= 1.0);
  std::ifstream metrics("run_ppo_smoke.jsonl");
  REQUIRE(metrics.good());
  std::string line;
  int updates = 0, evals = 0;
  while (std::getline(metrics, line)) {
    const auto j = nlohmann::json::parse(line);
    if (j.at("kind") == "ppo_update") ++updates;
    if (j.at("kind") == "eval") ++evals;
    CHECK(j.at("env_steps").get<std::int64_t>() > 0);
  }
  CHECK(updates == 4);
  CHECK(evals == 2);
  const policy::PolicyNet<float> restored =
      policy::load_policy("run_ppo_smoke.ckpt");
  CHECK(restored.cfg == net.cfg);
  std::remove("run_ppo_smoke.jsonl");
  std::remove("run_ppo_smoke.ckpt");
}

TEST_CASE("greedy evaluation is deterministic") {
  const train::VecEnvConfig ec = compass_env(2);
  policy::PolicyNet<float> net(compass_config(), 13);
  const double a = train::greedy_success_rate(net, ec, 6);
  const double b = train::greedy_success_rate(net, ec, 6);
  CHECK(a == b);
  CHECK(a >= 0.0);
  CHECK(a <= 1.0);
}

TEST_CASE("bc update memorizes a small demo set") {
  Rng rng(2);
  train::SceneCache scenes;
  std::vector<sim::Demo> demos;
  std::uint64_t seed = 80;
  while (demos.size() < 3) {
    sim::Scene scene;
    try {
      scene = sim::generate_scene(seed++);
    } catch (const ConfigError&) {
      continue;
    }
    try {
      const sim::EpisodeSpec ep = sim::sample_episode(scene, rng, false, {});
      const sim::TrajectoryRecord traj = sim::oracle_demonstration(scene, ep);
      sim::Demo demo;
      demo.episode = ep;
      for (const sim::StepRecord& st : traj.steps)
        demo.actions.push_back(st.action);
      demos.push_back(demo);
    } catch (const ConfigError&) {
      continue;
    }
  }
  policy::PolicyNet<float> net(compass_config(64), 6);
  train::BcConfig bc;
  bc.batch_episodes = 3;
  bc.head_lr = 3e-3;  // small corpus; memorize quickly
  bc.encoder_lr = 3e-4;
  AdamW<float> optim = train::make_bc_optimizer(net, bc);
  const train::BcStats first = train::bc_update(net, optim, demos, scenes);
  CHECK(first.loss == doctest::Approx(std::log(4.0)).epsilon(1e-4));
  train::BcStats last{};
  for (int i = 0; i < 300; ++i)
    last = train::bc_update(net, optim, demos, scenes);
  CHECK(last.loss < 0.3 * first.loss);
  CHECK(last.action_accuracy > 0.85);
  const train::BcStats eval = train::bc_evaluate(net, demos, scenes);
  CHECK(eval.loss <= last.loss * 1.5);
  CHECK(eval.actions == last.actions);
}

TEST_CASE("mae training halves its loss on a tiny corpus") {
  const Tensor<float> frames = train::render_frames(300, 301, 32, 16);
  CHECK(frames.dim(0) == 32);
  CHECK(frames.dim(1) == 3);
  CHECK(frames.dim(2) == 16);
  float lo = 1.0f, hi = 0.0f;
  for (const float v : frames.vec()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  CHECK(lo >= 0.0f);
  CHECK(hi <= 1.0f);
  CHECK(hi > lo);  // scenes render non-constant frames

  vit::ViTConfig vc = tiny_vit();
  vc.patch_size = 4;
  vc.embed_dim = 32;
  train::MaeModel model(vc, 0.5, 9);
  AdamWConfig<float> oc;
  oc.learning_rate = 5e-3f;
  AdamW<float> optim(oc);
  optim.add_params(model.params.items());
  const double before = train::mae_eval_loss(model, frames, 77, 16);
  Rng rng(10);
  double epoch_loss = 0.0;
  for (int i = 0; i < 700; ++i)
    epoch_loss = train::mae_pretrain_epoch(model, frames, optim, rng, 16);
  const double after = train::mae_eval_loss(model, frames, 77, 16);
  CHECK(std::isfinite(epoch_loss));
  CHECK(after < 0.5 * before);
}

TEST_CASE("mae encoder never sees masked patches") {
  const vit::ViTConfig vc = tiny_vit();  // 2x2 patch grid
  train::MaeModel model(vc, 0.5, 12);
  const vit::MaeMask mask = vit::mae_mask(vc.num_patches(), 0.5, 55);
  REQUIRE(!mask.masked_indices.empty());
  Rng rng(66);
  Tensor<float> img = Tensor<float>::uniform({1, 3, 16, 16}, rng, 0.0f, 1.0f);
  Tensor<float> tweaked = img.clone();
  // Scribble over one masked patch.
  const int patch = mask.masked_indices.front();
  const int py = (patch / vc.grid_side()) * vc.patch_size;
  const int px = (patch % vc.grid_side()) * vc.patch_size;
  for (int c = 0; c < 3; ++c)
    for (int y = py; y < py + vc.patch_size; ++y)
      for (int x = px; x < px + vc.patch_size; ++x)
        tweaked.data()[(c * 16 + y) * 16 + x] = 0.123f;
  const Tensor<float> enc_a =
      model.encoder.forward_masked(img, mask.visible_indices);
  const Tensor<float> enc_b =
      model.encoder.forward_masked(tweaked, mask.visible_indices);
  CHECK(enc_a.vec() == enc_b.vec());
  // ...while the loss does change, because the target includes that patch.
  const double la = model.loss(img, 55).data()[0];
  const double lb = model.loss(tweaked, 55).data()[0];
  CHECK(la != lb);
}

TEST_CASE("mae checkpoint roundtrips and feeds a policy encoder") {
  train::MaeModel model(tiny_vit(), 0.6, 21);
  train::save_mae("mae_tiny.ckpt", model);
  const train::MaeModel back = train::load_mae("mae_tiny.ckpt");
  CHECK(back.cfg == model.cfg);
  CHECK(back.mask_ratio == model.mask_ratio);
  for (const auto& [name, t] : model.params.items()) {
    bool found = false;
    for (const auto& [bname, bt] : back.params.items())
      if (bname == name) {
        found = true;
        CHECK(bt.vec() == t.vec());
      }
    CHECK(found);
  }

  policy::PolicyConfig pc;
  pc.encoder = tiny_vit();
  pc.approx_output_size = 16;
  pc.lstm_hidden = 16;
  pc.prev_action_embed_dim = 8;
  policy::PolicyNet<float> net(pc, 1);
  train::load_encoder_params(net, "mae_tiny.ckpt");
  for (const auto& [name, t] : net.params.items()) {
    if (!name.starts_with("enc.")) continue;
    const auto* src = [&]() -> const Tensor<float>* {
      for (const auto& [mname, mt] : model.params.items())
        if (mname == name) return &mt;
      return nullptr;
    }();
    REQUIRE(src != nullptr);
    CHECK(t.vec() == src->vec());
  }

  policy::PolicyNet<float> compass_net(compass_config(), 2);
  CHECK_THROWS_AS(train::load_encoder_params(compass_net, "mae_tiny.ckpt"),
                  CheckpointError);
  std::remove("mae_tiny.ckpt");
}

TEST_CASE("training state checkpoint resumes parameters and moments") {
  train::VecEnvConfig ec = compass_env(2);
  train::VecEnv env(ec);
  policy::PolicyNet<float> net(compass_config(), 77);
  policy::PolicyState<float> state = net.initial_state(2);
  Rng arng(78);
  train::RolloutBuffer buf = train::collect_rollouts(env, net, state, 8, arng);
  train::attach_gae(buf, 0.99, 0.95);
  train::PpoConfig pc;
  pc.num_envs = 2;
  pc.rollout_length = 8;
  pc.ppo_epochs = 1;
  pc.minibatches = 1;
  AdamWConfig<float> oc;
  AdamW<float> optim(oc);
  optim.add_params(net.params.items());
  train::ppo_update(buf, net, optim, pc);  // non-trivial moments
  train::save_train_state("train_state.ckpt", net, optim, 1234,
                          {{"note", "test"}});

  policy::PolicyNet<float> fresh(compass_config(), 1);
  AdamW<float> fresh_optim(oc);
  fresh_optim.add_params(fresh.params.items());
  const std::int64_t progress =
      train::load_train_state("train_state.ckpt", fresh, fresh_optim);
  CHECK(progress == 1234);
  CHECK(fresh_optim.step_count() == optim.step_count());
  for (const auto& [name, t] : net.params.items()) {
    bool matched = false;
    for (const auto& [fname, ft] : fresh.params.items())
      if (fname == name) {
        matched = true;
        CHECK(ft.vec() == t.vec());
      }
    CHECK(matched);
  }
  auto want = optim.state();
  auto got = fresh_optim.state();
  REQUIRE(want.size() == got.size());
  for (std::size_t i = 0; i < want.size(); ++i) {
    CHECK(want[i].first == got[i].first);
    CHECK(*want[i].second == *got[i].second);
  }

  policy::PolicyNet<float> other(compass_config(64), 1);
  AdamW<float> other_optim(oc);
  other_optim.add_params(other.params.items());
  CHECK_THROWS_AS(
      train::load_train_state("train_state.ckpt", other, other_optim),
      CheckpointError);
  std::remove("train_state.ckpt");
}

TEST_CASE("image-mode rollouts carry goal images end to end") {
  train::VecEnvConfig ec;
  ec.num_envs = 2;
  ec.task = train::Task::kImageNav;
  ec.obs_mode = policy::ObsMode::kImage;
  ec.image_size = 16;
  ec.scene_seed = 5;
  ec.episode_seed = 15;
  ec.sampler.max_steps = 16;
  train::VecEnv env(ec);
  policy::PolicyConfig pc;
  pc.encoder = tiny_vit();
  pc.approx_output_size = 16;
  pc.lstm_hidden = 16;
  pc.prev_action_embed_dim = 8;
  policy::PolicyNet<float> net(pc, 4);
  policy::PolicyState<float> state = net.initial_state(2);
  Rng arng(44);
  train::RolloutBuffer buf = train::collect_rollouts(env, net, state, 4, arng);
  CHECK(buf.has_goal_obs);
  CHECK_FALSE(buf.has_goal_categories);
  CHECK(buf.obs.size() == static_cast<std::size_t>(4) * 2 * 3 * 16 * 16);
  CHECK(buf.goal_obs.size() == buf.obs.size());
  train::attach_gae(buf, 0.99, 0.95);
  train::PpoConfig ppo;
  ppo.num_envs = 2;
  ppo.rollout_length = 4;
  ppo.ppo_epochs = 1;
  ppo.minibatches = 1;
  AdamWConfig<float> oc;
  AdamW<float> optim(oc);
  optim.add_params(net.params.items());
  const train::PpoStats stats = train::ppo_update(buf, net, optim, ppo);
  CHECK(std::isfinite(stats.policy_loss));
  CHECK(std::isfinite(stats.value_loss));
}

TEST_CASE("objectnav rollouts use goal categories") {
  train::VecEnvConfig ec;
  ec.num_envs = 2;
  ec.task = train::Task::kObjectNav;
  ec.obs_mode = policy::ObsMode::kImage;
  ec.image_size = 16;
  ec.scene_seed = 23;
  ec.episode_seed = 33;
  ec.sampler.max_steps = 12;
  train::VecEnv env(ec);
  policy::PolicyConfig pc;
  pc.encoder = tiny_vit();
  pc.approx_output_size = 16;
  pc.goal_mode = policy::GoalMode::kCategory;
  pc.lstm_hidden = 16;
  pc.prev_action_embed_dim = 8;
  policy::PolicyNet<float> net(pc, 8);
  policy::PolicyState<float> state = net.initial_state(2);
  Rng arng(45);
  const train::RolloutBuffer buf =
      train::collect_rollouts(env, net, state, 4, arng);
  CHECK(buf.has_goal_categories);
  for (const int c : buf.goal_categories) {
    CHECK(c >= 0);
    CHECK(c < sim::kNumCategories);
  }
  // A mismatched policy is rejected up front.
  policy::PolicyConfig imagenav_pc = pc;
  imagenav_pc.goal_mode = policy::GoalMode::kImage;
  policy::PolicyNet<float> image_net(imagenav_pc, 10);
  policy::PolicyState<float> st2 = image_net.initial_state(2);
  Rng r2(1);
  CHECK_THROWS_AS(train::collect_rollouts(env, image_net, st2, 2, r2),
                  ConfigError);
}
