#include "nav/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <memory>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "nav/optim.hpp"
#include "nav/reward.hpp"
#include "nav/sim.hpp"

namespace fs = std::filesystem;

namespace nav::cli {

using nlohmann::json;

namespace {

json load_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  NAV_CHECK_IO(in.good(), "cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  NAV_CHECK_IO(out.good(), "cannot open " + path + " for writing");
  out << text;
  out.flush();
  NAV_CHECK_IO(out.good(), "short write to " + path);
}

void require_one_of(const std::string& field, const std::string& value,
                    std::initializer_list<const char*> allowed) {
  std::string options;
  for (const char* a : allowed) {
    if (value == a) return;
    options += options.empty() ? a : std::string(" | ") + a;
  }
  throw ConfigError(field + ": '" + value + "' is not one of " + options);
}

}  // namespace

// ---- config document ----

json RunConfig::to_json() const {
  return json{
      {"task", task},
      {"reward", reward},
      {"obs", obs},
      {"encoder", encoder},
      {"augment", augment},
      {"image_size", image_size},
      {"seed", seed},
      {"out_dir", out_dir},
      {"pretrained_encoder", pretrained_encoder},
      {"checkpoint", checkpoint},
      {"demos_path", demos_path},
      {"episodes",
       {{"scene_seed", episodes.scene_seed},
        {"episode_seed", episodes.episode_seed},
        {"max_steps", episodes.max_steps},
        {"min_geodesic", episodes.min_geodesic},
        {"max_geodesic", episodes.max_geodesic}}},
      {"ppo",
       {{"num_envs", ppo.num_envs},
        {"rollout_length", ppo.rollout_length},
        {"ppo_epochs", ppo.ppo_epochs},
        {"minibatches", ppo.minibatches},
        {"clip_epsilon", ppo.clip_epsilon},
        {"discount", ppo.discount},
        {"gae_lambda", ppo.gae_lambda},
        {"learning_rate", ppo.learning_rate},
        {"value_coef", ppo.value_coef},
        {"entropy_coef", ppo.entropy_coef},
        {"max_grad_norm", ppo.max_grad_norm},
        {"total_env_steps", ppo.total_env_steps},
        {"eval_every_updates", ppo.eval_every_updates},
        {"eval_episodes", ppo.eval_episodes},
        {"eval_episode_seed", ppo.eval_episode_seed},
        {"early_stop_success", ppo.early_stop_success}}},
      {"bc",
       {{"encoder_lr", bc.encoder_lr},
        {"head_lr", bc.head_lr},
        {"weight_decay", bc.weight_decay},
        {"batch_episodes", bc.batch_episodes},
        {"epochs", bc.epochs},
        {"holdout_fraction", bc.holdout_fraction}}},
      {"mae",
       {{"mask_ratio", mae.mask_ratio},
        {"learning_rate", mae.learning_rate},
        {"epochs", mae.epochs},
        {"batch_size", mae.batch_size},
        {"num_frames", mae.num_frames},
        {"holdout_fraction", mae.holdout_fraction}}},
      {"eval",
       {{"num_episodes", eval.num_episodes},
        {"episodes_per_scene", eval.episodes_per_scene},
        {"scene_seed", eval.scene_seed},
        {"episode_seed", eval.episode_seed},
        {"threads", eval.threads}}},
      {"demos",
       {{"count", demos.count},
        {"episodes_per_scene", demos.episodes_per_scene}}},
  };
}

RunConfig RunConfig::from_json(const json& j) {
  const RunConfig defaults;
  json merged = defaults.to_json();
  check_schema(j, merged);
  merge_json(merged, j);

  RunConfig c;
  c.task = merged.at("task").get<std::string>();
  c.reward = merged.at("reward").get<std::string>();
  c.obs = merged.at("obs").get<std::string>();
  c.encoder = merged.at("encoder").get<std::string>();
  c.augment = merged.at("augment").get<std::string>();
  c.image_size = merged.at("image_size").get<int>();
  c.seed = merged.at("seed").get<std::uint64_t>();
  c.out_dir = merged.at("out_dir").get<std::string>();
  c.pretrained_encoder = merged.at("pretrained_encoder").get<std::string>();
  c.checkpoint = merged.at("checkpoint").get<std::string>();
  c.demos_path = merged.at("demos_path").get<std::string>();

  const json& ep = merged.at("episodes");
  c.episodes.scene_seed = ep.at("scene_seed").get<std::uint64_t>();
  c.episodes.episode_seed = ep.at("episode_seed").get<std::uint64_t>();
  c.episodes.max_steps = ep.at("max_steps").get<int>();
  c.episodes.min_geodesic = ep.at("min_geodesic").get<double>();
  c.episodes.max_geodesic = ep.at("max_geodesic").get<double>();

  const json& pp = merged.at("ppo");
  c.ppo.num_envs = pp.at("num_envs").get<int>();
  c.ppo.rollout_length = pp.at("rollout_length").get<int>();
  c.ppo.ppo_epochs = pp.at("ppo_epochs").get<int>();
  c.ppo.minibatches = pp.at("minibatches").get<int>();
  c.ppo.clip_epsilon = pp.at("clip_epsilon").get<double>();
  c.ppo.discount = pp.at("discount").get<double>();
  c.ppo.gae_lambda = pp.at("gae_lambda").get<double>();
  c.ppo.learning_rate = pp.at("learning_rate").get<double>();
  c.ppo.value_coef = pp.at("value_coef").get<double>();
  c.ppo.entropy_coef = pp.at("entropy_coef").get<double>();
  c.ppo.max_grad_norm = pp.at("max_grad_norm").get<double>();
  c.ppo.total_env_steps = pp.at("total_env_steps").get<std::int64_t>();
  c.ppo.eval_every_updates = pp.at("eval_every_updates").get<int>();
  c.ppo.eval_episodes = pp.at("eval_episodes").get<int>();
  c.ppo.eval_episode_seed = pp.at("eval_episode_seed").get<std::uint64_t>();
  c.ppo.early_stop_success = pp.at("early_stop_success").get<double>();

  const json& b = merged.at("bc");
  c.bc.encoder_lr = b.at("encoder_lr").get<double>();
  c.bc.head_lr = b.at("head_lr").get<double>();
  c.bc.weight_decay = b.at("weight_decay").get<double>();
  c.bc.batch_episodes = b.at("batch_episodes").get<int>();
  c.bc.epochs = b.at("epochs").get<int>();
  c.bc.holdout_fraction = b.at("holdout_fraction").get<double>();

  const json& m = merged.at("mae");
  c.mae.mask_ratio = m.at("mask_ratio").get<double>();
  c.mae.learning_rate = m.at("learning_rate").get<double>();
  c.mae.epochs = m.at("epochs").get<int>();
  c.mae.batch_size = m.at("batch_size").get<int>();
  c.mae.num_frames = m.at("num_frames").get<int>();
  c.mae.holdout_fraction = m.at("holdout_fraction").get<double>();

  const json& ev = merged.at("eval");
  c.eval.num_episodes = ev.at("num_episodes").get<int>();
  c.eval.episodes_per_scene = ev.at("episodes_per_scene").get<int>();
  c.eval.scene_seed = ev.at("scene_seed").get<std::uint64_t>();
  c.eval.episode_seed = ev.at("episode_seed").get<std::uint64_t>();
  c.eval.threads = ev.at("threads").get<int>();

  const json& d = merged.at("demos");
  c.demos.count = d.at("count").get<int>();
  c.demos.episodes_per_scene = d.at("episodes_per_scene").get<int>();

  c.validate();
  return c;
}

void RunConfig::validate() const {
  require_one_of("task", task, {"imagenav", "objectnav"});
  require_one_of("reward", reward, {"zer", "potential"});
  require_one_of("obs", obs, {"image", "compass"});
  require_one_of("encoder", encoder, {"micro", "tiny", "small", "paper"});
  require_one_of("augment", augment, {"none", "imagenav", "objectnav"});
  NAV_CHECK_CONFIG(image_size > 0, "image_size must be positive");
  NAV_CHECK_CONFIG(!out_dir.empty(), "out_dir must be set");

  NAV_CHECK_CONFIG(episodes.max_steps > 0, "episodes.max_steps must be positive");
  NAV_CHECK_CONFIG(
      episodes.min_geodesic > 0 && episodes.max_geodesic > episodes.min_geodesic,
      "episodes: geodesic band is empty");

  NAV_CHECK_CONFIG(ppo.num_envs > 0 && ppo.rollout_length > 0 &&
                       ppo.ppo_epochs > 0 && ppo.minibatches > 0,
                   "ppo: counts must be positive");
  NAV_CHECK_CONFIG(ppo.learning_rate > 0, "ppo.learning_rate must be positive");
  NAV_CHECK_CONFIG(ppo.total_env_steps > 0,
                   "ppo.total_env_steps must be positive");
  NAV_CHECK_CONFIG(ppo.eval_every_updates > 0 && ppo.eval_episodes > 0,
                   "ppo: eval cadence must be positive");

  NAV_CHECK_CONFIG(bc.encoder_lr > 0 && bc.head_lr > 0,
                   "bc: learning rates must be positive");
  NAV_CHECK_CONFIG(bc.batch_episodes > 0 && bc.epochs > 0,
                   "bc: batch_episodes and epochs must be positive");
  NAV_CHECK_CONFIG(bc.holdout_fraction > 0 && bc.holdout_fraction < 1,
                   "bc.holdout_fraction must be in (0, 1)");

  NAV_CHECK_CONFIG(mae.mask_ratio > 0 && mae.mask_ratio < 1,
                   "mae.mask_ratio must be in (0, 1)");
  NAV_CHECK_CONFIG(mae.learning_rate > 0, "mae.learning_rate must be positive");
  NAV_CHECK_CONFIG(mae.epochs > 0 && mae.batch_size > 0,
                   "mae: epochs and batch_size must be positive");
  NAV_CHECK_CONFIG(mae.num_frames >= 2, "mae.num_frames must be at least 2");
  NAV_CHECK_CONFIG(mae.holdout_fraction > 0 && mae.holdout_fraction < 1,
                   "mae.holdout_fraction must be in (0, 1)");

  NAV_CHECK_CONFIG(eval.num_episodes > 0 && eval.episodes_per_scene > 0,
                   "eval: episode counts must be positive");
  NAV_CHECK_CONFIG(eval.threads > 0, "eval.threads must be positive");

  NAV_CHECK_CONFIG(demos.count > 0 && demos.episodes_per_scene > 0,
                   "demos: counts must be positive");
}

void check_schema(const json& doc, const json& schema,
                  const std::string& path) {
  NAV_CHECK_CONFIG(doc.is_object(), "config: expected an object at " +
                                        (path.empty() ? "the root" : path));
  for (const auto& [key, value] : doc.items()) {
    const std::string at = path.empty() ? key : path + "." + key;
    NAV_CHECK_CONFIG(schema.contains(key), "config: unknown key '" + at + "'");
    const json& ref = schema.at(key);
    if (ref.is_object()) {
      check_schema(value, ref, at);
      continue;
    }
    bool ok = false;
    if (ref.is_string()) {
      ok = value.is_string();
    } else if (ref.is_boolean()) {
      ok = value.is_boolean();
    } else if (ref.is_number_unsigned()) {
      ok = value.is_number_unsigned();  // rejects negatives for seeds
    } else if (ref.is_number_integer()) {
      ok = value.is_number_integer() || value.is_number_unsigned();
    } else if (ref.is_number_float()) {
      ok = value.is_number();  // integers promote to float
    }
    NAV_CHECK_CONFIG(ok, "config: wrong type for '" + at + "' (expected " +
                             ref.type_name() + ", got " + value.type_name() +
                             ")");
  }
}

void merge_json(json& base, const json& patch) {
  if (!patch.is_object() || !base.is_object()) {
    base = patch;
    return;
  }
  for (const auto& [key, value] : patch.items()) {
    if (value.is_object() && base.contains(key) && base[key].is_object())
      merge_json(base[key], value);
    else
      base[key] = value;
  }
}

namespace {

std::string preset_path(const std::string& name) {
  if (fs::exists(name)) return name;
  const std::string bundled = "configs/" + name + ".json";
  if (fs::exists(bundled)) return bundled;
  throw ConfigError("preset not found: " + name + " (also tried " + bundled +
                    ")");
}

}  // namespace

RunConfig resolve_config(const std::string& preset,
                         const std::string& config_path,
                         const json& flag_patch) {
  const json schema = RunConfig{}.to_json();
  json merged = schema;
  if (!preset.empty()) {
    const json doc = load_json_file(preset_path(preset));
    check_schema(doc, schema);
    merge_json(merged, doc);
  }
  if (!config_path.empty()) {
    const json doc = load_json_file(config_path);
    check_schema(doc, schema);
    merge_json(merged, doc);
  }
  if (!flag_patch.is_null() && !flag_patch.empty()) {
    check_schema(flag_patch, schema);
    merge_json(merged, flag_patch);
  }
  if (const char* env = std::getenv("NAVCTL_SEED");
      env != nullptr && *env != '\0') {
    std::uint64_t v = 0;
    const char* end = env + std::strlen(env);
    const auto [p, ec] = std::from_chars(env, end, v);
    NAV_CHECK_CONFIG(ec == std::errc() && p == end,
                     "NAVCTL_SEED must be an unsigned integer");
    merged["seed"] = v;
  }
  return RunConfig::from_json(merged);
}

// ---- config -> module wiring ----

vit::ViTConfig encoder_preset(const std::string& name, int image_size) {
  vit::ViTConfig c;  // tiny: 64 px, patch 8, embed 96, depth 3, heads 3
  if (name == "micro") {
    c.patch_size = 16;
    c.embed_dim = 32;
    c.depth = 1;
    c.num_heads = 2;
  } else if (name == "small") {
    c.embed_dim = 192;
    c.depth = 6;
  } else if (name == "paper") {
    c.image_size = 128;
    c.patch_size = 16;
    c.embed_dim = 384;
    c.depth = 12;
    c.num_heads = 6;
  } else {
    NAV_CHECK_CONFIG(name == "tiny", "unknown encoder preset: " + name);
  }
  if (image_size > 0) c.image_size = image_size;
  c.validate();
  return c;
}

std::optional<policy::AugmentConfig> augment_preset(const std::string& name) {
  if (name == "none") return std::nullopt;
  policy::AugmentConfig a;
  if (name == "imagenav") return a;
  if (name == "objectnav") {
    a.jitter_strength = 0.4;
    a.shift_pad = 16;
    return a;
  }
  throw ConfigError("unknown augment preset: " + name);
}

policy::PolicyConfig policy_config(const RunConfig& cfg) {
  policy::PolicyConfig pc;
  pc.obs_mode = cfg.obs == "compass" ? policy::ObsMode::kCompass
                                     : policy::ObsMode::kImage;
  pc.goal_mode = cfg.task == "objectnav" ? policy::GoalMode::kCategory
                                         : policy::GoalMode::kImage;
  pc.encoder = encoder_preset(cfg.encoder, cfg.image_size);
  return pc;
}

train::VecEnvConfig vec_env_config(const RunConfig& cfg) {
  train::VecEnvConfig ec;
  ec.num_envs = cfg.ppo.num_envs;
  ec.task = train::task_from(cfg.task);
  ec.obs_mode = cfg.obs == "compass" ? policy::ObsMode::kCompass
                                     : policy::ObsMode::kImage;
  ec.image_size = cfg.image_size;
  ec.scene_seed = cfg.episodes.scene_seed;
  ec.episode_seed = cfg.episodes.episode_seed;
  ec.reward = train::reward_kind_from(cfg.reward);
  ec.sampler.max_steps = cfg.episodes.max_steps;
  ec.sampler.min_geodesic = cfg.episodes.min_geodesic;
  ec.sampler.max_geodesic = cfg.episodes.max_geodesic;
  return ec;
}

eval::EvalConfig eval_config(const RunConfig& cfg) {
  eval::EvalConfig ec;
  ec.num_episodes = cfg.eval.num_episodes;
  ec.objectnav = cfg.task == "objectnav";
  ec.scene_seed = cfg.eval.scene_seed;
  ec.episode_seed = cfg.eval.episode_seed;
  ec.episodes_per_scene = cfg.eval.episodes_per_scene;
  ec.sampler.max_steps = cfg.episodes.max_steps;
  ec.sampler.min_geodesic = cfg.episodes.min_geodesic;
  ec.sampler.max_geodesic = cfg.episodes.max_geodesic;
  return ec;
}

// ---- commands ----

namespace {

void prepare_run_dir(const RunConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  write_text(cfg.out_dir + "/config.resolved.json",
             cfg.to_json().dump(2) + "\n");
}

void finish(const RunConfig& cfg, const json& summary, std::ostream& out) {
  write_text(cfg.out_dir + "/summary.json", summary.dump(2) + "\n");
  out << summary.dump(2) << "\n";
}

struct AgentSpec {
  eval::AgentFactory factory;
  std::shared_ptr<policy::PolicyNet<float>> net;  // keeps weights alive
};

AgentSpec make_agent(const RunConfig& cfg, const std::string& kind) {
  AgentSpec spec;
  if (kind == "oracle") {
    spec.factory = [] { return std::make_unique<eval::OracleAgent>(); };
  } else if (kind == "random") {
    const std::uint64_t seed = cfg.seed;
    spec.factory = [seed] { return std::make_unique<eval::RandomAgent>(seed); };
  } else if (kind == "policy") {
    NAV_CHECK_CONFIG(!cfg.checkpoint.empty(),
                     "a policy agent needs --checkpoint");
    spec.net = std::make_shared<policy::PolicyNet<float>>(
        policy::load_policy(cfg.checkpoint));
    const auto net = spec.net;
    const auto aug = augment_preset(cfg.augment);
    const std::uint64_t aug_seed = splitmix64(cfg.seed ^ 0xa7a91e5ULL);
    spec.factory = [net, aug, aug_seed] {
      return std::make_unique<eval::PolicyAgent>(*net, 0, aug, aug_seed);
    };
  } else {
    throw ConfigError("unknown agent kind: " + kind);
  }
  return spec;
}

void render_plots(const RunConfig& cfg, const eval::EvalConfig& ec,
                  const AgentSpec& spec) {
  const eval::EpisodePlan plan = eval::plan_episodes(ec);
  const std::string dir = cfg.out_dir + "/plots";
  fs::create_directories(dir);
  const auto agent = spec.factory();
  for (std::size_t i = 0; i < plan.episodes.size(); ++i) {
    const sim::Scene& scene = plan.scenes[plan.scene_of[i]];
    const sim::TrajectoryRecord traj =
        eval::run_episode(scene, plan.episodes[i], *agent);
    char name[32];
    std::snprintf(name, sizeof name, "/ep_%04zu.svg", i);
    write_text(dir + name, eval::render_topdown(scene, traj));
  }
}

int cmd_gen_demos(const RunConfig& cfg, std::ostream& out) {
  eval::EvalConfig pc = eval_config(cfg);
  pc.num_episodes = cfg.demos.count;
  pc.episodes_per_scene = cfg.demos.episodes_per_scene;
  pc.scene_seed = cfg.episodes.scene_seed;  // demos come from the train stream
  pc.episode_seed = cfg.episodes.episode_seed;
  const eval::EpisodePlan plan = eval::plan_episodes(pc);

  std::vector<sim::Demo> demos(plan.episodes.size());
  std::size_t actions = 0;
  for (std::size_t i = 0; i < plan.episodes.size(); ++i) {
    const sim::Scene& scene = plan.scenes[plan.scene_of[i]];
    const sim::TrajectoryRecord traj =
        sim::oracle_demonstration(scene, plan.episodes[i]);
    demos[i].episode = plan.episodes[i];
    demos[i].actions.reserve(traj.steps.size());
    for (const sim::StepRecord& s : traj.steps)
      demos[i].actions.push_back(s.action);
    actions += demos[i].actions.size();
  }
  const std::string path = cfg.out_dir + "/demos.jsonl";
  sim::write_demos(path, demos);
  finish(cfg,
         json{{"command", "gen-demos"},
              {"demos", demos.size()},
              {"actions", actions},
              {"path", path}},
         out);
  return 0;
}

std::pair<Tensor<float>, Tensor<float>> split_frames(const Tensor<float>& all,
                                                     double holdout_fraction) {
  const int n = all.dim(0);
  NAV_CHECK_CONFIG(n >= 2, "mae: need at least two frames");
  const int held = std::clamp(
      static_cast<int>(std::lround(n * holdout_fraction)), 1, n - 1);
  const std::int64_t item = all.numel() / n;
  const auto take = [&](int from, int count) {
    Tensor<float> t =
        Tensor<float>::zeros({count, all.dim(1), all.dim(2), all.dim(3)});
    std::memcpy(t.data(), all.data() + from * item,
                static_cast<std::size_t>(count * item) * sizeof(float));
    return t;
  };
  return {take(0, n - held), take(n - held, held)};
}

int cmd_pretrain_mae(const RunConfig& cfg, std::ostream& out) {
  const vit::ViTConfig enc = encoder_preset(cfg.encoder, cfg.image_size);
  const Tensor<float> frames =
      train::render_frames(cfg.episodes.scene_seed, cfg.episodes.episode_seed,
                           cfg.mae.num_frames, enc.image_size);
  const auto [train_frames, held_frames] =
      split_frames(frames, cfg.mae.holdout_fraction);

  train::MaeModel model(enc, cfg.mae.mask_ratio, cfg.seed);
  AdamWConfig<float> oc;
  oc.learning_rate = static_cast<float>(cfg.mae.learning_rate);
  AdamW<float> optim(oc);
  optim.add_params(model.params.items());

  train::MetricsLogger log(cfg.out_dir + "/metrics.jsonl");
  Rng rng(splitmix64(cfg.seed ^ 0x3aeULL));
  constexpr std::uint64_t kEvalMaskSeed = 4242;
  const double initial =
      train::mae_eval_loss(model, held_frames, kEvalMaskSeed, cfg.mae.batch_size);
  double train_loss = 0.0;
  double eval_loss = initial;
  for (int epoch = 0; epoch < cfg.mae.epochs; ++epoch) {
    train_loss = train::mae_pretrain_epoch(model, train_frames, optim, rng,
                                           cfg.mae.batch_size);
    eval_loss = train::mae_eval_loss(model, held_frames, kEvalMaskSeed,
                                     cfg.mae.batch_size);
    log.write({{"kind", "mae_epoch"},
               {"epoch", epoch},
               {"train_loss", train_loss},
               {"eval_loss", eval_loss}});
  }
  const std::string ckpt = cfg.out_dir + "/mae.ckpt";
  train::save_mae(ckpt, model);
  finish(cfg,
         json{{"command", "pretrain-mae"},
              {"epochs", cfg.mae.epochs},
              {"frames", frames.dim(0)},
              {"initial_eval_loss", initial},
              {"final_eval_loss", eval_loss},
              {"loss_ratio", eval_loss / initial},
              {"checkpoint", ckpt}},
         out);
  return 0;
}

int cmd_train_ppo(const RunConfig& cfg, std::ostream& out) {
  policy::PolicyNet<float> net(policy_config(cfg), cfg.seed);
  if (!cfg.pretrained_encoder.empty())
    train::load_encoder_params(net, cfg.pretrained_encoder);

  train::PpoRunConfig rc;
  rc.ppo.num_envs = cfg.ppo.num_envs;
  rc.ppo.rollout_length = cfg.ppo.rollout_length;
  rc.ppo.ppo_epochs = cfg.ppo.ppo_epochs;
  rc.ppo.minibatches = cfg.ppo.minibatches;
  rc.ppo.clip_epsilon = cfg.ppo.clip_epsilon;
  rc.ppo.discount = cfg.ppo.discount;
  rc.ppo.gae_lambda = cfg.ppo.gae_lambda;
  rc.ppo.learning_rate = cfg.ppo.learning_rate;
  rc.ppo.value_coef = cfg.ppo.value_coef;
  rc.ppo.entropy_coef = cfg.ppo.entropy_coef;
  rc.ppo.max_grad_norm = cfg.ppo.max_grad_norm;
  rc.env = vec_env_config(cfg);
  rc.seed = cfg.seed;
  rc.total_env_steps = cfg.ppo.total_env_steps;
  rc.eval_every_updates = cfg.ppo.eval_every_updates;
  rc.eval_episodes = cfg.ppo.eval_episodes;
  rc.eval_episode_seed = cfg.ppo.eval_episode_seed;
  rc.early_stop_success = cfg.ppo.early_stop_success;
  rc.checkpoint_path = cfg.out_dir + "/policy.ckpt";

  const train::PpoRunResult res =
      train::run_ppo(rc, net, train::MetricsLogger(cfg.out_dir + "/metrics.jsonl"));
  finish(cfg,
         json{{"command", "train-ppo"},
              {"env_steps", res.env_steps},
              {"updates", res.updates},
              {"best_success", res.best_success},
              {"final_success", res.final_success},
              {"early_stopped", res.early_stopped},
              {"checkpoint", rc.checkpoint_path}},
         out);
  return 0;
}

int cmd_train_bc(const RunConfig& cfg, std::ostream& out) {
  NAV_CHECK_CONFIG(!cfg.demos_path.empty(),
                   "train-bc needs --demos (a demos.jsonl from gen-demos)");
  const std::vector<sim::Demo> all = sim::read_demos(cfg.demos_path);
  NAV_CHECK_CONFIG(all.size() >= 2, "train-bc: need at least two demos");
  const int n = static_cast<int>(all.size());
  const int held = std::clamp(
      static_cast<int>(std::lround(n * cfg.bc.holdout_fraction)), 1, n - 1);
  const std::vector<sim::Demo> train_set(all.begin(), all.end() - held);
  const std::vector<sim::Demo> holdout(all.end() - held, all.end());

  policy::PolicyNet<float> net(policy_config(cfg), cfg.seed);
  if (!cfg.pretrained_encoder.empty())
    train::load_encoder_params(net, cfg.pretrained_encoder);

  train::BcConfig bc;
  bc.encoder_lr = cfg.bc.encoder_lr;
  bc.head_lr = cfg.bc.head_lr;
  bc.weight_decay = cfg.bc.weight_decay;
  bc.batch_episodes = cfg.bc.batch_episodes;
  bc.epochs = cfg.bc.epochs;
  AdamW<float> optim = train::make_bc_optimizer(net, bc);

  train::SceneCache scenes;
  train::MetricsLogger log(cfg.out_dir + "/metrics.jsonl");
  Rng rng(splitmix64(cfg.seed ^ 0xbcULL));
  std::vector<sim::Demo> order = train_set;
  train::BcStats held_stats;
  double train_loss = 0.0;
  double train_acc = 0.0;
  for (int epoch = 0; epoch < bc.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    double acc_sum = 0.0;
    std::int64_t act_sum = 0;
    const std::size_t batch = static_cast<std::size_t>(bc.batch_episodes);
    for (std::size_t i = 0; i < order.size(); i += batch) {
      const std::size_t m = std::min(batch, order.size() - i);
      const train::BcStats s = train::bc_update(
          net, optim, std::span<const sim::Demo>(order).subspan(i, m), scenes);
      loss_sum += s.loss * static_cast<double>(s.actions);
      acc_sum += s.action_accuracy * static_cast<double>(s.actions);
      act_sum += s.actions;
    }
    train_loss = loss_sum / static_cast<double>(act_sum);
    train_acc = acc_sum / static_cast<double>(act_sum);
    held_stats = train::bc_evaluate(net, holdout, scenes);
    log.write({{"kind", "bc_epoch"},
               {"epoch", epoch},
               {"train_loss", train_loss},
               {"train_accuracy", train_acc},
               {"holdout_loss", held_stats.loss},
               {"holdout_accuracy", held_stats.action_accuracy}});
  }
  const std::string ckpt = cfg.out_dir + "/policy.ckpt";
  policy::save_policy(ckpt, net, {{"trainer", "bc"}});
  finish(cfg,
         json{{"command", "train-bc"},
              {"epochs", bc.epochs},
              {"train_demos", train_set.size()},
              {"holdout_demos", holdout.size()},
              {"train_accuracy", train_acc},
              {"holdout_accuracy", held_stats.action_accuracy},
              {"checkpoint", ckpt}},
         out);
  return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& agent_kind, bool plots,
             std::ostream& out) {
  const eval::EvalConfig ec = eval_config(cfg);
  const AgentSpec spec = make_agent(cfg, agent_kind);
  const eval::EvalReport rep =
      eval::evaluate(spec.factory, ec, cfg.eval.threads);
  write_text(cfg.out_dir + "/report.json", rep.to_json().dump(2) + "\n");
  write_text(cfg.out_dir + "/report.csv", rep.to_csv());
  if (plots) render_plots(cfg, ec, spec);
  finish(cfg,
         json{{"command", "eval"},
              {"agent", agent_kind},
              {"episodes", rep.num_episodes},
              {"success_rate", rep.success_rate},
              {"spl", rep.spl},
              {"angle_success_rate", rep.angle_success_rate},
              {"report", cfg.out_dir + "/report.json"}},
         out);
  return 0;
}

int cmd_analyze(const RunConfig& cfg, const std::string& agent_kind,
                const std::string& report_path, std::ostream& out) {
  eval::EvalReport rep;
  if (!report_path.empty()) {
    rep = eval::EvalReport::from_json(load_json_file(report_path));
  } else {
    const AgentSpec spec = make_agent(cfg, agent_kind);
    rep = eval::evaluate(spec.factory, eval_config(cfg), cfg.eval.threads);
  }
  json counts = json::object();
  json fractions = json::object();
  for (const auto& [cat, count] : rep.failure_counts()) {
    const std::string name = eval::failure_name(cat);
    counts[name] = count;
    fractions[name] = rep.num_episodes > 0
                          ? static_cast<double>(count) / rep.num_episodes
                          : 0.0;
  }
  const json doc{{"format", "nav-failure-analysis"},
                 {"version", 1},
                 {"num_episodes", rep.num_episodes},
                 {"success_rate", rep.success_rate},
                 {"spl", rep.spl},
                 {"counts", counts},
                 {"fractions", fractions}};
  write_text(cfg.out_dir + "/failures.json", doc.dump(2) + "\n");
  out << doc.dump(2) << "\n";
  return 0;
}

std::vector<reward::StepInfo> random_cycle(Rng& rng) {
  const int transitions = rng.uniform_int(2, 30);
  std::vector<reward::StepInfo> traj;
  traj.reserve(static_cast<std::size_t>(transitions) + 1);
  for (int i = 0; i < transitions; ++i) {
    reward::StepInfo s;
    s.d = rng.uniform(0.0, 3.0);
    s.theta = rng.uniform(0.0, kPi);
    traj.push_back(s);
  }
  traj.push_back(traj.front());
  return traj;
}

int cmd_reward_audit(const RunConfig& cfg, const std::string& loop, int cycles,
                     std::ostream& out) {
  NAV_CHECK_CONFIG(cycles > 0, "reward-audit: --cycles must be positive");
  const reward::RewardConfig rcfg;
  const reward::RewardFn fn =
      train::reward_fn(train::reward_kind_from(cfg.reward));
  json doc{{"format", "nav-reward-audit"},
           {"version", 1},
           {"reward", cfg.reward},
           {"loop", loop}};
  bool hackable = false;
  if (loop == "builtin-hack") {
    const std::vector<reward::StepInfo> trace = reward::hack_loop_trace(rcfg);
    const reward::ShapingAudit a = reward::cycle_shaping_sum(trace, fn, rcfg);
    hackable = a.hackable;
    doc["transitions"] = trace.size() - 1;
    doc["angle_term_sum"] = a.angle_term_sum;
    doc["distance_term_sum"] = a.distance_term_sum;
    doc["slack_sum"] = a.slack_sum;
    doc["sparse_sum"] = a.sparse_sum;
    doc["total"] = a.total();
  } else if (loop == "random-cycles") {
    Rng rng(cfg.seed);
    double worst_angle = 0.0;
    double worst_distance = 0.0;
    double worst_total = 0.0;
    int hackable_cycles = 0;
    for (int i = 0; i < cycles; ++i) {
      const std::vector<reward::StepInfo> trace = random_cycle(rng);
      const reward::ShapingAudit a = reward::cycle_shaping_sum(trace, fn, rcfg);
      worst_angle = std::max(worst_angle, std::fabs(a.angle_term_sum));
      worst_distance = std::max(worst_distance, std::fabs(a.distance_term_sum));
      worst_total = std::max(worst_total, a.total());
      if (a.hackable) {
        ++hackable_cycles;
        hackable = true;
      }
    }
    doc["cycles"] = cycles;
    doc["hackable_cycles"] = hackable_cycles;
    doc["max_abs_angle_term_sum"] = worst_angle;
    doc["max_abs_distance_term_sum"] = worst_distance;
    doc["max_total"] = worst_total;
  } else {
    throw ConfigError("unknown loop kind: " + loop);
  }
  doc["hackable"] = hackable;
  write_text(cfg.out_dir + "/audit.json", doc.dump(2) + "\n");
  out << doc.dump(2) << "\n";
  return hackable ? 3 : 0;
}

int cmd_plot(const RunConfig& cfg, const std::string& agent_kind,
             std::ostream& out) {
  const eval::EvalConfig ec = eval_config(cfg);
  const AgentSpec spec = make_agent(cfg, agent_kind);
  render_plots(cfg, ec, spec);
  finish(cfg,
         json{{"command", "plot"},
              {"agent", agent_kind},
              {"episodes", ec.num_episodes},
              {"dir", cfg.out_dir + "/plots"}},
         out);
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out,
        std::ostream& err) {
  CLI::App app{"navctl: desk-scale visual navigation testbed"};
  app.require_subcommand(1);

  std::string preset;
  std::string config_path;
  app.add_option("-p,--preset", preset,
                 "preset name (configs/<name>.json) or a file path");
  app.add_option("-c,--config", config_path, "JSON run config");

  std::string f_task, f_reward, f_obs, f_encoder, f_augment, f_out;
  std::string f_pretrained, f_checkpoint, f_demos;
  std::uint64_t f_seed = 0, f_scene_seed = 0, f_episode_seed = 0;
  int f_image_size = 0, f_num_envs = 0, f_epochs = 0, f_demo_count = 0;
  int f_eval_episodes = 0, f_threads = 0, f_max_steps = 0, f_mae_frames = 0;
  std::int64_t f_total_steps = 0;
  double f_early_stop = 0.0;

  auto* o_task = app.add_option("--task", f_task, "imagenav | objectnav");
  auto* o_reward = app.add_option("--reward", f_reward, "zer | potential");
  auto* o_obs = app.add_option("--obs", f_obs, "image | compass");
  auto* o_encoder =
      app.add_option("--encoder", f_encoder, "micro | tiny | small | paper");
  auto* o_augment =
      app.add_option("--augment", f_augment, "none | imagenav | objectnav");
  auto* o_image =
      app.add_option("--image-size", f_image_size, "observation resolution");
  auto* o_seed = app.add_option("--seed", f_seed, "master seed");
  auto* o_out = app.add_option("-o,--out", f_out, "run directory");
  auto* o_pretrained = app.add_option("--pretrained-encoder", f_pretrained,
                                      "checkpoint providing enc.* tensors");
  auto* o_checkpoint =
      app.add_option("--checkpoint", f_checkpoint, "trained policy checkpoint");
  auto* o_demos = app.add_option("--demos", f_demos, "demo dataset (JSONL)");
  auto* o_scene_seed =
      app.add_option("--scene-seed", f_scene_seed, "training scene stream");
  auto* o_episode_seed = app.add_option("--episode-seed", f_episode_seed,
                                        "training episode stream");
  auto* o_max_steps =
      app.add_option("--max-steps", f_max_steps, "episode step budget");
  auto* o_num_envs =
      app.add_option("--num-envs", f_num_envs, "parallel environments");
  auto* o_total_steps = app.add_option("--total-steps", f_total_steps,
                                       "PPO environment-step budget");
  auto* o_early_stop = app.add_option(
      "--early-stop", f_early_stop, "stop once eval success rate reaches this");
  auto* o_epochs =
      app.add_option("--epochs", f_epochs, "training epochs (BC and MAE)");
  auto* o_demo_count =
      app.add_option("--demo-count", f_demo_count, "demos to generate");
  auto* o_eval_episodes = app.add_option("--eval-episodes", f_eval_episodes,
                                         "evaluation episode count");
  auto* o_threads =
      app.add_option("--threads", f_threads, "evaluation worker threads");
  auto* o_mae_frames =
      app.add_option("--mae-frames", f_mae_frames, "frames in the MAE corpus");

  CLI::App* sc_gen = app.add_subcommand(
      "gen-demos", "sample episodes and write oracle demonstrations");
  CLI::App* sc_mae = app.add_subcommand(
      "pretrain-mae", "masked-autoencoder pretraining on rendered frames");
  CLI::App* sc_ppo = app.add_subcommand("train-ppo", "PPO training");
  CLI::App* sc_bc =
      app.add_subcommand("train-bc", "behavior cloning on oracle demos");
  CLI::App* sc_eval = app.add_subcommand(
      "eval", "run evaluation episodes and write a report");
  CLI::App* sc_fail = app.add_subcommand(
      "analyze-failures", "failure histogram from a report or a fresh run");
  CLI::App* sc_audit = app.add_subcommand(
      "reward-audit", "closed-loop shaping audit of the configured reward");
  CLI::App* sc_plot = app.add_subcommand(
      "plot", "top-down SVG renderings of evaluation episodes");
  for (CLI::App* s :
       {sc_gen, sc_mae, sc_ppo, sc_bc, sc_eval, sc_fail, sc_audit, sc_plot})
    s->fallthrough();

  std::string eval_agent = "policy";
  bool eval_plots = false;
  sc_eval->add_option("--agent", eval_agent, "policy | oracle | random");
  sc_eval->add_flag("--plots", eval_plots, "also write per-episode SVGs");

  std::string fail_agent = "policy";
  std::string fail_report;
  sc_fail->add_option("--agent", fail_agent, "policy | oracle | random");
  sc_fail->add_option("--report", fail_report,
                      "existing report.json to analyze");

  std::string audit_loop = "builtin-hack";
  int audit_cycles = 1000;
  sc_audit->add_option("--loop", audit_loop, "builtin-hack | random-cycles");
  sc_audit->add_option("--cycles", audit_cycles, "random cycles to draw");

  std::string plot_agent = "oracle";
  sc_plot->add_option("--agent", plot_agent, "policy | oracle | random");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  json patch = json::object();
  const auto set = [&patch](const char* dotted, json v) {
    json* cur = &patch;
    std::string key(dotted);
    for (std::size_t pos = key.find('.'); pos != std::string::npos;
         pos = key.find('.')) {
      cur = &(*cur)[key.substr(0, pos)];
      key = key.substr(pos + 1);
    }
    (*cur)[key] = std::move(v);
  };
  if (o_task->count() > 0) set("task", f_task);
  if (o_reward->count() > 0) set("reward", f_reward);
  if (o_obs->count() > 0) set("obs", f_obs);
  if (o_encoder->count() > 0) set("encoder", f_encoder);
  if (o_augment->count() > 0) set("augment", f_augment);
  if (o_image->count() > 0) set("image_size", f_image_size);
  if (o_seed->count() > 0) set("seed", f_seed);
  if (o_out->count() > 0) set("out_dir", f_out);
  if (o_pretrained->count() > 0) set("pretrained_encoder", f_pretrained);
  if (o_checkpoint->count() > 0) set("checkpoint", f_checkpoint);
  if (o_demos->count() > 0) set("demos_path", f_demos);
  if (o_scene_seed->count() > 0) set("episodes.scene_seed", f_scene_seed);
  if (o_episode_seed->count() > 0) set("episodes.episode_seed", f_episode_seed);
  if (o_max_steps->count() > 0) set("episodes.max_steps", f_max_steps);
  if (o_num_envs->count() > 0) set("ppo.num_envs", f_num_envs);
  if (o_total_steps->count() > 0) set("ppo.total_env_steps", f_total_steps);
  if (o_early_stop->count() > 0) set("ppo.early_stop_success", f_early_stop);
  if (o_epochs->count() > 0) {
    set("bc.epochs", f_epochs);
    set("mae.epochs", f_epochs);
  }
  if (o_demo_count->count() > 0) set("demos.count", f_demo_count);
  if (o_eval_episodes->count() > 0) set("eval.num_episodes", f_eval_episodes);
  if (o_threads->count() > 0) set("eval.threads", f_threads);
  if (o_mae_frames->count() > 0) set("mae.num_frames", f_mae_frames);

  try {
    const RunConfig cfg = resolve_config(preset, config_path, patch);
    prepare_run_dir(cfg);
    if (sc_gen->parsed()) return cmd_gen_demos(cfg, out);
    if (sc_mae->parsed()) return cmd_pretrain_mae(cfg, out);
    if (sc_ppo->parsed()) return cmd_train_ppo(cfg, out);
    if (sc_bc->parsed()) return cmd_train_bc(cfg, out);
    if (sc_eval->parsed()) return cmd_eval(cfg, eval_agent, eval_plots, out);
    if (sc_fail->parsed()) return cmd_analyze(cfg, fail_agent, fail_report, out);
    if (sc_audit->parsed())
      return cmd_reward_audit(cfg, audit_loop, audit_cycles, out);
    if (sc_plot->parsed()) return cmd_plot(cfg, plot_agent, out);
    err << "navctl: no command\n";
    return 1;
  } catch (const CheckpointError& e) {
    err << "navctl: checkpoint: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "navctl: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace nav::cli
