#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

#include <json.hpp>

#include "nav/eval.hpp"
#include "nav/policy.hpp"
#include "nav/train.hpp"

namespace nav::cli {

/// One experiment, one JSON document. The schema is strict: unknown or
/// type-mismatched keys anywhere in the document are configuration errors.
struct RunConfig {
  std::string task = "imagenav";     // imagenav | objectnav
  std::string reward = "potential";  // zer | potential
  std::string obs = "image";         // image | compass
  std::string encoder = "tiny";      // micro | tiny | small | paper
  std::string augment = "none";      // none | imagenav | objectnav
  int image_size = 64;
  std::uint64_t seed = 1;
  std::string out_dir = "runs/out";
  std::string pretrained_encoder;  // checkpoint whose enc.* tensors seed the policy
  std::string checkpoint;          // trained policy (eval / plot input)
  std::string demos_path;          // oracle demo dataset (train-bc input)

  struct Episodes {
    std::uint64_t scene_seed = 1;
    std::uint64_t episode_seed = 1000;
    int max_steps = 200;
    double min_geodesic = 2.0;
    double max_geodesic = 25.0;
  } episodes;

  struct Ppo {
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
    std::int64_t total_env_steps = 2'000'000;
    int eval_every_updates = 25;
    int eval_episodes = 32;
    std::uint64_t eval_episode_seed = 900'000;
    double early_stop_success = -1.0;
  } ppo;

  struct Bc {
    double encoder_lr = 1e-4;
    double head_lr = 1e-3;
    double weight_decay = 1e-6;
    int batch_episodes = 8;
    int epochs = 10;
    double holdout_fraction = 0.1;
  } bc;

  struct Mae {
    double mask_ratio = 0.75;
    double learning_rate = 1.5e-4;
    int epochs = 50;
    int batch_size = 32;
    int num_frames = 2000;
    double holdout_fraction = 0.1;
  } mae;

  struct Eval {
    int num_episodes = 100;
    int episodes_per_scene = 4;
    std::uint64_t scene_seed = 500;
    std::uint64_t episode_seed = 5000;
    int threads = 1;
  } eval;

  struct Demos {
    int count = 500;
    int episodes_per_scene = 4;
  } demos;

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);  // strict, fills defaults
  void validate() const;
};

/// Every key in `doc` must exist in `schema` with the same JSON type
/// (integers may stand in for floating-point values, not vice versa).
void check_schema(const nlohmann::json& doc, const nlohmann::json& schema,
                  const std::string& path = "");

/// Deep merge: objects recurse, everything else replaces.
void merge_json(nlohmann::json& base, const nlohmann::json& patch);

/// Layered resolution: defaults < preset < config file < flag overrides,
/// then the NAVCTL_SEED environment variable on top of everything.
/// `preset` is a file path or a bare name looked up as configs/<name>.json.
RunConfig resolve_config(const std::string& preset,
                         const std::string& config_path,
                         const nlohmann::json& flag_patch);

// ---- config -> module wiring ----

vit::ViTConfig encoder_preset(const std::string& name, int image_size);
std::optional<policy::AugmentConfig> augment_preset(const std::string& name);
policy::PolicyConfig policy_config(const RunConfig& cfg);
train::VecEnvConfig vec_env_config(const RunConfig& cfg);
eval::EvalConfig eval_config(const RunConfig& cfg);

/// The whole CLI: parse, resolve, dispatch. Returns the process exit code:
/// 0 ok, 1 invalid config/input, 2 checkpoint incompatibility, 3 the
/// reward audit found a farmable loop.
int run(int argc, const char* const* argv, std::ostream& out,
        std::ostream& err);

}  // namespace nav::cli
