#include "nav/policy.hpp"

namespace nav::policy {

namespace {

std::string obs_mode_name(ObsMode m) {
  return m == ObsMode::kImage ? "image" : "compass";
}

ObsMode obs_mode_from(const std::string& s) {
  if (s == "image") return ObsMode::kImage;
  if (s == "compass") return ObsMode::kCompass;
  throw ConfigError("unknown obs_mode: " + s);
}

std::string goal_mode_name(GoalMode m) {
  return m == GoalMode::kImage ? "image" : "category";
}

GoalMode goal_mode_from(const std::string& s) {
  if (s == "image") return GoalMode::kImage;
  if (s == "category") return GoalMode::kCategory;
  throw ConfigError("unknown goal_mode: " + s);
}

}  // namespace

void PolicyConfig::validate() const {
  if (obs_mode == ObsMode::kImage) {
    encoder.validate();
    NAV_CHECK_CONFIG(approx_output_size > 0,
                     "policy: approx_output_size must be positive");
  } else {
    NAV_CHECK_CONFIG(compass_dim > 0 && compass_hidden > 0,
                     "policy: compass dims must be positive");
    NAV_CHECK_CONFIG(goal_mode == GoalMode::kImage,
                     "policy: compass mode carries the goal in the vector");
  }
  if (goal_mode == GoalMode::kCategory)
    NAV_CHECK_CONFIG(category_count > 0 && category_embed_dim > 0,
                     "policy: category embedding dims must be positive");
  NAV_CHECK_CONFIG(prev_action_embed_dim > 0 && lstm_hidden > 0,
                   "policy: lstm and action embedding dims must be positive");
  NAV_CHECK_CONFIG(num_actions == sim::kNumActions,
                   "policy: action head must match the simulator vocabulary");
}

void to_json(nlohmann::json& j, const PolicyConfig& c) {
  j = nlohmann::json{{"encoder", c.encoder},
                     {"approx_output_size", c.approx_output_size},
                     {"obs_mode", obs_mode_name(c.obs_mode)},
                     {"goal_mode", goal_mode_name(c.goal_mode)},
                     {"share_encoder_with_goal", c.share_encoder_with_goal},
                     {"compass_dim", c.compass_dim},
                     {"compass_hidden", c.compass_hidden},
                     {"category_count", c.category_count},
                     {"category_embed_dim", c.category_embed_dim},
                     {"prev_action_embed_dim", c.prev_action_embed_dim},
                     {"lstm_hidden", c.lstm_hidden},
                     {"num_actions", c.num_actions}};
}

void from_json(const nlohmann::json& j, PolicyConfig& c) {
  j.at("encoder").get_to(c.encoder);
  j.at("approx_output_size").get_to(c.approx_output_size);
  c.obs_mode = obs_mode_from(j.at("obs_mode").get<std::string>());
  c.goal_mode = goal_mode_from(j.at("goal_mode").get<std::string>());
  j.at("share_encoder_with_goal").get_to(c.share_encoder_with_goal);
  j.at("compass_dim").get_to(c.compass_dim);
  j.at("compass_hidden").get_to(c.compass_hidden);
  j.at("category_count").get_to(c.category_count);
  j.at("category_embed_dim").get_to(c.category_embed_dim);
  j.at("prev_action_embed_dim").get_to(c.prev_action_embed_dim);
  j.at("lstm_hidden").get_to(c.lstm_hidden);
  j.at("num_actions").get_to(c.num_actions);
}

void save_policy(const std::string& path, const PolicyNet<float>& net,
                 const nlohmann::json& extra_meta) {
  Checkpoint ck;
  ck.meta = extra_meta;
  ck.meta["format"] = "nav-policy";
  ck.meta["version"] = 1;
  ck.meta["config"] = net.cfg;
  pack_params(net.params, ck);
  save_checkpoint(path, ck);
}

namespace {

PolicyConfig policy_header(const Checkpoint& ck) {
  NAV_CHECK(ck.meta.contains("format") && ck.meta["format"] == "nav-policy",
            CheckpointError, "not a policy checkpoint");
  NAV_CHECK(ck.meta.value("version", 0) == 1, CheckpointError,
            "unsupported policy checkpoint version");
  try {
    return ck.meta.at("config").get<PolicyConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad policy config header: ") +
                          e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("bad policy config header: ") +
                          e.what());
  }
}

}  // namespace

PolicyNet<float> load_policy(const std::string& path) {
  const Checkpoint ck = load_checkpoint(path);
  PolicyNet<float> net(policy_header(ck), /*seed=*/0);
  unpack_params(ck, net.params);
  return net;
}

void load_policy_into(const std::string& path, PolicyNet<float>& net) {
  const Checkpoint ck = load_checkpoint(path);
  NAV_CHECK(policy_header(ck) == net.cfg, CheckpointError,
            "policy checkpoint was trained with a different configuration");
  unpack_params(ck, net.params);
}

nlohmann::json read_policy_meta(const std::string& path) {
  return load_checkpoint(path).meta;
}

}  // namespace nav::policy
