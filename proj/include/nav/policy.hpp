#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include <json.hpp>

#include "nav/checkpoint.hpp"
#include "nav/color.hpp"
#include "nav/nn.hpp"
#include "nav/sim.hpp"
#include "nav/vit.hpp"

namespace nav::policy {

enum class ObsMode { kImage = 0, kCompass = 1 };
enum class GoalMode { kImage = 0, kCategory = 1 };

struct PolicyConfig {
  vit::ViTConfig encoder;        // image observation pathway
  int approx_output_size = 2048;  // compression sizing target
  ObsMode obs_mode = ObsMode::kImage;
  GoalMode goal_mode = GoalMode::kImage;
  bool share_encoder_with_goal = true;
  int compass_dim = 4;      // vector observation width (compass mode)
  int compass_hidden = 64;  // projection width (compass mode)
  int category_count = sim::kNumCategories;
  int category_embed_dim = 32;
  int prev_action_embed_dim = 32;
  int lstm_hidden = 512;
  int num_actions = sim::kNumActions;

  vit::CompressionSpec compression() const {
    return vit::create_compression_layer(encoder.embed_dim,
                                         encoder.num_patches(),
                                         approx_output_size);
  }

  int obs_feature_size() const {
    return obs_mode == ObsMode::kImage ? compression().output_size
                                       : compass_hidden;
  }

  int goal_feature_size() const {
    // Compass observations already encode the goal; no separate feature.
    if (obs_mode == ObsMode::kCompass) return 0;
    return goal_mode == GoalMode::kCategory ? category_embed_dim
                                            : compression().output_size;
  }

  int feature_size() const {
    return obs_feature_size() + goal_feature_size() + prev_action_embed_dim;
  }

  void validate() const;
  bool operator==(const PolicyConfig&) const = default;
};

void to_json(nlohmann::json& j, const PolicyConfig& c);
void from_json(const nlohmann::json& j, PolicyConfig& c);

// ---- augmentation ----

struct AugmentConfig {
  double jitter_strength = 0.3;  // ImageNav 0.3, ObjectNav 0.4
  int shift_pad = 4;             // ImageNav 4, ObjectNav 16
  bool apply_at_eval = true;

  void validate() const {
    NAV_CHECK_CONFIG(jitter_strength >= 0.0 && jitter_strength < 1.0,
                     "augment: jitter_strength must lie in [0, 1)");
    NAV_CHECK_CONFIG(shift_pad >= 0, "augment: shift_pad must be >= 0");
  }
};

/// One draw of augmentation parameters, shared by a whole batch.
struct AugmentParams {
  double brightness = 1.0;
  double contrast = 1.0;
  double saturation = 1.0;
  double hue = 0.0;  // radians, full circle = 2*pi
  int shift_x = 0;
  int shift_y = 0;
};

/// Draw order is pinned: brightness, contrast, saturation, hue, shift x/y.
inline AugmentParams draw_augment_params(const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  const double s = cfg.jitter_strength;
  AugmentParams p;
  p.brightness = rng.uniform(1.0 - s, 1.0 + s);
  p.contrast = rng.uniform(1.0 - s, 1.0 + s);
  p.saturation = rng.uniform(1.0 - s, 1.0 + s);
  p.hue = rng.uniform(-s * kPi, s * kPi);
  p.shift_x = rng.uniform_int(-cfg.shift_pad, cfg.shift_pad);
  p.shift_y = rng.uniform_int(-cfg.shift_pad, cfg.shift_pad);
  return p;
}

/// Applies one parameter set uniformly to every image in [B,3,H,W].
/// Identity parameters leave the data bit-for-bit unchanged. The shift is
/// replicate-pad-and-crop: out(y,x) = in(clamp(y+sy), clamp(x+sx)).
template <class T>
Tensor<T> apply_augment(const Tensor<T>& images, const AugmentParams& p) {
  NAV_CHECK_SHAPE(images.ndim() == 4 && images.dim(1) == 3,
                  "augment expects [B,3,H,W] images");
  Tensor<T> out = images.clone();
  const int b = images.dim(0), h = images.dim(2), w = images.dim(3);
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  T* d = out.data();
  const bool jitter = p.brightness != 1.0 || p.contrast != 1.0 ||
                      p.saturation != 1.0 || p.hue != 0.0;
  if (jitter) {
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(b) * plane; ++i) {
      const std::int64_t img = i / plane, px = i % plane;
      T* r = d + (img * 3 + 0) * plane + px;
      T* g = d + (img * 3 + 1) * plane + px;
      T* bl = d + (img * 3 + 2) * plane + px;
      double cr = *r, cg = *g, cb = *bl;
      if (p.brightness != 1.0) {
        cr *= p.brightness;
        cg *= p.brightness;
        cb *= p.brightness;
      }
      if (p.contrast != 1.0) {
        cr = 0.5 + (cr - 0.5) * p.contrast;
        cg = 0.5 + (cg - 0.5) * p.contrast;
        cb = 0.5 + (cb - 0.5) * p.contrast;
      }
      if (p.saturation != 1.0) {
        const double luma = 0.299 * cr + 0.587 * cg + 0.114 * cb;
        cr = luma + (cr - luma) * p.saturation;
        cg = luma + (cg - luma) * p.saturation;
        cb = luma + (cb - luma) * p.saturation;
      }
      cr = std::clamp(cr, 0.0, 1.0);
      cg = std::clamp(cg, 0.0, 1.0);
      cb = std::clamp(cb, 0.0, 1.0);
      if (p.hue != 0.0) {
        double hh, ss, vv;
        rgb_to_hsv(cr, cg, cb, &hh, &ss, &vv);
        hsv_to_rgb(hh + p.hue / (2.0 * kPi), ss, vv, &cr, &cg, &cb);
      }
      *r = static_cast<T>(cr);
      *g = static_cast<T>(cg);
      *bl = static_cast<T>(cb);
    }
  }
  if (p.shift_x != 0 || p.shift_y != 0) {
    const std::vector<T> src = out.vec();
    for (int img = 0; img < b; ++img)
      for (int c = 0; c < 3; ++c) {
        const T* in = src.data() + (static_cast<std::int64_t>(img) * 3 + c) * plane;
        T* o = d + (static_cast<std::int64_t>(img) * 3 + c) * plane;
        for (int y = 0; y < h; ++y) {
          const int sy = std::clamp(y + p.shift_y, 0, h - 1);
          for (int x = 0; x < w; ++x)
            o[y * w + x] = in[sy * w + std::clamp(x + p.shift_x, 0, w - 1)];
        }
      }
  }
  return out;
}

/// One parameter draw for the whole batch, then apply.
template <class T>
Tensor<T> augment_batch(const Tensor<T>& images, const AugmentConfig& cfg,
                        Rng& rng) {
  return apply_augment(images, draw_augment_params(cfg, rng));
}

// ---- the agent ----

/// Per-environment recurrent state; reset to zeros/STOP at episode start.
template <class T>
struct PolicyState {
  Tensor<T> hc;  // [B, 2*hidden], h rows then c rows packed per sample
  std::vector<sim::Action> prev_actions;

  void reset_slot(int i) {
    const int width = hc.dim(1);
    std::fill_n(hc.data() + static_cast<std::int64_t>(i) * width, width, T(0));
    prev_actions[static_cast<std::size_t>(i)] = sim::Action::kStop;
  }
};

template <class T>
struct PolicyNet {
  PolicyConfig cfg;
  ParamStore<T> params;
  vit::VitEncoder<T> encoder;
  vit::CompressionLayer<T> compress;
  vit::VitEncoder<T> goal_encoder;            // only when twin-encoder image goal
  vit::CompressionLayer<T> goal_compress;
  Linear<T> compass_proj;
  Embedding<T> category_embed;
  Embedding<T> prev_action_embed;
  LstmCellP<T> lstm;
  Linear<T> actor, critic;

  explicit PolicyNet(const PolicyConfig& c, std::uint64_t seed) : cfg(c) {
    cfg.validate();
    Rng rng(seed);
    if (cfg.obs_mode == ObsMode::kImage) {
      encoder = vit::VitEncoder<T>(params, "enc", cfg.encoder, rng);
      compress =
          vit::CompressionLayer<T>(params, "comp", cfg.compression(), rng);
      if (cfg.goal_mode == GoalMode::kImage && !cfg.share_encoder_with_goal) {
        goal_encoder =
            vit::VitEncoder<T>(params, "goal_enc", cfg.encoder, rng);
        goal_compress = vit::CompressionLayer<T>(params, "goal_comp",
                                                 cfg.compression(), rng);
      }
    } else {
      compass_proj = Linear<T>(params, "compass", cfg.compass_dim,
                               cfg.compass_hidden, rng);
    }
    if (cfg.goal_mode == GoalMode::kCategory)
      category_embed = Embedding<T>(params, "cat", cfg.category_count,
                                    cfg.category_embed_dim, rng);
    prev_action_embed = Embedding<T>(params, "act", cfg.num_actions,
                                     cfg.prev_action_embed_dim, rng);
    lstm = LstmCellP<T>(params, "lstm", cfg.feature_size(), cfg.lstm_hidden,
                        rng);
    actor = Linear<T>(params, "actor", cfg.lstm_hidden, cfg.num_actions, rng);
    critic = Linear<T>(params, "critic", cfg.lstm_hidden, 1, rng);
    // Zero heads: a fresh policy acts uniformly and predicts zero value.
    std::fill_n(actor.w.data(), actor.w.numel(), T(0));
    std::fill_n(critic.w.data(), critic.w.numel(), T(0));
  }

  PolicyState<T> initial_state(int batch) const {
    return {lstm.initial_state(batch),
            std::vector<sim::Action>(static_cast<std::size_t>(batch),
                                     sim::Action::kStop)};
  }

  Tensor<T> obs_features(const Tensor<T>& obs) const {
    NAV_CHECK_CONFIG(cfg.obs_mode == ObsMode::kImage,
                     "policy: image input fed to a compass-mode policy");
    return compress.forward(encoder.forward_tokens(obs));
  }

  /// Image observation + image goal (shared or twin encoder).
  Tensor<T> encode_observation(const Tensor<T>& obs, const Tensor<T>& goal,
                               const std::vector<sim::Action>& prev) const {
    NAV_CHECK_CONFIG(cfg.goal_mode == GoalMode::kImage,
                     "policy: image goal fed to a category-goal policy");
    Tensor<T> obs_f = obs_features(obs);
    Tensor<T> goal_f = cfg.share_encoder_with_goal
                           ? obs_features(goal)
                           : goal_compress.forward(
                                 goal_encoder.forward_tokens(goal));
    return concat_lastdim<T>({obs_f, goal_f, action_features(prev)});
  }

  /// Image observation + category goal.
  Tensor<T> encode_observation(const Tensor<T>& obs,
                               const std::vector<int>& categories,
                               const std::vector<sim::Action>& prev) const {
    return concat_lastdim<T>({obs_features(obs), goal_features(categories),
                              action_features(prev)});
  }

  /// Compass (vector) observation; goal information lives in the vector.
  Tensor<T> encode_compass(const Tensor<T>& compass,
                           const std::vector<sim::Action>& prev) const {
    NAV_CHECK_CONFIG(cfg.obs_mode == ObsMode::kCompass,
                     "policy: compass input fed to an image-mode policy");
    NAV_CHECK_SHAPE(compass.ndim() == 2 && compass.dim(1) == cfg.compass_dim,
                    "policy: compass width mismatch");
    Tensor<T> obs_f = relu(compass_proj.forward(compass));
    return concat_lastdim<T>({obs_f, action_features(prev)});
  }

  Tensor<T> goal_features(const std::vector<int>& categories) const {
    NAV_CHECK_CONFIG(cfg.goal_mode == GoalMode::kCategory,
                     "policy: category goal fed to an image-goal policy");
    for (int c : categories)
      NAV_CHECK_CONFIG(c >= 0 && c < cfg.category_count,
                       "policy: goal category out of range");
    return category_embed.forward(categories);
  }

  Tensor<T> action_features(const std::vector<sim::Action>& prev) const {
    std::vector<int> idx(prev.size());
    for (std::size_t i = 0; i < prev.size(); ++i)
      idx[i] = static_cast<int>(prev[i]);
    return prev_action_embed.forward(idx);
  }

  struct StepOut {
    Tensor<T> logits;  // [B, num_actions]
    Tensor<T> value;   // [B]
    Tensor<T> hc;      // [B, 2*hidden]
  };

  /// One recurrent step from fused features.
  StepOut step(const Tensor<T>& feature, const Tensor<T>& hc) const {
    NAV_CHECK_SHAPE(feature.ndim() == 2 &&
                        feature.dim(1) == cfg.feature_size(),
                    "policy: feature width mismatch");
    for (const T v : feature.vec())
      NAV_CHECK(std::isfinite(static_cast<double>(v)), NumericError,
                "policy: non-finite feature");
    Tensor<T> next = lstm.forward(feature, hc);
    Tensor<T> h = chunk_lastdim(next, 2, 0);
    Tensor<T> logits = actor.forward(h);
    Tensor<T> value = reshape(critic.forward(h), {feature.dim(0)});
    return {logits, value, next};
  }
};

/// Policy checkpoint = neuralcore container + JSON PolicyConfig header.
void save_policy(const std::string& path, const PolicyNet<float>& net,
                 const nlohmann::json& extra_meta = nlohmann::json::object());

/// Rebuilds the architecture recorded in the header. CheckpointError when
/// the file is not a policy checkpoint (IoError when not a checkpoint at
/// all).
PolicyNet<float> load_policy(const std::string& path);

/// Strict restore into an existing net; CheckpointError on config mismatch.
void load_policy_into(const std::string& path, PolicyNet<float>& net);

/// Reads just the metadata header (config + extras) without the weights.
nlohmann::json read_policy_meta(const std::string& path);

}  // namespace nav::policy
