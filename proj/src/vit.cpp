#include "nav/vit.hpp"

#include <algorithm>
#include <cmath>

namespace nav::vit {

void to_json(nlohmann::json& j, const ViTConfig& c) {
  j = nlohmann::json{{"image_size", c.image_size},
                     {"patch_size", c.patch_size},
                     {"embed_dim", c.embed_dim},
                     {"depth", c.depth},
                     {"num_heads", c.num_heads},
                     {"use_class_token", c.use_class_token},
                     {"use_position_embedding", c.use_position_embedding}};
}

void from_json(const nlohmann::json& j, ViTConfig& c) {
  j.at("image_size").get_to(c.image_size);
  j.at("patch_size").get_to(c.patch_size);
  j.at("embed_dim").get_to(c.embed_dim);
  j.at("depth").get_to(c.depth);
  j.at("num_heads").get_to(c.num_heads);
  j.at("use_class_token").get_to(c.use_class_token);
  j.at("use_position_embedding").get_to(c.use_position_embedding);
}

CompressionSpec create_compression_layer(int patch_dim, int num_patches,
                                         int approx_output_size) {
  NAV_CHECK_CONFIG(patch_dim > 0 && num_patches > 0 && approx_output_size > 0,
                   "compression: sizes must be positive");
  const int side =
      static_cast<int>(std::lround(std::sqrt(static_cast<double>(num_patches))));
  NAV_CHECK_CONFIG(side * side == num_patches,
                   "compression: num_patches must be a perfect square");
  const int num_channels = static_cast<int>(std::lround(
      static_cast<double>(approx_output_size) / num_patches));
  NAV_CHECK_CONFIG(num_channels > 0,
                   "compression: approx_output_size rounds to zero channels");
  CompressionSpec s;
  s.patch_dim = patch_dim;
  s.num_patches = num_patches;
  s.approx_output_size = approx_output_size;
  s.num_channels = num_channels;
  s.output_size = num_channels * num_patches;
  return s;
}

MaeMask mae_mask(int num_patches, double mask_ratio, std::uint64_t seed) {
  NAV_CHECK_CONFIG(num_patches > 0 && mask_ratio > 0.0 && mask_ratio < 1.0,
                   "mae_mask: ratio must be in (0,1)");
  const int masked = static_cast<int>(std::lround(mask_ratio * num_patches));
  NAV_CHECK_CONFIG(masked > 0 && masked < num_patches,
                   "mae_mask: degenerate mask for this (L, ratio)");
  std::vector<int> idx(static_cast<std::size_t>(num_patches));
  for (int i = 0; i < num_patches; ++i) idx[static_cast<std::size_t>(i)] = i;
  Rng rng(seed);
  rng.shuffle(idx);
  MaeMask m;
  m.mask_ratio = mask_ratio;
  m.visible_indices.assign(idx.begin(), idx.begin() + (num_patches - masked));
  m.masked_indices.assign(idx.begin() + (num_patches - masked), idx.end());
  std::sort(m.visible_indices.begin(), m.visible_indices.end());
  std::sort(m.masked_indices.begin(), m.masked_indices.end());
  return m;
}

}  // namespace nav::vit
