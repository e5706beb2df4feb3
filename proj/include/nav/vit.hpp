#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "nav/nn.hpp"
#include "nav/ops.hpp"

namespace nav::vit {

struct ViTConfig {
  int image_size = 64;
  int patch_size = 8;
  int embed_dim = 96;
  int depth = 3;
  int num_heads = 3;
  bool use_class_token = true;
  bool use_position_embedding = true;

  int grid_side() const { return image_size / patch_size; }
  int num_patches() const { return grid_side() * grid_side(); }
  int patch_dim() const { return 3 * patch_size * patch_size; }

  void validate() const {
    NAV_CHECK_CONFIG(image_size > 0 && patch_size > 0 &&
                         image_size % patch_size == 0,
                     "vit: image_size must be divisible by patch_size");
    NAV_CHECK_CONFIG(embed_dim > 0 && num_heads > 0 &&
                         embed_dim % num_heads == 0,
                     "vit: embed_dim must be divisible by num_heads");
    NAV_CHECK_CONFIG(depth > 0, "vit: depth must be positive");
  }

  bool operator==(const ViTConfig&) const = default;
};

void to_json(nlohmann::json& j, const ViTConfig& c);
void from_json(const nlohmann::json& j, ViTConfig& c);

/// Sizing of the token-compression head (conv + norm + relu + flatten).
struct CompressionSpec {
  int patch_dim = 0;
  int num_patches = 0;
  int approx_output_size = 2048;
  int num_channels = 0;
  int output_size = 0;
};

CompressionSpec create_compression_layer(int patch_dim, int num_patches,
                                         int approx_output_size = 2048);

struct MaeMask {
  double mask_ratio = 0.75;
  std::vector<int> visible_indices;
  std::vector<int> masked_indices;
};

/// Seeded partition of token indices 0..L-1; |masked| = round(ratio * L).
MaeMask mae_mask(int num_patches, double mask_ratio, std::uint64_t seed);

namespace detail {
inline std::vector<int> iota_from(int first, int count) {
  std::vector<int> v(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) v[static_cast<std::size_t>(i)] = first + i;
  return v;
}
}  // namespace detail

/// Patch-embedding ViT with pre-norm transformer blocks.
template <class T>
struct VitEncoder {
  ViTConfig cfg;
  Linear<T> patch_embed;
  Tensor<T> cls_token;  // [1, D] when enabled
  Tensor<T> pos_embed;  // [L(+1), D] when enabled; row 0 is the class slot
  std::vector<TransformerBlock<T>> blocks;
  LayerNormP<T> norm;

  VitEncoder() = default;
  VitEncoder(ParamStore<T>& ps, const std::string& prefix, const ViTConfig& c,
             Rng& rng)
      : cfg(c) {
    cfg.validate();
    patch_embed = Linear<T>(ps, prefix + ".patch_embed", cfg.patch_dim(),
                            cfg.embed_dim, rng);
    if (cfg.use_class_token)
      cls_token = ps.add(prefix + ".cls",
                         Tensor<T>::trunc_normal({1, cfg.embed_dim}, rng,
                                                 T(kInitStd)));
    if (cfg.use_position_embedding) {
      const int slots = cfg.num_patches() + (cfg.use_class_token ? 1 : 0);
      pos_embed = ps.add(prefix + ".pos",
                         Tensor<T>::trunc_normal({slots, cfg.embed_dim}, rng,
                                                 T(kInitStd)));
    }
    blocks.reserve(static_cast<std::size_t>(cfg.depth));
    for (int i = 0; i < cfg.depth; ++i)
      blocks.emplace_back(ps, prefix + ".block" + std::to_string(i),
                          cfg.embed_dim, cfg.num_heads, rng);
    norm = LayerNormP<T>(ps, prefix + ".norm", cfg.embed_dim);
  }

  /// All tokens, class token (if any) at row 0: [N, L(+1), D].
  Tensor<T> forward_all(const Tensor<T>& images) const {
    Tensor<T> x = embed_patches(images);
    if (cfg.use_class_token) x = prepend_cls(x);
    x = add_positions(x, cfg.use_class_token);
    for (const auto& blk : blocks) x = blk.forward(x);
    return norm_out(x);
  }

  /// Policy path: class token stripped -> [N, L, D].
  Tensor<T> forward_tokens(const Tensor<T>& images) const {
    Tensor<T> x = forward_all(images);
    if (!cfg.use_class_token) return x;
    return gather_tokens(x, detail::iota_from(1, cfg.num_patches()));
  }

  /// MAE encoder path: only visible patches (plus class token) are encoded.
  Tensor<T> forward_masked(const Tensor<T>& images,
                           const std::vector<int>& visible) const {
    NAV_CHECK_CONFIG(cfg.use_class_token && cfg.use_position_embedding,
                     "vit: masked forward expects class token and positions");
    Tensor<T> tok = patch_embed.forward(patchify(images, cfg.patch_size));
    // Patch positions occupy pos rows 1..L.
    std::vector<int> pos_rows(visible.size());
    for (std::size_t i = 0; i < visible.size(); ++i)
      pos_rows[i] = visible[i] + 1;
    Tensor<T> vis = gather_tokens(tok, visible);
    const int k = static_cast<int>(visible.size());
    const int n = images.dim(0);
    Tensor<T> vis_pos =
        add(vis, tile_rows(gather_rows(pos_embed, pos_rows), n));
    Tensor<T> cls_pos = add(cls_token, gather_rows(pos_embed, {0}));
    Tensor<T> x = assemble_tokens(vis_pos, reshape(cls_pos, {cfg.embed_dim}),
                                  detail::iota_from(1, k), k + 1);
    for (const auto& blk : blocks) x = blk.forward(x);
    return norm_out(x);
  }

 private:
  Tensor<T> embed_patches(const Tensor<T>& images) const {
    NAV_CHECK_SHAPE(images.ndim() == 4 && images.dim(2) == cfg.image_size &&
                        images.dim(3) == cfg.image_size,
                    "vit: image size mismatch");
    return patch_embed.forward(patchify(images, cfg.patch_size));
  }

  Tensor<T> prepend_cls(const Tensor<T>& tok) const {
    const int l = tok.dim(1);
    return assemble_tokens(tok, reshape(cls_token, {cfg.embed_dim}),
                           detail::iota_from(1, l), l + 1);
  }

  Tensor<T> add_positions(const Tensor<T>& x, bool with_cls) const {
    if (!cfg.use_position_embedding) return x;
    if (with_cls || !cfg.use_class_token) return add_broadcast(x, pos_embed);
    return add_broadcast(
        x, gather_rows(pos_embed, detail::iota_from(1, cfg.num_patches())));
  }

  Tensor<T> norm_out(const Tensor<T>& x) const { return norm.forward(x); }

  /// [K, D] -> [N, K, D] by repetition (differentiable via gather).
  static Tensor<T> tile_rows(const Tensor<T>& rows, int n) {
    const int k = rows.dim(0);
    std::vector<int> idx;
    idx.reserve(static_cast<std::size_t>(n) * k);
    for (int b = 0; b < n; ++b)
      for (int i = 0; i < k; ++i) idx.push_back(i);
    return reshape(gather_rows(rows, idx), {n, k, rows.dim(1)});
  }
};

/// Alg.-style token compression: 3x3 bias-free conv, 1-group norm, ReLU,
/// flatten channels-major.
template <class T>
struct CompressionLayer {
  CompressionSpec spec;
  Conv2dP<T> conv;
  GroupNormP<T> norm;

  CompressionLayer() = default;
  CompressionLayer(ParamStore<T>& ps, const std::string& prefix,
                   const CompressionSpec& s, Rng& rng)
      : spec(s),
        conv(ps, prefix + ".conv", s.patch_dim, s.num_channels, 3, rng,
             /*bias=*/false),
        norm(ps, prefix + ".norm", 1, s.num_channels) {}

  Tensor<T> forward(const Tensor<T>& tokens) const {
    NAV_CHECK_SHAPE(tokens.ndim() == 3 && tokens.dim(1) == spec.num_patches &&
                        tokens.dim(2) == spec.patch_dim,
                    "compression: token shape mismatch");
    Tensor<T> grid = tokens_to_grid(tokens);
    Tensor<T> h = relu(norm.forward(conv.forward(grid)));
    return reshape(h, {tokens.dim(0), spec.output_size});
  }
};

/// Lightweight MAE decoder (depth 2, width D/2) with its own positions.
template <class T>
struct MaeDecoder {
  int seq_len = 0;   // L + 1 (class slot included)
  int dec_dim = 0;
  Linear<T> embed;
  Tensor<T> mask_token;  // [dec_dim]
  Tensor<T> pos_embed;   // [L+1, dec_dim]
  std::vector<TransformerBlock<T>> blocks;
  LayerNormP<T> norm;
  Linear<T> head;

  MaeDecoder() = default;
  MaeDecoder(ParamStore<T>& ps, const std::string& prefix, const ViTConfig& c,
             Rng& rng, int depth = 2)
      : seq_len(c.num_patches() + 1), dec_dim(c.embed_dim / 2) {
    NAV_CHECK_CONFIG(dec_dim > 0 && c.use_class_token,
                     "mae decoder: requires class token and embed_dim >= 2");
    embed = Linear<T>(ps, prefix + ".embed", c.embed_dim, dec_dim, rng);
    mask_token = ps.add(prefix + ".mask",
                        Tensor<T>::trunc_normal({dec_dim}, rng, T(kInitStd)));
    pos_embed = ps.add(prefix + ".pos",
                       Tensor<T>::trunc_normal({seq_len, dec_dim}, rng,
                                               T(kInitStd)));
    const int heads = dec_dim % 4 == 0 ? 4 : (dec_dim % 2 == 0 ? 2 : 1);
    for (int i = 0; i < depth; ++i)
      blocks.emplace_back(ps, prefix + ".block" + std::to_string(i), dec_dim,
                          heads, rng);
    norm = LayerNormP<T>(ps, prefix + ".norm", dec_dim);
    head = Linear<T>(ps, prefix + ".head", dec_dim, c.patch_dim(), rng);
  }

  /// encoded: [N, K+1, D] from VitEncoder::forward_masked (class row first).
  /// Returns per-patch reconstructions [N, L, patch_dim].
  Tensor<T> forward(const Tensor<T>& encoded,
                    const std::vector<int>& visible) const {
    const int k = static_cast<int>(visible.size());
    NAV_CHECK_SHAPE(encoded.ndim() == 3 && encoded.dim(1) == k + 1,
                    "mae decoder: encoded length mismatch");
    Tensor<T> z = embed.forward(encoded);  // [N, K+1, dd]
    std::vector<int> slots(static_cast<std::size_t>(k) + 1);
    slots[0] = 0;  // class token keeps slot 0
    for (int i = 0; i < k; ++i)
      slots[static_cast<std::size_t>(i) + 1] = visible[static_cast<std::size_t>(i)] + 1;
    Tensor<T> full = assemble_tokens(z, mask_token, slots, seq_len);
    Tensor<T> x = add_broadcast(full, pos_embed);
    for (const auto& blk : blocks) x = blk.forward(x);
    x = head.forward(norm.forward(x));  // [N, L+1, patch_dim]
    return gather_tokens(x, detail::iota_from(1, seq_len - 1));
  }
};

/// Masked-MSE MAE objective on raw patch pixels.
template <class T>
Tensor<T> mae_loss(const Tensor<T>& predicted, const Tensor<T>& target,
                   const MaeMask& mask, bool normalize_pixels) {
  return masked_patch_mse(predicted, target, mask.masked_indices,
                          normalize_pixels);
}

}  // namespace nav::vit
