#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "nav/checkpoint.hpp"
#include "nav/gradcheck.hpp"
#include "nav/vit.hpp"

using namespace nav;
using namespace nav::vit;

TEST_CASE("compression sizing: frozen cases and rounding bound") {
  // 128x128 at patch 16 -> 64 patches (paper default geometry)
  CompressionSpec a = create_compression_layer(384, 64, 2048);
  CHECK(a.num_channels == 32);
  CHECK(a.output_size == 2048);
  // ViT-B-like: 196 patches
  CompressionSpec b = create_compression_layer(768, 196, 2048);
  CHECK(b.num_channels == 10);
  CHECK(b.output_size == 1960);
  // small grid: 16 patches
  CompressionSpec c = create_compression_layer(192, 16, 2048);
  CHECK(c.num_channels == 128);
  CHECK(c.output_size == 2048);

  // rounding bound: |output - approx| <= num_patches / 2
  for (int l : {16, 64, 144, 196, 256})
    for (int approx : {512, 1024, 2048, 4096}) {
      CompressionSpec s = create_compression_layer(96, l, approx);
      CHECK(std::abs(s.output_size - approx) * 2 <= l);
    }

  CHECK_THROWS_AS(create_compression_layer(96, 4096, 100), ConfigError);
  CHECK_THROWS_AS(create_compression_layer(96, 60, 2048), ConfigError);  // not square
}

TEST_CASE("compression forward: size, sign, conv equivariance") {
  Rng rng(101);
  CompressionSpec spec = create_compression_layer(384, 64, 2048);
  ParamStore<double> ps;
  Rng init(5);
  CompressionLayer<double> layer(ps, "comp", spec, init);
  Tensor<double> tokens = Tensor<double>::randn({2, 64, 384}, rng);
  Tensor<double> out = layer.forward(tokens);
  CHECK(out.shape() == Shape{2, 2048});
  for (std::int64_t i = 0; i < out.numel(); ++i) CHECK(out.data()[i] >= 0.0);

  // Conv-stage equivariance: wrap-shift the token grid one column right;
  // receptive fields that avoid the zero-padded border must shift along.
  // (The 1-group norm couples every cell, so the check targets the conv.)
  const int s = 8, d = 384;
  Tensor<double> shifted = Tensor<double>::zeros({2, 64, d});
  for (int n = 0; n < 2; ++n)
    for (int i = 0; i < s; ++i)
      for (int j = 0; j < s; ++j)
        for (int c = 0; c < d; ++c)
          shifted.data()[(n * 64 + i * s + j) * d + c] =
              tokens.data()[(n * 64 + i * s + (j + s - 1) % s) * d + c];
  NoGradGuard ng;
  Tensor<double> conv1 = layer.conv.forward(tokens_to_grid(tokens));
  Tensor<double> conv2 = layer.conv.forward(tokens_to_grid(shifted));
  const int ch = spec.num_channels;
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < ch; ++c)
      for (int i = 1; i < s - 1; ++i)
        for (int j = 2; j < s - 1; ++j) {
          const double want =
              conv1.data()[((n * ch + c) * s + i) * s + (j - 1)];
          const double got = conv2.data()[((n * ch + c) * s + i) * s + j];
          CHECK(std::fabs(want - got) < 1e-10);
        }
}

TEST_CASE("vit_forward shapes, determinism, permutation equivariance") {
  Rng rng(7);
  ViTConfig cfg;
  cfg.image_size = 32;
  cfg.patch_size = 8;
  cfg.embed_dim = 64;
  cfg.depth = 2;
  cfg.num_heads = 2;

  {
    ParamStore<double> ps;
    Rng init(9);
    VitEncoder<double> enc(ps, "vit", cfg, init);
    Tensor<double> img = Tensor<double>::uniform({3, 3, 32, 32}, rng, 0.0, 1.0);
    Tensor<double> tok = enc.forward_tokens(img);
    CHECK(tok.shape() == Shape{3, 16, 64});
    Tensor<double> tok2 = enc.forward_tokens(img);
    for (std::int64_t i = 0; i < tok.numel(); ++i)
      CHECK(tok.data()[i] == tok2.data()[i]);
    for (double v : tok.vec()) CHECK(std::isfinite(v));
  }

  // no positions, no class token: permuting input patches permutes tokens
  {
    ViTConfig pcfg = cfg;
    pcfg.use_class_token = false;
    pcfg.use_position_embedding = false;
    ParamStore<double> ps;
    Rng init(11);
    VitEncoder<double> enc(ps, "vit", pcfg, init);
    Tensor<double> img = Tensor<double>::uniform({1, 3, 32, 32}, rng, 0.0, 1.0);
    // permutation of the 16 patch blocks
    std::vector<int> perm = {5, 0, 11, 3, 14, 2, 7, 9, 1, 15, 6, 13, 4, 8, 12, 10};
    Tensor<double> img2 = Tensor<double>::zeros({1, 3, 32, 32});
    const int p = 8, g = 4;
    for (int t = 0; t < 16; ++t) {
      const int sy = (t / g) * p, sx = (t % g) * p;       // destination block
      const int oy = (perm[t] / g) * p, ox = (perm[t] % g) * p;  // source block
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < p; ++y)
          for (int x = 0; x < p; ++x)
            img2.data()[(c * 32 + sy + y) * 32 + sx + x] =
                img.data()[(c * 32 + oy + y) * 32 + ox + x];
    }
    NoGradGuard ng;
    Tensor<double> t1 = enc.forward_tokens(img);
    Tensor<double> t2 = enc.forward_tokens(img2);
    for (int t = 0; t < 16; ++t)
      for (int d = 0; d < 64; ++d)
        CHECK(t2.data()[t * 64 + d] ==
              doctest::Approx(t1.data()[perm[t] * 64 + d]).epsilon(1e-10));
  }

  ViTConfig bad = cfg;
  bad.patch_size = 7;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("mae_mask partition and determinism") {
  MaeMask m = mae_mask(64, 0.75, 123);
  CHECK(m.masked_indices.size() == 48);
  CHECK(m.visible_indices.size() == 16);
  MaeMask m2 = mae_mask(64, 0.75, 123);
  CHECK(m.masked_indices == m2.masked_indices);
  CHECK(m.visible_indices == m2.visible_indices);
  MaeMask m3 = mae_mask(64, 0.75, 124);
  CHECK(m.masked_indices != m3.masked_indices);

  std::set<int> all;
  for (int i : m.visible_indices) all.insert(i);
  for (int i : m.masked_indices) all.insert(i);
  CHECK(all.size() == 64);
  CHECK(*all.begin() == 0);
  CHECK(*all.rbegin() == 63);

  CHECK_THROWS_AS(mae_mask(64, 0.0, 1), ConfigError);
  CHECK_THROWS_AS(mae_mask(64, 1.0, 1), ConfigError);
}

TEST_CASE("mae encoder/decoder: shapes and masked-only loss invariance") {
  ViTConfig cfg;
  cfg.image_size = 16;
  cfg.patch_size = 4;
  cfg.embed_dim = 16;
  cfg.depth = 1;
  cfg.num_heads = 2;

  ParamStore<double> ps;
  Rng init(21);
  VitEncoder<double> enc(ps, "enc", cfg, init);
  MaeDecoder<double> dec(ps, "dec", cfg, init);

  Rng rng(22);
  Tensor<double> img = Tensor<double>::uniform({2, 3, 16, 16}, rng, 0.0, 1.0);
  MaeMask mask = mae_mask(cfg.num_patches(), 0.75, 77);
  REQUIRE(mask.visible_indices.size() == 4);

  Tensor<double> encoded = enc.forward_masked(img, mask.visible_indices);
  CHECK(encoded.shape() == Shape{2, 5, 16});
  Tensor<double> pred = dec.forward(encoded, mask.visible_indices);
  CHECK(pred.shape() == Shape{2, 16, cfg.patch_dim()});

  Tensor<double> target = patchify(img, cfg.patch_size);
  const double loss = mae_loss(pred, target, mask, true).item();
  CHECK(std::isfinite(loss));
  CHECK(loss > 0.0);

  // perturb predictions on VISIBLE patches: loss must not move at all
  Tensor<double> pred2 = pred.clone();
  for (int n = 0; n < 2; ++n)
    for (int v : mask.visible_indices)
      for (int j = 0; j < cfg.patch_dim(); ++j)
        pred2.data()[(n * 16 + v) * cfg.patch_dim() + j] += 17.0;
  const double loss2 = mae_loss(pred2, target, mask, true).item();
  CHECK(loss2 == loss);

  // identical prediction and target -> exactly zero (no normalization)
  const double zero = mae_loss(target, target, mask, false).item();
  CHECK(zero == 0.0);
}

TEST_CASE("full encoder+compression pipeline gradient audit") {
  ViTConfig cfg;
  cfg.image_size = 16;
  cfg.patch_size = 8;
  cfg.embed_dim = 8;
  cfg.depth = 1;
  cfg.num_heads = 2;

  ParamStore<double> ps;
  Rng init(31);
  VitEncoder<double> enc(ps, "enc", cfg, init);
  CompressionSpec spec =
      create_compression_layer(cfg.embed_dim, cfg.num_patches(), 16);
  CompressionLayer<double> comp(ps, "comp", spec, init);

  Rng rng(32);
  Tensor<double> img = Tensor<double>::uniform({2, 3, 16, 16}, rng, 0.0, 1.0);
  auto res = grad_check(
      [&] { return mean_all(square(comp.forward(enc.forward_tokens(img)))); },
      ps, GradCheckOptions{1e-4, 6, 3});
  CAPTURE(res.worst_param);
  CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("compression layer full-density gradient audit (2x16 patches)") {
  // random 2-sample, 16-patch input straight through conv+norm+relu+flatten
  CompressionSpec spec = create_compression_layer(6, 16, 64);
  ParamStore<double> ps;
  Rng init(41);
  CompressionLayer<double> layer(ps, "comp", spec, init);
  Rng rng(42);
  ParamStore<double> all;
  Tensor<double> tokens = all.add("tokens", Tensor<double>::randn({2, 16, 6}, rng));
  for (auto& [name, t] : ps.items()) all.add(name, t);
  auto res = grad_check(
      [&] { return mean_all(square(layer.forward(tokens))); }, all);
  CAPTURE(res.worst_param);
  CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("mae pipeline gradient audit (sampled)") {
  ViTConfig cfg;
  cfg.image_size = 8;
  cfg.patch_size = 4;
  cfg.embed_dim = 8;
  cfg.depth = 1;
  cfg.num_heads = 2;
  ParamStore<double> ps;
  Rng init(51);
  VitEncoder<double> enc(ps, "enc", cfg, init);
  MaeDecoder<double> dec(ps, "dec", cfg, init);
  Rng rng(52);
  Tensor<double> img = Tensor<double>::uniform({1, 3, 8, 8}, rng, 0.0, 1.0);
  Tensor<double> target = patchify(img, 4);
  MaeMask mask = mae_mask(cfg.num_patches(), 0.5, 3);
  auto res = grad_check(
      [&] {
        Tensor<double> e = enc.forward_masked(img, mask.visible_indices);
        return mae_loss(dec.forward(e, mask.visible_indices), target, mask,
                        true);
      },
      ps, GradCheckOptions{1e-4, 5, 13});
  CAPTURE(res.worst_param);
  CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("encoder checkpoint carries its architecture header") {
  ViTConfig cfg;
  cfg.image_size = 16;
  cfg.patch_size = 8;
  cfg.embed_dim = 8;
  cfg.depth = 1;
  cfg.num_heads = 2;
  ParamStore<float> ps;
  Rng init(61);
  VitEncoder<float> enc(ps, "enc", cfg, init);

  Checkpoint ck;
  ck.meta["vit_config"] = cfg;
  ck.meta["kind"] = "encoder";
  pack_params(ps, ck);
  save_checkpoint("vit_ckpt.bin", ck);

  Checkpoint loaded = load_checkpoint("vit_ckpt.bin");
  ViTConfig back = loaded.meta.at("vit_config").get<ViTConfig>();
  CHECK(back == cfg);

  // same architecture restores cleanly
  ParamStore<float> ps2;
  Rng init2(62);
  VitEncoder<float> enc2(ps2, "enc", cfg, init2);
  unpack_params(loaded, ps2);
  CHECK(ps2.find("enc.patch_embed.w")->data()[0] ==
        ps.find("enc.patch_embed.w")->data()[0]);

  // deeper model cannot load this checkpoint
  ViTConfig deeper = cfg;
  deeper.depth = 2;
  ParamStore<float> ps3;
  Rng init3(63);
  VitEncoder<float> enc3(ps3, "enc", deeper, init3);
  CHECK_THROWS_AS(unpack_params(loaded, ps3), CheckpointError);
}
