#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>

#include "nav/checkpoint.hpp"
#include "nav/gradcheck.hpp"
#include "nav/nn.hpp"
#include "nav/ops.hpp"
#include "nav/optim.hpp"

using namespace nav;

namespace {

bool all_finite(const Tensor<double>& t) {
  for (double v : t.vec())
    if (!std::isfinite(v)) return false;
  return true;
}

// Brute-force cross-correlation oracle, quadruple loop.
Tensor<double> conv2d_oracle(const Tensor<double>& x, const Tensor<double>& w,
                             const Tensor<double>& bias, int pad) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int o = w.dim(0), k = w.dim(2);
  const int ho = h + 2 * pad - k + 1, wo = wd + 2 * pad - k + 1;
  Tensor<double> y = Tensor<double>::zeros({n, o, ho, wo});
  for (int b = 0; b < n; ++b)
    for (int oc = 0; oc < o; ++oc)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          double acc = bias.defined() ? bias.data()[oc] : 0.0;
          for (int ci = 0; ci < c; ++ci)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy - pad + ky, ix = ox - pad + kx;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                acc += x.data()[((b * c + ci) * h + iy) * wd + ix] *
                       w.data()[((oc * c + ci) * k + ky) * k + kx];
              }
          y.data()[((b * o + oc) * ho + oy) * wo + ox] = acc;
        }
  return y;
}

}  // namespace

TEST_CASE("tensor basics and error paths") {
  Tensor<double> t = Tensor<double>::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == 6);
  CHECK(t.dim(1) == 3);
  CHECK_THROWS_AS(Tensor<double>::from({2, 2}, {1.0}), ShapeError);
  CHECK_THROWS_AS(Tensor<double>::scalar(1.0).item() + t.item(), ShapeError);

  Tensor<double> nonscalar = Tensor<double>::zeros({3});
  nonscalar.set_requires_grad(true);
  CHECK_THROWS_AS(nonscalar.backward(), ShapeError);
}

TEST_CASE("rng determinism and pinned transforms") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng c(7);
  for (int i = 0; i < 1000; ++i) {
    const double u = c.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(std::fabs(c.trunc_normal(0.02)) <= 0.04 + 1e-15);
    const int k = c.uniform_int(-3, 5);
    CHECK(k >= -3);
    CHECK(k <= 5);
  }
  // fork gives a stream independent of the parent's continuation
  Rng p(9);
  Rng f = p.fork(1);
  CHECK(f.next_u64() != p.next_u64());
}

TEST_CASE("backward accumulates through shared subexpressions") {
  Tensor<double> x = Tensor<double>::from({3}, {1.0, -2.0, 0.5});
  x.set_requires_grad(true);
  // y = sum(x*x + x)  =>  dy/dx = 2x + 1
  Tensor<double> y = sum_all(add(mul(x, x), x));
  y.backward();
  const auto& g = x.node()->grad;
  CHECK(g[0] == doctest::Approx(3.0));
  CHECK(g[1] == doctest::Approx(-3.0));
  CHECK(g[2] == doctest::Approx(2.0));
}

TEST_CASE("reshape aliases storage and routes gradients") {
  Tensor<double> x = Tensor<double>::from({2, 2}, {1, 2, 3, 4});
  x.set_requires_grad(true);
  Tensor<double> r = reshape(x, {4});
  CHECK(r.data() == x.data());
  sum_all(square(r)).backward();
  CHECK(x.node()->grad[3] == doctest::Approx(8.0));
  CHECK_THROWS_AS(reshape(x, {5}), ShapeError);
}

TEST_CASE("matmul matches triple-loop oracle") {
  Rng rng(3);
  Tensor<double> a = Tensor<double>::randn({5, 4}, rng);
  Tensor<double> b = Tensor<double>::randn({4, 7}, rng);
  Tensor<double> y = matmul(a, b);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 7; ++j) {
      double acc = 0;
      for (int k = 0; k < 4; ++k) acc += a.data()[i * 4 + k] * b.data()[k * 7 + j];
      CHECK(y.data()[i * 7 + j] == doctest::Approx(acc).epsilon(1e-12));
    }
  CHECK_THROWS_AS(matmul(a, a), ShapeError);
}

TEST_CASE("conv2d hand examples") {
  // all-ones 3x3 input and kernel, pad 1: center 9, corners 4, edges 6
  Tensor<double> x = Tensor<double>::full({1, 1, 3, 3}, 1.0);
  Tensor<double> w = Tensor<double>::full({1, 1, 3, 3}, 1.0);
  Tensor<double> y = conv2d(x, w, Tensor<double>{}, 1);
  CHECK(y.data()[4] == doctest::Approx(9.0));
  CHECK(y.data()[0] == doctest::Approx(4.0));
  CHECK(y.data()[2] == doctest::Approx(4.0));
  CHECK(y.data()[6] == doctest::Approx(4.0));
  CHECK(y.data()[8] == doctest::Approx(4.0));
  CHECK(y.data()[1] == doctest::Approx(6.0));

  // identity kernel reproduces the input
  Rng rng(11);
  Tensor<double> xr = Tensor<double>::randn({2, 3, 5, 5}, rng);
  Tensor<double> wi = Tensor<double>::zeros({3, 3, 3, 3});
  for (int o = 0; o < 3; ++o) wi.data()[((o * 3 + o) * 3 + 1) * 3 + 1] = 1.0;
  Tensor<double> yi = conv2d(xr, wi, Tensor<double>{}, 1);
  for (std::int64_t i = 0; i < xr.numel(); ++i)
    CHECK(yi.data()[i] == doctest::Approx(xr.data()[i]).epsilon(1e-12));

  // zero kernel, no bias: all zeros
  Tensor<double> wz = Tensor<double>::zeros({2, 3, 3, 3});
  Tensor<double> yz = conv2d(xr, wz, Tensor<double>{}, 1);
  for (std::int64_t i = 0; i < yz.numel(); ++i) CHECK(yz.data()[i] == 0.0);
}

TEST_CASE("conv2d matches brute-force oracle on random shapes") {
  Rng rng(5);
  struct Case { int n, c, h, w, o, k, pad; };
  for (Case cs : {Case{2, 3, 6, 5, 4, 3, 1}, Case{1, 2, 4, 4, 3, 3, 1},
                  Case{2, 1, 7, 7, 2, 5, 2}}) {
    Tensor<double> x = Tensor<double>::randn({cs.n, cs.c, cs.h, cs.w}, rng);
    Tensor<double> w = Tensor<double>::randn({cs.o, cs.c, cs.k, cs.k}, rng);
    Tensor<double> b = Tensor<double>::randn({cs.o}, rng);
    Tensor<double> got = conv2d(x, w, b, cs.pad);
    Tensor<double> want = conv2d_oracle(x, w, b, cs.pad);
    REQUIRE(got.shape() == want.shape());
    for (std::int64_t i = 0; i < got.numel(); ++i)
      CHECK(std::fabs(got.data()[i] - want.data()[i]) < 1e-10);
    CHECK(all_finite(got));
  }
}

TEST_CASE("group_norm definition cases") {
  Tensor<double> ones_g = Tensor<double>::full({1}, 1.0);
  Tensor<double> zero_b = Tensor<double>::zeros({1});

  // constant input: zero output (epsilon absorbs the zero variance)
  Tensor<double> xc = Tensor<double>::full({2, 1, 2, 2}, 3.5);
  Tensor<double> g1 = Tensor<double>::full({1}, 1.0);
  Tensor<double> yc = group_norm(xc, 1, g1, zero_b, 1e-5);
  for (std::int64_t i = 0; i < yc.numel(); ++i)
    CHECK(std::fabs(yc.data()[i]) < 1e-9);

  // two values (1,3): normalized to (-1,1)
  Tensor<double> x2 = Tensor<double>::from({1, 2, 1, 1}, {1.0, 3.0});
  Tensor<double> g2 = Tensor<double>::full({2}, 1.0);
  Tensor<double> b2 = Tensor<double>::zeros({2});
  Tensor<double> y2 = group_norm(x2, 1, g2, b2, 1e-12);
  CHECK(y2.data()[0] == doctest::Approx(-1.0).epsilon(1e-6));
  CHECK(y2.data()[1] == doctest::Approx(1.0).epsilon(1e-6));

  // groups=1 equals layer norm over (C,H,W): per-sample stats
  Rng rng(13);
  Tensor<double> xr = Tensor<double>::randn({3, 4, 5, 5}, rng);
  Tensor<double> g4 = Tensor<double>::full({4}, 1.0);
  Tensor<double> b4 = Tensor<double>::zeros({4});
  Tensor<double> yr = group_norm(xr, 1, g4, b4, 1e-10);
  const int per = 4 * 5 * 5;
  for (int n = 0; n < 3; ++n) {
    double mean = 0, var = 0;
    for (int i = 0; i < per; ++i) mean += yr.data()[n * per + i];
    mean /= per;
    for (int i = 0; i < per; ++i)
      var += (yr.data()[n * per + i] - mean) * (yr.data()[n * per + i] - mean);
    var /= per;
    CHECK(std::fabs(mean) < 1e-6);
    CHECK(std::fabs(var - 1.0) < 1e-4);
  }

  CHECK_THROWS_AS(group_norm(xr, 3, g4, b4, 1e-5), ConfigError);
}

TEST_CASE("lstm cell frozen examples") {
  const int n = 2, k = 3, h = 4;
  Tensor<double> w_ih = Tensor<double>::zeros({4 * h, k});
  Tensor<double> w_hh = Tensor<double>::zeros({4 * h, h});
  Tensor<double> b = Tensor<double>::zeros({4 * h});
  Rng rng(17);
  Tensor<double> x = Tensor<double>::randn({n, k}, rng);

  // zero weights, zero state -> h'=0, c'=0
  Tensor<double> hc0 = Tensor<double>::zeros({n, 2 * h});
  Tensor<double> out0 = lstm_cell(x, hc0, w_ih, w_hh, b);
  for (std::int64_t i = 0; i < out0.numel(); ++i)
    CHECK(out0.data()[i] == doctest::Approx(0.0));

  // zero weights, c=c0 -> c' = 0.5*c0, h' = 0.5*tanh(0.5*c0)
  Tensor<double> hc1 = Tensor<double>::zeros({n, 2 * h});
  for (int r = 0; r < n; ++r)
    for (int j = 0; j < h; ++j) hc1.data()[r * 2 * h + h + j] = 0.3 * (j + 1);
  Tensor<double> out1 = lstm_cell(x, hc1, w_ih, w_hh, b);
  for (int r = 0; r < n; ++r)
    for (int j = 0; j < h; ++j) {
      const double c0 = 0.3 * (j + 1);
      CHECK(out1.data()[r * 2 * h + h + j] == doctest::Approx(0.5 * c0));
      CHECK(out1.data()[r * 2 * h + j] ==
            doctest::Approx(0.5 * std::tanh(0.5 * c0)));
    }

  // determinism
  Tensor<double> out2 = lstm_cell(x, hc1, w_ih, w_hh, b);
  for (std::int64_t i = 0; i < out1.numel(); ++i)
    CHECK(out1.data()[i] == out2.data()[i]);
}

TEST_CASE("adamw frozen examples") {
  SUBCASE("p=1 g=1 lr=0.1 -> p' ~ 0.9") {
    ParamStore<double> ps;
    Tensor<double> p = ps.add("p", Tensor<double>::full({1}, 1.0));
    p.node()->ensure_grad()[0] = 1.0;
    AdamWConfig<double> cfg;
    cfg.learning_rate = 0.1;
    cfg.weight_decay = 0.0;
    AdamW<double> opt(cfg);
    opt.add_params(ps.items());
    opt.step();
    CHECK(p.data()[0] == doctest::Approx(0.9).epsilon(1e-6));
  }
  SUBCASE("zero gradient, zero decay: identity") {
    ParamStore<double> ps;
    Tensor<double> p = ps.add("p", Tensor<double>::full({3}, 2.0));
    p.node()->ensure_grad();
    AdamWConfig<double> cfg;
    cfg.learning_rate = 0.1;
    cfg.weight_decay = 0.0;
    AdamW<double> opt(cfg);
    opt.add_params(ps.items());
    opt.step();
    for (int i = 0; i < 3; ++i) CHECK(p.data()[i] == doctest::Approx(2.0));
  }
  SUBCASE("zero gradient with decay: p' = p*(1 - lr*wd)") {
    ParamStore<double> ps;
    Tensor<double> p = ps.add("p", Tensor<double>::full({1}, 2.0));
    p.node()->ensure_grad();
    AdamWConfig<double> cfg;
    cfg.learning_rate = 0.1;
    cfg.weight_decay = 0.1;
    AdamW<double> opt(cfg);
    opt.add_params(ps.items());
    opt.step();
    CHECK(p.data()[0] == doctest::Approx(2.0 * (1.0 - 0.01)).epsilon(1e-9));
  }
  SUBCASE("NaN gradient fails fast with the parameter name") {
    ParamStore<double> ps;
    Tensor<double> p = ps.add("enc.w", Tensor<double>::full({1}, 1.0));
    p.node()->ensure_grad()[0] = std::nan("");
    AdamW<double> opt(AdamWConfig<double>{});
    opt.add_params(ps.items());
    try {
      opt.step();
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("enc.w") != std::string::npos);
    }
  }
}

TEST_CASE("grad_check: f(x)=x^2 at x=3") {
  ParamStore<double> ps;
  Tensor<double> x = ps.add("x", Tensor<double>::full({1}, 3.0));
  auto res = grad_check([&]() { return sum_all(square(x)); }, ps);
  CHECK(res.max_rel_error < 1e-6);
  x.zero_grad();
  sum_all(square(x)).backward();
  CHECK(x.node()->grad[0] == doctest::Approx(6.0));
}

TEST_CASE("grad_check: elementwise and reduction ops") {
  Rng rng(23);
  ParamStore<double> ps;
  Tensor<double> x = ps.add("x", Tensor<double>::randn({4, 5}, rng));
  // keep relu/clamp inputs away from their kinks
  for (std::int64_t i = 0; i < x.numel(); ++i)
    if (std::fabs(x.data()[i]) < 0.05) x.data()[i] = 0.2;

  auto check = [&](const std::function<Tensor<double>()>& f) {
    auto res = grad_check(f, ps);
    CAPTURE(res.worst_param);
    CHECK(res.max_rel_error < 1e-4);
  };
  check([&] { return mean_all(relu(x)); });
  check([&] { return mean_all(gelu(x)); });
  check([&] { return mean_all(tanh_op(x)); });
  check([&] { return mean_all(sigmoid_op(x)); });
  check([&] { return mean_all(square(exp_op(mul_scalar(x, 0.3)))); });
  check([&] { return mean_all(clamp_op(x, -0.5, 0.5)); });
  check([&] { return sum_all(sum_lastdim(mul(x, x))); });
  check([&] { return mean_all(add_scalar(neg(x), 2.0)); });
}

TEST_CASE("grad_check: binary ops and broadcasting") {
  Rng rng(29);
  ParamStore<double> ps;
  Tensor<double> a = ps.add("a", Tensor<double>::randn({3, 4}, rng));
  Tensor<double> b = ps.add("b", Tensor<double>::randn({3, 4}, rng));
  Tensor<double> bias = ps.add("bias", Tensor<double>::randn({4}, rng));
  auto res = grad_check(
      [&] {
        Tensor<double> s = add(mul(a, b), sub(a, b));
        return mean_all(square(add_broadcast(s, bias)));
      },
      ps);
  CHECK(res.max_rel_error < 1e-4);

  auto res2 = grad_check([&] { return mean_all(min_elem(a, b)); }, ps);
  CHECK(res2.max_rel_error < 1e-4);
}

TEST_CASE("grad_check: linear / conv / norms on several shapes") {
  Rng rng(31);
  for (int trial = 0; trial < 3; ++trial) {
    const int n = 2 + trial, in = 3 + trial, out = 4 + (trial % 2);
    ParamStore<double> ps;
    Tensor<double> x = ps.add("x", Tensor<double>::randn({n, in}, rng));
    Tensor<double> w = ps.add("w", Tensor<double>::randn({out, in}, rng));
    Tensor<double> b = ps.add("b", Tensor<double>::randn({out}, rng));
    Tensor<double> g = ps.add("g", Tensor<double>::randn({out}, rng));
    Tensor<double> be = ps.add("be", Tensor<double>::randn({out}, rng));
    auto res = grad_check(
        [&] {
          return mean_all(
              square(layer_norm(linear(x, w, b), g, be, 1e-6)));
        },
        ps);
    CAPTURE(res.worst_param);
    CHECK(res.max_rel_error < 1e-4);
  }
  for (int trial = 0; trial < 3; ++trial) {
    const int c = 2 + trial, o = 1 + trial, hw = 3 + trial;
    ParamStore<double> ps;
    Tensor<double> x = ps.add("x", Tensor<double>::randn({2, c, hw, hw}, rng));
    Tensor<double> w = ps.add("w", Tensor<double>::randn({o, c, 3, 3}, rng));
    Tensor<double> bias = ps.add("bias", Tensor<double>::randn({o}, rng));
    Tensor<double> g = ps.add("g", Tensor<double>::randn({o}, rng));
    Tensor<double> be = ps.add("be", Tensor<double>::randn({o}, rng));
    auto res = grad_check(
        [&] {
          return mean_all(
              square(group_norm(conv2d(x, w, bias, 1), 1, g, be, 1e-5)));
        },
        ps);
    CAPTURE(res.worst_param);
    CHECK(res.max_rel_error < 1e-4);
  }
}

TEST_CASE("grad_check: softmax family and losses") {
  Rng rng(37);
  ParamStore<double> ps;
  Tensor<double> x = ps.add("x", Tensor<double>::randn({5, 4}, rng));
  std::vector<int> labels = {0, 3, 1, 2, 2};
  auto r1 = grad_check([&] { return mean_all(square(softmax_lastdim(x))); }, ps);
  CHECK(r1.max_rel_error < 1e-4);
  auto r2 =
      grad_check([&] { return mean_all(square(log_softmax_lastdim(x))); }, ps);
  CHECK(r2.max_rel_error < 1e-4);
  auto r3 = grad_check([&] { return cross_entropy(x, labels); }, ps);
  CHECK(r3.max_rel_error < 1e-4);
  auto r4 = grad_check([&] { return mean_all(logp_actions(x, labels)); }, ps);
  CHECK(r4.max_rel_error < 1e-4);

  // softmax rows sum to one
  Tensor<double> sm = softmax_lastdim(x);
  for (int r = 0; r < 5; ++r) {
    double s = 0;
    for (int j = 0; j < 4; ++j) s += sm.data()[r * 4 + j];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("grad_check: multi-head attention, 3 shapes") {
  Rng rng(41);
  struct Case { int b, l, d, h; };
  for (Case cs : {Case{1, 4, 8, 2}, Case{2, 5, 6, 3}, Case{2, 3, 8, 4}}) {
    ParamStore<double> ps;
    Tensor<double> qkv = ps.add(
        "qkv", Tensor<double>::randn({cs.b, cs.l, 3 * cs.d}, rng, 0.7));
    auto res = grad_check(
        [&] { return mean_all(square(multihead_attention(qkv, cs.h))); }, ps);
    CAPTURE(res.worst_param);
    CHECK(res.max_rel_error < 1e-4);
  }
  Tensor<double> bad = Tensor<double>::zeros({1, 2, 9});
  CHECK_THROWS_AS(multihead_attention(bad, 2), nav::ConfigError);
}

TEST_CASE("grad_check: lstm cell unrolled 3 steps, 3 shapes") {
  Rng rng(43);
  struct Case { int n, k, h; };
  for (Case cs : {Case{2, 3, 4}, Case{1, 5, 2}, Case{3, 2, 6}}) {
    ParamStore<double> ps;
    Tensor<double> x = ps.add("x", Tensor<double>::randn({cs.n, cs.k}, rng));
    Tensor<double> w_ih =
        ps.add("w_ih", Tensor<double>::randn({4 * cs.h, cs.k}, rng, 0.4));
    Tensor<double> w_hh =
        ps.add("w_hh", Tensor<double>::randn({4 * cs.h, cs.h}, rng, 0.4));
    Tensor<double> b = ps.add("b", Tensor<double>::randn({4 * cs.h}, rng, 0.2));
    auto res = grad_check(
        [&] {
          Tensor<double> hc = Tensor<double>::zeros({cs.n, 2 * cs.h});
          for (int t = 0; t < 3; ++t) hc = lstm_cell(x, hc, w_ih, w_hh, b);
          return mean_all(square(hc));
        },
        ps);
    CAPTURE(res.worst_param);
    CHECK(res.max_rel_error < 1e-4);
  }
}

TEST_CASE("grad_check: patch and token plumbing") {
  Rng rng(47);
  ParamStore<double> ps;
  Tensor<double> img = ps.add("img", Tensor<double>::randn({2, 3, 4, 4}, rng));
  Tensor<double> mask_tok = ps.add("mask", Tensor<double>::randn({5}, rng));
  auto r1 = grad_check(
      [&] { return mean_all(square(patchify(img, 2))); }, ps);
  CHECK(r1.max_rel_error < 1e-4);
  auto r2 = grad_check(
      [&] {
        Tensor<double> t = patchify(img, 2);          // [2,4,12]
        Tensor<double> back = unpatchify(t, 2, 4);    // [2,3,4,4]
        return mean_all(square(back));
      },
      ps);
  CHECK(r2.max_rel_error < 1e-4);

  // patchify/unpatchify is a bijection
  {
    NoGradGuard ng;
    Tensor<double> t = patchify(img, 2);
    Tensor<double> back = unpatchify(t, 2, 4);
    for (std::int64_t i = 0; i < img.numel(); ++i)
      CHECK(back.data()[i] == img.data()[i]);
  }

  ParamStore<double> ps2;
  Tensor<double> toks = ps2.add("toks", Tensor<double>::randn({2, 4, 5}, rng));
  Tensor<double> mt = ps2.add("mt", Tensor<double>::randn({5}, rng));
  std::vector<int> vis = {2, 0};
  auto r3 = grad_check(
      [&] {
        Tensor<double> v = gather_tokens(toks, vis);    // [2,2,5]
        Tensor<double> full = assemble_tokens(v, mt, vis, 4);
        return mean_all(square(full));
      },
      ps2);
  CHECK(r3.max_rel_error < 1e-4);

  // tokens_to_grid row-major layout: L=4 -> rows (t0,t1)/(t2,t3)
  Tensor<double> four = Tensor<double>::zeros({1, 4, 1});
  for (int i = 0; i < 4; ++i) four.data()[i] = 10.0 + i;
  Tensor<double> grid = tokens_to_grid(four);
  CHECK(grid.shape() == Shape{1, 1, 2, 2});
  CHECK(grid.data()[0] == 10.0);
  CHECK(grid.data()[1] == 11.0);
  CHECK(grid.data()[2] == 12.0);
  CHECK(grid.data()[3] == 13.0);
  Tensor<double> round = grid_to_tokens(grid);
  for (int i = 0; i < 4; ++i) CHECK(round.data()[i] == four.data()[i]);

  auto r4 = grad_check(
      [&] { return mean_all(square(tokens_to_grid(toks))); }, ps2);
  CHECK(r4.max_rel_error < 1e-4);
}

TEST_CASE("grad_check: masked patch mse") {
  Rng rng(53);
  ParamStore<double> ps;
  Tensor<double> pred = ps.add("pred", Tensor<double>::randn({2, 4, 6}, rng));
  Tensor<double> target = Tensor<double>::randn({2, 4, 6}, rng);
  std::vector<int> masked = {1, 3};
  for (bool norm : {false, true}) {
    auto res = grad_check(
        [&] { return masked_patch_mse(pred, target, masked, norm); }, ps);
    CAPTURE(norm);
    CHECK(res.max_rel_error < 1e-4);
  }
  CHECK_THROWS_AS(masked_patch_mse(pred, target, {}, false), ConfigError);

  // hand case: one masked patch, P=2, pred (0,0), target (1,1) -> 1.0
  Tensor<double> p1 = Tensor<double>::zeros({1, 1, 2});
  Tensor<double> t1 = Tensor<double>::full({1, 1, 2}, 1.0);
  CHECK(masked_patch_mse(p1, t1, {0}, false).item() == doctest::Approx(1.0));
}

TEST_CASE("grad_check: embeddings, chunk, concat") {
  Rng rng(59);
  ParamStore<double> ps;
  Tensor<double> table = ps.add("table", Tensor<double>::randn({6, 3}, rng));
  Tensor<double> other = ps.add("other", Tensor<double>::randn({4, 2}, rng));
  std::vector<int> idx = {1, 5, 0, 1};
  auto res = grad_check(
      [&] {
        Tensor<double> e = gather_rows(table, idx);  // [4,3]
        Tensor<double> cat =
            concat_lastdim(std::vector<Tensor<double>>{e, other});
        Tensor<double> left = chunk_lastdim(cat, 5, 0);
        return mean_all(
            square(concat_lastdim(std::vector<Tensor<double>>{cat, left})));
      },
      ps);
  CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("transformer block forward/backward audit") {
  Rng rng(61);
  ParamStore<double> ps;
  Rng init(100);
  TransformerBlock<double> blk(ps, "blk", 8, 2, init);
  Tensor<double> x = Tensor<double>::randn({2, 5, 8}, rng);
  auto res = grad_check(
      [&] { return mean_all(square(blk.forward(x))); }, ps,
      GradCheckOptions{1e-4, 8, 7});  // sampled: full check is done per-layer
  CAPTURE(res.worst_param);
  CHECK(res.max_rel_error < 1e-4);
  CHECK(all_finite(blk.forward(x)));
}

TEST_CASE("param store: grad norm and clipping") {
  ParamStore<double> ps;
  Tensor<double> a = ps.add("a", Tensor<double>::zeros({3}));
  Tensor<double> b = ps.add("b", Tensor<double>::zeros({4}));
  auto& ga = a.node()->ensure_grad();
  ga = {3.0, 0.0, 0.0};
  auto& gb = b.node()->ensure_grad();
  gb = {0.0, 4.0, 0.0, 0.0};
  CHECK(ps.grad_norm() == doctest::Approx(5.0));
  const double pre = ps.clip_grad_norm(1.0);
  CHECK(pre == doctest::Approx(5.0));
  CHECK(ps.grad_norm() == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(a.node()->grad[0] == doctest::Approx(0.6));
  CHECK_THROWS_AS(ps.add("a", Tensor<double>::zeros({1})), ConfigError);
}

TEST_CASE("checkpoint round-trip, manifest and error paths") {
  ParamStore<float> ps;
  Rng rng(71);
  Tensor<float> w = ps.add("enc.w", Tensor<float>::randn({3, 2}, rng));
  Tensor<float> b = ps.add("enc.b", Tensor<float>::randn({3}, rng));

  Checkpoint ck;
  ck.meta = {{"kind", "unit-test"}, {"steps", 123}};
  pack_params(ps, ck);
  const std::string path = "ckpt_roundtrip.bin";
  save_checkpoint(path, ck);

  Checkpoint loaded = load_checkpoint(path);
  CHECK(loaded.meta.at("kind") == "unit-test");
  CHECK(loaded.meta.at("steps") == 123);
  REQUIRE(loaded.tensors.size() == 2);

  ParamStore<float> ps2;
  ps2.add("enc.w", Tensor<float>::zeros({3, 2}));
  ps2.add("enc.b", Tensor<float>::zeros({3}));
  unpack_params(loaded, ps2);
  for (int i = 0; i < 6; ++i)
    CHECK(ps2.find("enc.w")->data()[i] == w.data()[i]);

  // architecture mismatch: wrong shape and missing tensor
  ParamStore<float> wrong;
  wrong.add("enc.w", Tensor<float>::zeros({2, 3}));
  CHECK_THROWS_AS(unpack_params(loaded, wrong), CheckpointError);
  ParamStore<float> missing;
  missing.add("enc.extra", Tensor<float>::zeros({1}));
  CHECK_THROWS_AS(unpack_params(loaded, missing), CheckpointError);

  // corrupt magic
  {
    std::ofstream f("ckpt_bad.bin", std::ios::binary);
    f << "NOTACKPTxxxxxxxxxxxx";
  }
  CHECK_THROWS_AS(load_checkpoint("ckpt_bad.bin"), IoError);
  CHECK_THROWS_AS(load_checkpoint("ckpt_does_not_exist.bin"), IoError);
}

TEST_CASE("float training-precision path stays consistent with double") {
  Rng rng(73);
  Tensor<float> xf = Tensor<float>::randn({4, 3}, rng);
  Tensor<double> xd = xf.cast<double>();
  Tensor<float> wf = Tensor<float>::randn({2, 3}, rng);
  Tensor<double> wd = wf.cast<double>();
  Tensor<float> yf = linear(xf, wf, Tensor<float>{});
  Tensor<double> yd = linear(xd, wd, Tensor<double>{});
  for (std::int64_t i = 0; i < yf.numel(); ++i)
    CHECK(std::fabs(static_cast<double>(yf.data()[i]) - yd.data()[i]) < 1e-4);
}
