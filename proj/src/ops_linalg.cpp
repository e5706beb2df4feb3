#include <algorithm>
#include <cmath>

#include "nav/blas.hpp"
#include "nav/ops.hpp"

namespace nav {

namespace {

template <class T>
std::vector<T>& grad_of(const std::shared_ptr<TensorNode<T>>& n) {
  return n->ensure_grad();
}

}  // namespace

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  NAV_CHECK_SHAPE(a.ndim() == 2 && b.ndim() == 2 && a.dim(1) == b.dim(0),
                  "matmul: incompatible shapes " + shape_str(a.shape()) +
                      " x " + shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<T> y = Tensor<T>::zeros({m, n});
  gemm(false, false, m, n, k, T(1), a.data(), k, b.data(), n, T(0), y.data(), n);
  auto an = a.node();
  auto bn = b.node();
  auto* yn = y.node().get();
  attach_op(y, {an, bn}, [an, bn, yn, m, k, n]() {
    const T* gy = yn->grad.data();
    if (an->requires_grad)
      gemm(false, true, m, k, n, T(1), gy, n, bn->data->data(), n, T(1),
           grad_of(an).data(), k);
    if (bn->requires_grad)
      gemm(true, false, k, n, m, T(1), an->data->data(), k, gy, n, T(1),
           grad_of(bn).data(), n);
  });
  return y;
}

template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  NAV_CHECK_SHAPE(x.ndim() >= 1 && w.ndim() == 2, "linear: bad ranks");
  const int kdim = x.dim(x.ndim() - 1);
  NAV_CHECK_SHAPE(w.dim(1) == kdim, "linear: feature dim mismatch " +
                                        shape_str(x.shape()) + " vs " +
                                        shape_str(w.shape()));
  const int mdim = w.dim(0);
  if (b.defined())
    NAV_CHECK_SHAPE(b.numel() == mdim, "linear: bias size mismatch");
  const int rows = static_cast<int>(x.numel() / kdim);
  Shape out_shape = x.shape();
  out_shape.back() = mdim;
  Tensor<T> y = Tensor<T>::zeros(out_shape);
  gemm(false, true, rows, mdim, kdim, T(1), x.data(), kdim, w.data(), kdim,
       T(0), y.data(), mdim);
  if (b.defined()) {
    T* yd = y.data();
    const T* bd = b.data();
    for (int r = 0; r < rows; ++r)
      for (int j = 0; j < mdim; ++j) yd[static_cast<std::int64_t>(r) * mdim + j] += bd[j];
  }
  auto xn = x.node();
  auto wn = w.node();
  std::vector<std::shared_ptr<TensorNode<T>>> parents = {xn, wn};
  std::shared_ptr<TensorNode<T>> bn;
  if (b.defined()) {
    bn = b.node();
    parents.push_back(bn);
  }
  auto* yn = y.node().get();
  attach_op(y, parents, [xn, wn, bn, yn, rows, mdim, kdim]() {
    const T* gy = yn->grad.data();
    if (xn->requires_grad)
      gemm(false, false, rows, kdim, mdim, T(1), gy, mdim, wn->data->data(),
           kdim, T(1), grad_of(xn).data(), kdim);
    if (wn->requires_grad)
      gemm(true, false, mdim, kdim, rows, T(1), gy, mdim, xn->data->data(),
           kdim, T(1), grad_of(wn).data(), kdim);
    if (bn && bn->requires_grad) {
      auto& gb = grad_of(bn);
      for (int r = 0; r < rows; ++r)
        for (int j = 0; j < mdim; ++j)
          gb[j] += gy[static_cast<std::int64_t>(r) * mdim + j];
    }
  });
  return y;
}

template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 int padding) {
  NAV_CHECK_SHAPE(x.ndim() == 4 && w.ndim() == 4, "conv2d: bad ranks");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int o = w.dim(0), k = w.dim(2);
  NAV_CHECK_SHAPE(w.dim(1) == c && w.dim(3) == k, "conv2d: kernel shape");
  NAV_CHECK_CONFIG(k % 2 == 1 && padding >= 0, "conv2d: odd kernel required");
  const int ho = h + 2 * padding - k + 1;
  const int wo = wd + 2 * padding - k + 1;
  NAV_CHECK_SHAPE(ho > 0 && wo > 0, "conv2d: kernel larger than padded input");
  if (bias.defined())
    NAV_CHECK_SHAPE(bias.numel() == o, "conv2d: bias size mismatch");

  const std::int64_t rows = static_cast<std::int64_t>(n) * ho * wo;
  const int ckk = c * k * k;
  auto cols = std::make_shared<std::vector<T>>(rows * ckk, T(0));
  const T* xd = x.data();
  for (int b = 0; b < n; ++b)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        T* col = cols->data() +
                 ((static_cast<std::int64_t>(b) * ho + oy) * wo + ox) * ckk;
        for (int ci = 0; ci < c; ++ci)
          for (int ky = 0; ky < k; ++ky) {
            const int iy = oy - padding + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = ox - padding + kx;
              if (ix < 0 || ix >= wd) continue;
              col[(ci * k + ky) * k + kx] =
                  xd[((static_cast<std::int64_t>(b) * c + ci) * h + iy) * wd +
                     ix];
            }
          }
      }

  // cols [rows, CKK] x w [O, CKK]^T -> [rows, O], then layout to [N,O,Ho,Wo].
  std::vector<T> prod(rows * o);
  gemm(false, true, static_cast<int>(rows), o, ckk, T(1), cols->data(), ckk,
       w.data(), ckk, T(0), prod.data(), o);
  Tensor<T> y = Tensor<T>::zeros({n, o, ho, wo});
  T* yd = y.data();
  const T* bd = bias.defined() ? bias.data() : nullptr;
  for (int b = 0; b < n; ++b)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        const std::int64_t r = (static_cast<std::int64_t>(b) * ho + oy) * wo + ox;
        for (int oc = 0; oc < o; ++oc)
          yd[((static_cast<std::int64_t>(b) * o + oc) * ho + oy) * wo + ox] =
              prod[r * o + oc] + (bd ? bd[oc] : T(0));
      }

  auto xn = x.node();
  auto wn = w.node();
  std::vector<std::shared_ptr<TensorNode<T>>> parents = {xn, wn};
  std::shared_ptr<TensorNode<T>> bn;
  if (bias.defined()) {
    bn = bias.node();
    parents.push_back(bn);
  }
  auto* yn = y.node().get();
  attach_op(y, parents,
            [xn, wn, bn, yn, cols, n, c, h, wd, o, k, padding, ho, wo, rows,
             ckk]() {
              const T* gy = yn->grad.data();
              // Regroup dY to [rows, O].
              std::vector<T> gprod(rows * o);
              for (int b = 0; b < n; ++b)
                for (int oy = 0; oy < ho; ++oy)
                  for (int ox = 0; ox < wo; ++ox) {
                    const std::int64_t r =
                        (static_cast<std::int64_t>(b) * ho + oy) * wo + ox;
                    for (int oc = 0; oc < o; ++oc)
                      gprod[r * o + oc] =
                          gy[((static_cast<std::int64_t>(b) * o + oc) * ho +
                              oy) *
                                 wo +
                             ox];
                  }
              if (wn->requires_grad)
                gemm(true, false, o, ckk, static_cast<int>(rows), T(1),
                     gprod.data(), o, cols->data(), ckk, T(1),
                     grad_of(wn).data(), ckk);
              if (bn && bn->requires_grad) {
                auto& gb = grad_of(bn);
                for (std::int64_t r = 0; r < rows; ++r)
                  for (int oc = 0; oc < o; ++oc) gb[oc] += gprod[r * o + oc];
              }
              if (xn->requires_grad) {
                std::vector<T> gcols(rows * ckk);
                gemm(false, false, static_cast<int>(rows), ckk, o, T(1),
                     gprod.data(), o, wn->data->data(), ckk, T(0), gcols.data(),
                     ckk);
                auto& gx = grad_of(xn);
                for (int b = 0; b < n; ++b)
                  for (int oy = 0; oy < ho; ++oy)
                    for (int ox = 0; ox < wo; ++ox) {
                      const T* col =
                          gcols.data() +
                          ((static_cast<std::int64_t>(b) * ho + oy) * wo + ox) *
                              ckk;
                      for (int ci = 0; ci < c; ++ci)
                        for (int ky = 0; ky < k; ++ky) {
                          const int iy = oy - padding + ky;
                          if (iy < 0 || iy >= h) continue;
                          for (int kx = 0; kx < k; ++kx) {
                            const int ix = ox - padding + kx;
                            if (ix < 0 || ix >= wd) continue;
                            gx[((static_cast<std::int64_t>(b) * c + ci) * h +
                                iy) *
                                   wd +
                               ix] += col[(ci * k + ky) * k + kx];
                          }
                        }
                    }
              }
            });
  return y;
}

template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps) {
  const int d = x.dim(x.ndim() - 1);
  NAV_CHECK_SHAPE(gamma.numel() == d && beta.numel() == d,
                  "layer_norm: affine size mismatch");
  const std::int64_t rows = x.numel() / d;
  Tensor<T> y = Tensor<T>::zeros(x.shape());
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto invstd = std::make_shared<std::vector<T>>(rows);
  const T* xd = x.data();
  const T* gd = gamma.data();
  const T* bd = beta.data();
  T* yd = y.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* row = xd + r * d;
    T mean = T(0);
    for (int j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<T>(d);
    T var = T(0);
    for (int j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<T>(d);
    const T is = T(1) / std::sqrt(var + eps);
    (*invstd)[static_cast<std::size_t>(r)] = is;
    for (int j = 0; j < d; ++j) {
      const T xh = (row[j] - mean) * is;
      (*xhat)[static_cast<std::size_t>(r * d + j)] = xh;
      yd[r * d + j] = xh * gd[j] + bd[j];
    }
  }
  auto xn = x.node();
  auto gn = gamma.node();
  auto bn = beta.node();
  auto* yn = y.node().get();
  attach_op(y, {xn, gn, bn}, [xn, gn, bn, yn, xhat, invstd, rows, d]() {
    const T* gy = yn->grad.data();
    const T* xh = xhat->data();
    if (gn->requires_grad) {
      auto& gg = grad_of(gn);
      for (std::int64_t r = 0; r < rows; ++r)
        for (int j = 0; j < d; ++j) gg[j] += gy[r * d + j] * xh[r * d + j];
    }
    if (bn->requires_grad) {
      auto& gb = grad_of(bn);
      for (std::int64_t r = 0; r < rows; ++r)
        for (int j = 0; j < d; ++j) gb[j] += gy[r * d + j];
    }
    if (xn->requires_grad) {
      auto& gx = grad_of(xn);
      const T* gd = gn->data->data();
      for (std::int64_t r = 0; r < rows; ++r) {
        T s1 = T(0), s2 = T(0);
        for (int j = 0; j < d; ++j) {
          const T dxh = gy[r * d + j] * gd[j];
          s1 += dxh;
          s2 += dxh * xh[r * d + j];
        }
        s1 /= static_cast<T>(d);
        s2 /= static_cast<T>(d);
        const T is = (*invstd)[static_cast<std::size_t>(r)];
        for (int j = 0; j < d; ++j) {
          const T dxh = gy[r * d + j] * gd[j];
          gx[r * d + j] += is * (dxh - s1 - xh[r * d + j] * s2);
        }
      }
    }
  });
  return y;
}

template <class T>
Tensor<T> group_norm(const Tensor<T>& x, int num_groups, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps) {
  NAV_CHECK_SHAPE(x.ndim() == 4, "group_norm: expects [N,C,H,W]");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  NAV_CHECK_CONFIG(num_groups > 0 && c % num_groups == 0,
                   "group_norm: channels not divisible by groups");
  NAV_CHECK_SHAPE(gamma.numel() == c && beta.numel() == c,
                  "group_norm: affine size mismatch");
  const int cg = c / num_groups;
  const std::int64_t gsz = static_cast<std::int64_t>(cg) * h * w;
  const std::int64_t csz = static_cast<std::int64_t>(h) * w;
  Tensor<T> y = Tensor<T>::zeros(x.shape());
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto invstd =
      std::make_shared<std::vector<T>>(static_cast<std::size_t>(n) * num_groups);
  const T* xd = x.data();
  const T* gd = gamma.data();
  const T* bd = beta.data();
  T* yd = y.data();
  for (int b = 0; b < n; ++b)
    for (int g = 0; g < num_groups; ++g) {
      const std::int64_t base =
          (static_cast<std::int64_t>(b) * c + g * cg) * csz;
      T mean = T(0);
      for (std::int64_t i = 0; i < gsz; ++i) mean += xd[base + i];
      mean /= static_cast<T>(gsz);
      T var = T(0);
      for (std::int64_t i = 0; i < gsz; ++i)
        var += (xd[base + i] - mean) * (xd[base + i] - mean);
      var /= static_cast<T>(gsz);
      const T is = T(1) / std::sqrt(var + eps);
      (*invstd)[static_cast<std::size_t>(b * num_groups + g)] = is;
      for (std::int64_t i = 0; i < gsz; ++i) {
        const T xh = (xd[base + i] - mean) * is;
        (*xhat)[static_cast<std::size_t>(base + i)] = xh;
        const int ch = g * cg + static_cast<int>(i / csz);
        yd[base + i] = xh * gd[ch] + bd[ch];
      }
    }
  auto xn = x.node();
  auto gn = gamma.node();
  auto bn = beta.node();
  auto* yn = y.node().get();
  attach_op(y, {xn, gn, bn},
            [xn, gn, bn, yn, xhat, invstd, n, c, num_groups, cg, gsz, csz]() {
              const T* gy = yn->grad.data();
              const T* xh = xhat->data();
              if (gn->requires_grad || bn->requires_grad) {
                for (int b = 0; b < n; ++b)
                  for (int ch = 0; ch < c; ++ch) {
                    const std::int64_t base =
                        (static_cast<std::int64_t>(b) * c + ch) * csz;
                    T sg = T(0), sb = T(0);
                    for (std::int64_t i = 0; i < csz; ++i) {
                      sg += gy[base + i] * xh[base + i];
                      sb += gy[base + i];
                    }
                    if (gn->requires_grad) grad_of(gn)[ch] += sg;
                    if (bn->requires_grad) grad_of(bn)[ch] += sb;
                  }
              }
              if (xn->requires_grad) {
                auto& gx = grad_of(xn);
                const T* gd = gn->data->data();
                for (int b = 0; b < n; ++b)
                  for (int g = 0; g < num_groups; ++g) {
                    const std::int64_t base =
                        (static_cast<std::int64_t>(b) * c + g * cg) * csz;
                    T s1 = T(0), s2 = T(0);
                    for (std::int64_t i = 0; i < gsz; ++i) {
                      const int ch = g * cg + static_cast<int>(i / csz);
                      const T dxh = gy[base + i] * gd[ch];
                      s1 += dxh;
                      s2 += dxh * xh[base + i];
                    }
                    s1 /= static_cast<T>(gsz);
                    s2 /= static_cast<T>(gsz);
                    const T is =
                        (*invstd)[static_cast<std::size_t>(b * num_groups + g)];
                    for (std::int64_t i = 0; i < gsz; ++i) {
                      const int ch = g * cg + static_cast<int>(i / csz);
                      const T dxh = gy[base + i] * gd[ch];
                      gx[base + i] += is * (dxh - s1 - xh[base + i] * s2);
                    }
                  }
              }
            });
  return y;
}

template <class T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
  const int d = x.dim(x.ndim() - 1);
  const std::int64_t rows = x.numel() / d;
  Tensor<T> y = Tensor<T>::zeros(x.shape());
  const T* xd = x.data();
  T* yd = y.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* row = xd + r * d;
    T mx = row[0];
    for (int j = 1; j < d; ++j) mx = std::max(mx, row[j]);
    T z = T(0);
    for (int j = 0; j < d; ++j) {
      yd[r * d + j] = std::exp(row[j] - mx);
      z += yd[r * d + j];
    }
    for (int j = 0; j < d; ++j) yd[r * d + j] /= z;
  }
  auto xn = x.node();
  auto* yn = y.node().get();
  auto yv = y.node()->data;
  attach_op(y, {xn}, [xn, yn, yv, rows, d]() {
    auto& gx = grad_of(xn);
    const T* yd = yv->data();
    const T* gy = yn->grad.data();
    for (std::int64_t r = 0; r < rows; ++r) {
      T dot = T(0);
      for (int j = 0; j < d; ++j) dot += gy[r * d + j] * yd[r * d + j];
      for (int j = 0; j < d; ++j)
        gx[r * d + j] += yd[r * d + j] * (gy[r * d + j] - dot);
    }
  });
  return y;
}

template <class T>
Tensor<T> log_softmax_lastdim(const Tensor<T>& x) {
  const int d = x.dim(x.ndim() - 1);
  const std::int64_t rows = x.numel() / d;
  Tensor<T> y = Tensor<T>::zeros(x.shape());
  const T* xd = x.data();
  T* yd = y.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* row = xd + r * d;
    T mx = row[0];
    for (int j = 1; j < d; ++j) mx = std::max(mx, row[j]);
    T z = T(0);
    for (int j = 0; j < d; ++j) z += std::exp(row[j] - mx);
    const T logz = std::log(z) + mx;
    for (int j = 0; j < d; ++j) yd[r * d + j] = row[j] - logz;
  }
  auto xn = x.node();
  auto* yn = y.node().get();
  auto yv = y.node()->data;
  attach_op(y, {xn}, [xn, yn, yv, rows, d]() {
    auto& gx = grad_of(xn);
    const T* yd = yv->data();
    const T* gy = yn->grad.data();
    for (std::int64_t r = 0; r < rows; ++r) {
      T s = T(0);
      for (int j = 0; j < d; ++j) s += gy[r * d + j];
      for (int j = 0; j < d; ++j)
        gx[r * d + j] += gy[r * d + j] - std::exp(yd[r * d + j]) * s;
    }
  });
  return y;
}

template <class T>
Tensor<T> multihead_attention(const Tensor<T>& qkv, int num_heads) {
  NAV_CHECK_SHAPE(qkv.ndim() == 3 && qkv.dim(2) % 3 == 0,
                  "multihead_attention: expects [B,L,3D]");
  const int b = qkv.dim(0), l = qkv.dim(1), d = qkv.dim(2) / 3;
  NAV_CHECK_CONFIG(num_heads > 0 && d % num_heads == 0,
                   "multihead_attention: dim not divisible by heads");
  const int dh = d / num_heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  const int ld = 3 * d;

  Tensor<T> y = Tensor<T>::zeros({b, l, d});
  // Cached softmax probabilities, [B,H,L,L].
  auto probs = std::make_shared<std::vector<T>>(
      static_cast<std::int64_t>(b) * num_heads * l * l);
  const T* in = qkv.data();
  T* out = y.data();
  std::vector<T> scores(static_cast<std::int64_t>(l) * l);
  for (int bi = 0; bi < b; ++bi) {
    const T* base = in + static_cast<std::int64_t>(bi) * l * ld;
    T* obase = out + static_cast<std::int64_t>(bi) * l * d;
    for (int hi = 0; hi < num_heads; ++hi) {
      const T* q = base + hi * dh;
      const T* k = base + d + hi * dh;
      const T* v = base + 2 * d + hi * dh;
      T* p = probs->data() +
             ((static_cast<std::int64_t>(bi) * num_heads + hi) * l) * l;
      gemm(false, true, l, l, dh, scale, q, ld, k, ld, T(0), scores.data(), l);
      for (int r = 0; r < l; ++r) {
        const T* srow = scores.data() + static_cast<std::int64_t>(r) * l;
        T* prow = p + static_cast<std::int64_t>(r) * l;
        T mx = srow[0];
        for (int j = 1; j < l; ++j) mx = std::max(mx, srow[j]);
        T z = T(0);
        for (int j = 0; j < l; ++j) {
          prow[j] = std::exp(srow[j] - mx);
          z += prow[j];
        }
        for (int j = 0; j < l; ++j) prow[j] /= z;
      }
      gemm(false, false, l, dh, l, T(1), p, l, v, ld, T(0), obase + hi * dh, d);
    }
  }
  auto xn = qkv.node();
  auto* yn = y.node().get();
  attach_op(y, {xn}, [xn, yn, probs, b, l, d, num_heads, dh, scale, ld]() {
    auto& gin = grad_of(xn);
    const T* in = xn->data->data();
    const T* gy = yn->grad.data();
    std::vector<T> dp(static_cast<std::int64_t>(l) * l);
    std::vector<T> ds(static_cast<std::int64_t>(l) * l);
    for (int bi = 0; bi < b; ++bi) {
      const T* base = in + static_cast<std::int64_t>(bi) * l * ld;
      T* gbase = gin.data() + static_cast<std::int64_t>(bi) * l * ld;
      const T* gob = gy + static_cast<std::int64_t>(bi) * l * d;
      for (int hi = 0; hi < num_heads; ++hi) {
        const T* q = base + hi * dh;
        const T* k = base + d + hi * dh;
        const T* v = base + 2 * d + hi * dh;
        const T* p = probs->data() +
                     ((static_cast<std::int64_t>(bi) * num_heads + hi) * l) * l;
        const T* go = gob + hi * dh;
        // dV += P^T dO
        gemm(true, false, l, dh, l, T(1), p, l, go, d, T(1),
             gbase + 2 * d + hi * dh, ld);
        // dP = dO V^T
        gemm(false, true, l, l, dh, T(1), go, d, v, ld, T(0), dp.data(), l);
        // dS = P o (dP - rowsum(dP o P))
        for (int r = 0; r < l; ++r) {
          T dot = T(0);
          const std::int64_t off = static_cast<std::int64_t>(r) * l;
          for (int j = 0; j < l; ++j) dot += dp[off + j] * p[off + j];
          for (int j = 0; j < l; ++j)
            ds[off + j] = p[off + j] * (dp[off + j] - dot);
        }
        // dQ += dS K * scale; dK += dS^T Q * scale
        gemm(false, false, l, dh, l, scale, ds.data(), l, k, ld, T(1),
             gbase + hi * dh, ld);
        gemm(true, false, l, dh, l, scale, ds.data(), l, q, ld, T(1),
             gbase + d + hi * dh, ld);
      }
    }
  });
  return y;
}

template <class T>
Tensor<T> lstm_cell(const Tensor<T>& x, const Tensor<T>& hc,
                    const Tensor<T>& w_ih, const Tensor<T>& w_hh,
                    const Tensor<T>& b) {
  NAV_CHECK_SHAPE(x.ndim() == 2 && hc.ndim() == 2 && hc.dim(1) % 2 == 0,
                  "lstm_cell: bad input ranks");
  const int n = x.dim(0), k = x.dim(1), hdim = hc.dim(1) / 2;
  NAV_CHECK_SHAPE(hc.dim(0) == n, "lstm_cell: batch mismatch");
  NAV_CHECK_SHAPE(w_ih.ndim() == 2 && w_ih.dim(0) == 4 * hdim &&
                      w_ih.dim(1) == k,
                  "lstm_cell: w_ih shape");
  NAV_CHECK_SHAPE(w_hh.ndim() == 2 && w_hh.dim(0) == 4 * hdim &&
                      w_hh.dim(1) == hdim,
                  "lstm_cell: w_hh shape");
  NAV_CHECK_SHAPE(b.numel() == 4 * hdim, "lstm_cell: bias size");

  const int g4 = 4 * hdim;
  // Activated gates [N,4H], cached for backward.
  auto gates = std::make_shared<std::vector<T>>(
      static_cast<std::int64_t>(n) * g4);
  gemm(false, true, n, g4, k, T(1), x.data(), k, w_ih.data(), k, T(0),
       gates->data(), g4);
  gemm(false, true, n, g4, hdim, T(1), hc.data(), 2 * hdim, w_hh.data(), hdim,
       T(1), gates->data(), g4);
  {
    const T* bd = b.data();
    T* gd = gates->data();
    for (int r = 0; r < n; ++r)
      for (int j = 0; j < g4; ++j)
        gd[static_cast<std::int64_t>(r) * g4 + j] += bd[j];
  }
  Tensor<T> out = Tensor<T>::zeros({n, 2 * hdim});
  auto tanhc = std::make_shared<std::vector<T>>(
      static_cast<std::int64_t>(n) * hdim);
  {
    const T* hcd = hc.data();
    T* gd = gates->data();
    T* od = out.data();
    for (int r = 0; r < n; ++r) {
      T* grow = gd + static_cast<std::int64_t>(r) * g4;
      for (int j = 0; j < hdim; ++j) {
        T& gi = grow[j];
        T& gf = grow[hdim + j];
        T& gg = grow[2 * hdim + j];
        T& go = grow[3 * hdim + j];
        gi = T(1) / (T(1) + std::exp(-gi));
        gf = T(1) / (T(1) + std::exp(-gf));
        gg = std::tanh(gg);
        go = T(1) / (T(1) + std::exp(-go));
        const T cprev = hcd[static_cast<std::int64_t>(r) * 2 * hdim + hdim + j];
        const T cnew = gf * cprev + gi * gg;
        const T u = std::tanh(cnew);
        (*tanhc)[static_cast<std::int64_t>(r) * hdim + j] = u;
        od[static_cast<std::int64_t>(r) * 2 * hdim + j] = go * u;
        od[static_cast<std::int64_t>(r) * 2 * hdim + hdim + j] = cnew;
      }
    }
  }
  auto xn = x.node();
  auto hcn = hc.node();
  auto win = w_ih.node();
  auto whn = w_hh.node();
  auto bn = b.node();
  auto* on = out.node().get();
  attach_op(out, {xn, hcn, win, whn, bn},
            [xn, hcn, win, whn, bn, on, gates, tanhc, n, k, hdim, g4]() {
              const T* gy = on->grad.data();
              const T* gd = gates->data();
              const T* hcd = hcn->data->data();
              std::vector<T> dgates(static_cast<std::int64_t>(n) * g4);
              std::vector<T> dcprev(static_cast<std::int64_t>(n) * hdim);
              for (int r = 0; r < n; ++r) {
                const T* grow = gd + static_cast<std::int64_t>(r) * g4;
                T* drow = dgates.data() + static_cast<std::int64_t>(r) * g4;
                for (int j = 0; j < hdim; ++j) {
                  const T gi = grow[j];
                  const T gf = grow[hdim + j];
                  const T gg = grow[2 * hdim + j];
                  const T go = grow[3 * hdim + j];
                  const T u = (*tanhc)[static_cast<std::int64_t>(r) * hdim + j];
                  const T dh = gy[static_cast<std::int64_t>(r) * 2 * hdim + j];
                  const T dc_ext =
                      gy[static_cast<std::int64_t>(r) * 2 * hdim + hdim + j];
                  const T dc = dc_ext + dh * go * (T(1) - u * u);
                  const T cprev =
                      hcd[static_cast<std::int64_t>(r) * 2 * hdim + hdim + j];
                  drow[j] = dc * gg * gi * (T(1) - gi);
                  drow[hdim + j] = dc * cprev * gf * (T(1) - gf);
                  drow[2 * hdim + j] = dc * gi * (T(1) - gg * gg);
                  drow[3 * hdim + j] = dh * u * go * (T(1) - go);
                  dcprev[static_cast<std::int64_t>(r) * hdim + j] = dc * gf;
                }
              }
              if (xn->requires_grad)
                gemm(false, false, n, k, g4, T(1), dgates.data(), g4,
                     win->data->data(), k, T(1), grad_of(xn).data(), k);
              if (hcn->requires_grad) {
                auto& ghc = grad_of(hcn);
                gemm(false, false, n, hdim, g4, T(1), dgates.data(), g4,
                     whn->data->data(), hdim, T(1), ghc.data(), 2 * hdim);
                for (int r = 0; r < n; ++r)
                  for (int j = 0; j < hdim; ++j)
                    ghc[static_cast<std::int64_t>(r) * 2 * hdim + hdim + j] +=
                        dcprev[static_cast<std::int64_t>(r) * hdim + j];
              }
              if (win->requires_grad)
                gemm(true, false, g4, k, n, T(1), dgates.data(), g4,
                     xn->data->data(), k, T(1), grad_of(win).data(), k);
              if (whn->requires_grad)
                gemm(true, false, g4, hdim, n, T(1), dgates.data(), g4, hcd,
                     2 * hdim, T(1), grad_of(whn).data(), hdim);
              if (bn->requires_grad) {
                auto& gb = grad_of(bn);
                for (int r = 0; r < n; ++r)
                  for (int j = 0; j < g4; ++j)
                    gb[j] += dgates[static_cast<std::int64_t>(r) * g4 + j];
              }
            });
  return out;
}

#define NAV_INSTANTIATE_LINALG(T)                                             \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);              \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&,              \
                            const Tensor<T>&);                                \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&,              \
                            const Tensor<T>&, int);                           \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&,          \
                                const Tensor<T>&, T);                         \
  template Tensor<T> group_norm(const Tensor<T>&, int, const Tensor<T>&,     \
                                const Tensor<T>&, T);                         \
  template Tensor<T> softmax_lastdim(const Tensor<T>&);                      \
  template Tensor<T> log_softmax_lastdim(const Tensor<T>&);                  \
  template Tensor<T> multihead_attention(const Tensor<T>&, int);             \
  template Tensor<T> lstm_cell(const Tensor<T>&, const Tensor<T>&,           \
                               const Tensor<T>&, const Tensor<T>&,           \
                               const Tensor<T>&);

NAV_INSTANTIATE_LINALG(float)
NAV_INSTANTIATE_LINALG(double)

}  // namespace nav
