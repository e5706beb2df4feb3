#include <algorithm>
#include <cmath>

#include "nav/ops.hpp"

namespace nav {

namespace {

template <class T>
std::vector<T>& grad_of(const std::shared_ptr<TensorNode<T>>& n) {
  return n->ensure_grad();
}

}  // namespace

// ---------------- elementwise ----------------

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y = Tensor<T>::zeros(x.shape());
  const T* xd = x.data();
  T* yd = y.data();
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) yd[i] = xd[i] > T(0) ? xd[i] : T(0);
  auto xn = x.node();
  auto* yn = y.node().get();
  attach_op(y, {xn}, [xn, yn, n]() {
    auto& gx = grad_of(xn);
    const T* xd = xn->data->data();
    const T* gy = yn->grad.data();
    for (std::int64_t i = 0; i < n; ++i)
      if (xd[i] > T(0)) gx[i] += gy[i];
  });
  return y;
}

template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
  Tensor<T> y = Tensor<T>::zeros(x.shape());
  const T* xd = x.data();
  T* yd = y.data();
  const std::int64_t n = x.numel();
  const T inv_sqrt2 = T(0.70710678118654752440);
  for (std::int64_t i = 0; i < n; ++i)
    yd[i] = xd[i] * T(0.5) * (T(1) + std::erf(xd[i] * inv_sqrt2));
  auto xn = x.node();
  auto* yn = y.node().get();
  attach_op(y, {xn}, [xn, yn, n, inv_sqrt2]() {
    auto& gx = grad_of(xn);
    const T* xd = xn->data->data();
    const T* gy = yn->grad.data();
    const T inv_sqrt2pi = T(0.39894228040143267794);
    for (std::int64_t i = 0; i < n; ++i) {
      const T cdf = T(0.5) * (T(1) + std::erf(xd[i] * inv_sqrt2));
      const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * xd[i] * xd[i]);
      gx[i] += gy[i] * (cdf + xd[i] * pdf);
    }
  });
  return y;
}

template <class T>
Tensor<T> tanh_op(const Tensor<T>& x) {
  Tensor<T> y = Tensor<T>::zeros(x.shape());
  const T* xd = x.data();
  T* yd = y.data();
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) yd[i] = std::tanh(xd[i]);
  auto xn = x.node();
  auto* yn = y.node().get();
  auto yv = y.node()->data;
  attach_op(y, {xn}, [xn, yn, yv, n]() {
    auto& gx = grad_of(xn);
    const T* yd = yv->data();
    const T* gy = yn->grad.data();
    for (std::int64_t i = 0; i < n; ++i) gx[i] += gy[i] * (T(1) - yd[i] * yd[i]);
  });
  return y;
}

template <class T>
Tensor<T> sigmoid_op(const Tensor<T>& x) {
  Tensor<T> y = Tensor<T>::zeros(x.shape());
  const T* xd = x.data();
  T* yd = y.data();
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) yd[i] = T(1) / (T(1) + std::exp(-xd[i]));
  auto xn = x.node();
  auto* yn = y.node().get();
  auto yv = y.node()->data;
  attach_op(y, {xn}, [xn, yn, yv, n]() {
    auto& gx = grad_of(xn);
    const T* yd = yv->data();
    const T* gy = yn->grad.data();
    for (std::int64_t i = 0; i < n; ++i)
      gx[i] += gy[i] * yd[i] * (T(1) - yd[i]);
  });
  return y;
}

template <class T>
Tensor<T> exp_op(const Tensor<T>& x) {
  Tensor<T> y = Tensor<T>::zeros(x.shape());
  const T* xd = x.data();
  T* yd = y.data();
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) yd[i] = std::exp(xd[i]);
  auto xn = x.node();
  auto* yn = y.node().get();
  auto yv = y.node()->data;
  attach_op(y, {xn}, [xn, yn, yv, n]() {
    auto& gx = grad_of(xn);
    const T* yd = yv->data();
    const T* gy = yn->grad.data();
    for (std::int64_t i = 0; i < n; ++i) gx[i] += gy[i] * yd[i];
  });
  return y;
}

template <class T>
Tensor<T> square(const Tensor<T>& x) {
  Tensor<T> y = Tensor<T>::zeros(x.shape());
  const T* xd = x.data();
  T* yd = y.data();
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) yd[i] = xd[i] * xd[i];
  auto xn = x.node();
  auto* yn = y.node().get();
  attach_op(y, {xn}, [xn, yn, n]() {
    auto& gx = grad_of(xn);
    const T* xd = xn->data->data();
    const T* gy = yn->grad.data();
    for (std::int64_t i = 0; i < n; ++i) gx[i] += gy[i] * T(2) * xd[i];
  });
  return y;
}

template <class T>
Tensor<T> neg(const Tensor<T>& x) {
  return mul_scalar(x, T(-1));
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
  Tensor<T> y = Tensor<T>::zeros(x.shape());
  const T* xd = x.data();
  T* yd = y.data();
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) yd[i] = xd[i] + c;
  auto xn = x.node();
  auto* yn = y.node().get();
  attach_op(y, {xn}, [xn, yn, n]() {
    auto& gx = grad_of(xn);
    const T* gy = yn->grad.data();
    for (std::int64_t i = 0; i < n; ++i) gx[i] += gy[i];
  });
  return y;
}

template <class T>
Tensor<T> mul_scalar(const Tensor<T>& x, T c) {
  Tensor<T> y = Tensor<T>::zeros(x.shape());
  const T* xd = x.data();
  T* yd = y.data();
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) yd[i] = xd[i] * c;
  auto xn = x.node();
  auto* yn = y.node().get();
  attach_op(y, {xn}, [xn, yn, n, c]() {
    auto& gx = grad_of(xn);
    const T* gy = yn->grad.data();
    for (std::int64_t i = 0; i < n; ++i) gx[i] += gy[i] * c;
  });
  return y;
}

template <class T>
Tensor<T> clamp_op(const Tensor<T>& x, T lo, T hi) {
  Tensor<T> y = Tensor<T>::zeros(x.shape());
  const T* xd = x.data();
  T* yd = y.data();
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) yd[i] = std::min(std::max(xd[i], lo), hi);
  auto xn = x.node();
  auto* yn = y.node().get();
  attach_op(y, {xn}, [xn, yn, n, lo, hi]() {
    auto& gx = grad_of(xn);
    const T* xd = xn->data->data();
    const T* gy = yn->grad.data();
    for (std::int64_t i = 0; i < n; ++i)
      if (xd[i] >= lo && xd[i] <= hi) gx[i] += gy[i];
  });
  return y;
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  NAV_CHECK_SHAPE(a.shape() == b.shape(), "add: shape mismatch " +
                      shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> y = Tensor<T>::zeros(a.shape());
  const T* ad = a.data();
  const T* bd = b.data();
  T* yd = y.data();
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) yd[i] = ad[i] + bd[i];
  auto an = a.node();
  auto bn = b.node();
  auto* yn = y.node().get();
  attach_op(y, {an, bn}, [an, bn, yn, n]() {
    const T* gy = yn->grad.data();
    if (an->requires_grad) {
      auto& ga = grad_of(an);
      for (std::int64_t i = 0; i < n; ++i) ga[i] += gy[i];
    }
    if (bn->requires_grad) {
      auto& gb = grad_of(bn);
      for (std::int64_t i = 0; i < n; ++i) gb[i] += gy[i];
    }
  });
  return y;
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  NAV_CHECK_SHAPE(a.shape() == b.shape(), "sub: shape mismatch");
  Tensor<T> y = Tensor<T>::zeros(a.shape());
  const T* ad = a.data();
  const T* bd = b.data();
  T* yd = y.data();
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) yd[i] = ad[i] - bd[i];
  auto an = a.node();
  auto bn = b.node();
  auto* yn = y.node().get();
  attach_op(y, {an, bn}, [an, bn, yn, n]() {
    const T* gy = yn->grad.data();
    if (an->requires_grad) {
      auto& ga = grad_of(an);
      for (std::int64_t i = 0; i < n; ++i) ga[i] += gy[i];
    }
    if (bn->requires_grad) {
      auto& gb = grad_of(bn);
      for (std::int64_t i = 0; i < n; ++i) gb[i] -= gy[i];
    }
  });
  return y;
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  NAV_CHECK_SHAPE(a.shape() == b.shape(), "mul: shape mismatch");
  Tensor<T> y = Tensor<T>::zeros(a.shape());
  const T* ad = a.data();
  const T* bd = b.data();
  T* yd = y.data();
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) yd[i] = ad[i] * bd[i];
  auto an = a.node();
  auto bn = b.node();
  auto* yn = y.node().get();
  attach_op(y, {an, bn}, [an, bn, yn, n]() {
    const T* gy = yn->grad.data();
    const T* ad = an->data->data();
    const T* bd = bn->data->data();
    if (an->requires_grad) {
      auto& ga = grad_of(an);
      for (std::int64_t i = 0; i < n; ++i) ga[i] += gy[i] * bd[i];
    }
    if (bn->requires_grad) {
      auto& gb = grad_of(bn);
      for (std::int64_t i = 0; i < n; ++i) gb[i] += gy[i] * ad[i];
    }
  });
  return y;
}

template <class T>
Tensor<T> min_elem(const Tensor<T>& a, const Tensor<T>& b) {
  NAV_CHECK_SHAPE(a.shape() == b.shape(), "min_elem: shape mismatch");
  Tensor<T> y = Tensor<T>::zeros(a.shape());
  const T* ad = a.data();
  const T* bd = b.data();
  T* yd = y.data();
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) yd[i] = ad[i] <= bd[i] ? ad[i] : bd[i];
  auto an = a.node();
  auto bn = b.node();
  auto* yn = y.node().get();
  attach_op(y, {an, bn}, [an, bn, yn, n]() {
    const T* gy = yn->grad.data();
    const T* ad = an->data->data();
    const T* bd = bn->data->data();
    for (std::int64_t i = 0; i < n; ++i) {
      if (ad[i] <= bd[i]) {
        if (an->requires_grad) grad_of(an)[i] += gy[i];
      } else if (bn->requires_grad) {
        grad_of(bn)[i] += gy[i];
      }
    }
  });
  return y;
}

template <class T>
Tensor<T> add_broadcast(const Tensor<T>& x, const Tensor<T>& b) {
  const std::int64_t n = x.numel();
  const std::int64_t bn_count = b.numel();
  NAV_CHECK_SHAPE(bn_count > 0 && n % bn_count == 0,
                  "add_broadcast: incompatible sizes");
  Tensor<T> y = Tensor<T>::zeros(x.shape());
  const T* xd = x.data();
  const T* bd = b.data();
  T* yd = y.data();
  for (std::int64_t i = 0; i < n; ++i) yd[i] = xd[i] + bd[i % bn_count];
  auto xn = x.node();
  auto bn = b.node();
  auto* yn = y.node().get();
  attach_op(y, {xn, bn}, [xn, bn, yn, n, bn_count]() {
    const T* gy = yn->grad.data();
    if (xn->requires_grad) {
      auto& gx = grad_of(xn);
      for (std::int64_t i = 0; i < n; ++i) gx[i] += gy[i];
    }
    if (bn->requires_grad) {
      auto& gb = grad_of(bn);
      for (std::int64_t i = 0; i < n; ++i) gb[i % bn_count] += gy[i];
    }
  });
  return y;
}

// ---------------- reductions ----------------

template <class T>
Tensor<T> sum_all(const Tensor<T>& x) {
  T s = T(0);
  const T* xd = x.data();
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) s += xd[i];
  Tensor<T> y = Tensor<T>::scalar(s);
  auto xn = x.node();
  auto* yn = y.node().get();
  attach_op(y, {xn}, [xn, yn, n]() {
    auto& gx = grad_of(xn);
    const T g = yn->grad[0];
    for (std::int64_t i = 0; i < n; ++i) gx[i] += g;
  });
  return y;
}

template <class T>
Tensor<T> mean_all(const Tensor<T>& x) {
  return mul_scalar(sum_all(x), T(1) / static_cast<T>(x.numel()));
}

template <class T>
Tensor<T> sum_lastdim(const Tensor<T>& x) {
  NAV_CHECK_SHAPE(x.ndim() >= 1, "sum_lastdim: needs at least one dim");
  const int d = x.dim(x.ndim() - 1);
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  if (out_shape.empty()) out_shape = {1};
  const std::int64_t rows = x.numel() / d;
  Tensor<T> y = Tensor<T>::zeros(out_shape);
  const T* xd = x.data();
  T* yd = y.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    T s = T(0);
    for (int j = 0; j < d; ++j) s += xd[r * d + j];
    yd[r] = s;
  }
  auto xn = x.node();
  auto* yn = y.node().get();
  attach_op(y, {xn}, [xn, yn, rows, d]() {
    auto& gx = grad_of(xn);
    const T* gy = yn->grad.data();
    for (std::int64_t r = 0; r < rows; ++r)
      for (int j = 0; j < d; ++j) gx[r * d + j] += gy[r];
  });
  return y;
}

// ---------------- shape / indexing ----------------

template <class T>
Tensor<T> reshape(const Tensor<T>& x, const Shape& shape) {
  NAV_CHECK_SHAPE(shape_numel(shape) == x.numel(),
                  "reshape: element count mismatch " + shape_str(x.shape()) +
                      " -> " + shape_str(shape));
  // Aliases the parent's storage under a new shape.
  Tensor<T> y = Tensor<T>::zeros({0});
  y.node()->shape = shape;
  y.node()->data = x.node()->data;
  auto xn = x.node();
  auto* yn = y.node().get();
  const std::int64_t n = x.numel();
  attach_op(y, {xn}, [xn, yn, n]() {
    auto& gx = grad_of(xn);
    const T* gy = yn->grad.data();
    for (std::int64_t i = 0; i < n; ++i) gx[i] += gy[i];
  });
  return y;
}

template <class T>
Tensor<T> chunk_lastdim(const Tensor<T>& x, int parts, int index) {
  const int d = x.dim(x.ndim() - 1);
  NAV_CHECK_SHAPE(d % parts == 0 && index >= 0 && index < parts,
                  "chunk_lastdim: bad split");
  const int w = d / parts;
  Shape out_shape = x.shape();
  out_shape.back() = w;
  const std::int64_t rows = x.numel() / d;
  Tensor<T> y = Tensor<T>::zeros(out_shape);
  const T* xd = x.data();
  T* yd = y.data();
  for (std::int64_t r = 0; r < rows; ++r)
    std::copy(xd + r * d + index * w, xd + r * d + (index + 1) * w, yd + r * w);
  auto xn = x.node();
  auto* yn = y.node().get();
  attach_op(y, {xn}, [xn, yn, rows, d, w, index]() {
    auto& gx = grad_of(xn);
    const T* gy = yn->grad.data();
    for (std::int64_t r = 0; r < rows; ++r)
      for (int j = 0; j < w; ++j) gx[r * d + index * w + j] += gy[r * w + j];
  });
  return y;
}

template <class T>
Tensor<T> concat_lastdim(const std::vector<Tensor<T>>& xs) {
  NAV_CHECK_SHAPE(!xs.empty(), "concat_lastdim: empty input");
  Shape lead(xs[0].shape().begin(), xs[0].shape().end() - 1);
  int total = 0;
  for (const auto& x : xs) {
    Shape l(x.shape().begin(), x.shape().end() - 1);
    NAV_CHECK_SHAPE(l == lead, "concat_lastdim: leading dims differ");
    total += x.dim(x.ndim() - 1);
  }
  Shape out_shape = xs[0].shape();
  out_shape.back() = total;
  const std::int64_t rows = shape_numel(lead);
  Tensor<T> y = Tensor<T>::zeros(out_shape);
  T* yd = y.data();
  int off = 0;
  for (const auto& x : xs) {
    const int w = x.dim(x.ndim() - 1);
    const T* xd = x.data();
    for (std::int64_t r = 0; r < rows; ++r)
      std::copy(xd + r * w, xd + (r + 1) * w, yd + r * total + off);
    off += w;
  }
  std::vector<std::shared_ptr<TensorNode<T>>> parents;
  std::vector<int> widths;
  for (const auto& x : xs) {
    parents.push_back(x.node());
    widths.push_back(x.dim(x.ndim() - 1));
  }
  auto* yn = y.node().get();
  attach_op(y, parents, [parents, widths, yn, rows, total]() {
    const T* gy = yn->grad.data();
    int off = 0;
    for (std::size_t k = 0; k < parents.size(); ++k) {
      const int w = widths[k];
      if (parents[k]->requires_grad) {
        auto& g = grad_of(parents[k]);
        for (std::int64_t r = 0; r < rows; ++r)
          for (int j = 0; j < w; ++j) g[r * w + j] += gy[r * total + off + j];
      }
      off += w;
    }
  });
  return y;
}

template <class T>
Tensor<T> gather_rows(const Tensor<T>& table, const std::vector<int>& idx) {
  NAV_CHECK_SHAPE(table.ndim() == 2, "gather_rows: table must be 2-D");
  const int v = table.dim(0), d = table.dim(1);
  const int n = static_cast<int>(idx.size());
  for (int i : idx)
    NAV_CHECK_SHAPE(i >= 0 && i < v, "gather_rows: index out of range");
  Tensor<T> y = Tensor<T>::zeros({n, d});
  const T* td = table.data();
  T* yd = y.data();
  for (int i = 0; i < n; ++i)
    std::copy(td + static_cast<std::int64_t>(idx[i]) * d,
              td + static_cast<std::int64_t>(idx[i] + 1) * d, yd + i * d);
  auto tn = table.node();
  auto* yn = y.node().get();
  attach_op(y, {tn}, [tn, yn, idx, d, n]() {
    auto& g = grad_of(tn);
    const T* gy = yn->grad.data();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j)
        g[static_cast<std::int64_t>(idx[i]) * d + j] += gy[i * d + j];
  });
  return y;
}

template <class T>
Tensor<T> patchify(const Tensor<T>& x, int patch) {
  NAV_CHECK_SHAPE(x.ndim() == 4 && x.dim(1) == 3, "patchify: expects [N,3,H,W]");
  const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
  NAV_CHECK_SHAPE(h % patch == 0 && w % patch == 0,
                  "patchify: image size not divisible by patch");
  const int gh = h / patch, gw = w / patch, l = gh * gw;
  const int p2 = patch * patch, pd = 3 * p2;
  Tensor<T> y = Tensor<T>::zeros({n, l, pd});
  const T* xd = x.data();
  T* yd = y.data();
  for (int b = 0; b < n; ++b)
    for (int gy = 0; gy < gh; ++gy)
      for (int gx = 0; gx < gw; ++gx) {
        const std::int64_t row =
            (static_cast<std::int64_t>(b) * l + gy * gw + gx) * pd;
        for (int py = 0; py < patch; ++py)
          for (int px = 0; px < patch; ++px)
            for (int c = 0; c < 3; ++c)
              yd[row + (py * patch + px) * 3 + c] =
                  xd[((static_cast<std::int64_t>(b) * 3 + c) * h +
                      (gy * patch + py)) *
                         w +
                     gx * patch + px];
      }
  auto xn = x.node();
  auto* yn = y.node().get();
  attach_op(y, {xn}, [xn, yn, n, h, w, patch, gh, gw, l, pd]() {
    auto& g = grad_of(xn);
    const T* gy_ = yn->grad.data();
    for (int b = 0; b < n; ++b)
      for (int gy = 0; gy < gh; ++gy)
        for (int gx = 0; gx < gw; ++gx) {
          const std::int64_t row =
              (static_cast<std::int64_t>(b) * l + gy * gw + gx) * pd;
          for (int py = 0; py < patch; ++py)
            for (int px = 0; px < patch; ++px)
              for (int c = 0; c < 3; ++c)
                g[((static_cast<std::int64_t>(b) * 3 + c) * h +
                   (gy * patch + py)) *
                      w +
                  gx * patch + px] += gy_[row + (py * patch + px) * 3 + c];
        }
  });
  return y;
}

template <class T>
Tensor<T> unpatchify(const Tensor<T>& x, int patch, int image) {
  NAV_CHECK_SHAPE(x.ndim() == 3, "unpatchify: expects [N,L,P]");
  const int n = x.dim(0), l = x.dim(1), pd = x.dim(2);
  const int g = image / patch;
  NAV_CHECK_SHAPE(g * g == l && pd == 3 * patch * patch,
                  "unpatchify: inconsistent sizes");
  Tensor<T> y = Tensor<T>::zeros({n, 3, image, image});
  const T* xd = x.data();
  T* yd = y.data();
  for (int b = 0; b < n; ++b)
    for (int gy = 0; gy < g; ++gy)
      for (int gx = 0; gx < g; ++gx) {
        const std::int64_t row =
            (static_cast<std::int64_t>(b) * l + gy * g + gx) * pd;
        for (int py = 0; py < patch; ++py)
          for (int px = 0; px < patch; ++px)
            for (int c = 0; c < 3; ++c)
              yd[((static_cast<std::int64_t>(b) * 3 + c) * image +
                  (gy * patch + py)) *
                     image +
                 gx * patch + px] = xd[row + (py * patch + px) * 3 + c];
      }
  auto xn = x.node();
  auto* yn = y.node().get();
  attach_op(y, {xn}, [xn, yn, n, l, pd, patch, image, g]() {
    auto& gr = grad_of(xn);
    const T* gy_ = yn->grad.data();
    for (int b = 0; b < n; ++b)
      for (int gy = 0; gy < g; ++gy)
        for (int gx = 0; gx < g; ++gx) {
          const std::int64_t row =
              (static_cast<std::int64_t>(b) * l + gy * g + gx) * pd;
          for (int py = 0; py < patch; ++py)
            for (int px = 0; px < patch; ++px)
              for (int c = 0; c < 3; ++c)
                gr[row + (py * patch + px) * 3 + c] +=
                    gy_[((static_cast<std::int64_t>(b) * 3 + c) * image +
                         (gy * patch + py)) *
                            image +
                        gx * patch + px];
        }
  });
  return y;
}

template <class T>
Tensor<T> tokens_to_grid(const Tensor<T>& x) {
  NAV_CHECK_SHAPE(x.ndim() == 3, "tokens_to_grid: expects [N,L,D]");
  const int n = x.dim(0), l = x.dim(1), d = x.dim(2);
  const int s = static_cast<int>(std::lround(std::sqrt(static_cast<double>(l))));
  NAV_CHECK_CONFIG(s * s == l, "tokens_to_grid: token count is not a square");
  Tensor<T> y = Tensor<T>::zeros({n, d, s, s});
  const T* xd = x.data();
  T* yd = y.data();
  for (int b = 0; b < n; ++b)
    for (int t = 0; t < l; ++t)
      for (int c = 0; c < d; ++c)
        yd[((static_cast<std::int64_t>(b) * d + c) * s + t / s) * s + t % s] =
            xd[(static_cast<std::int64_t>(b) * l + t) * d + c];
  auto xn = x.node();
  auto* yn = y.node().get();
  attach_op(y, {xn}, [xn, yn, n, l, d, s]() {
    auto& g = grad_of(xn);
    const T* gy = yn->grad.data();
    for (int b = 0; b < n; ++b)
      for (int t = 0; t < l; ++t)
        for (int c = 0; c < d; ++c)
          g[(static_cast<std::int64_t>(b) * l + t) * d + c] +=
              gy[((static_cast<std::int64_t>(b) * d + c) * s + t / s) * s +
                 t % s];
  });
  return y;
}

template <class T>
Tensor<T> grid_to_tokens(const Tensor<T>& x) {
  NAV_CHECK_SHAPE(x.ndim() == 4 && x.dim(2) == x.dim(3),
                  "grid_to_tokens: expects [N,D,s,s]");
  const int n = x.dim(0), d = x.dim(1), s = x.dim(2);
  const int l = s * s;
  Tensor<T> y = Tensor<T>::zeros({n, l, d});
  const T* xd = x.data();
  T* yd = y.data();
  for (int b = 0; b < n; ++b)
    for (int t = 0; t < l; ++t)
      for (int c = 0; c < d; ++c)
        yd[(static_cast<std::int64_t>(b) * l + t) * d + c] =
            xd[((static_cast<std::int64_t>(b) * d + c) * s + t / s) * s + t % s];
  auto xn = x.node();
  auto* yn = y.node().get();
  attach_op(y, {xn}, [xn, yn, n, l, d, s]() {
    auto& g = grad_of(xn);
    const T* gy = yn->grad.data();
    for (int b = 0; b < n; ++b)
      for (int t = 0; t < l; ++t)
        for (int c = 0; c < d; ++c)
          g[((static_cast<std::int64_t>(b) * d + c) * s + t / s) * s + t % s] +=
              gy[(static_cast<std::int64_t>(b) * l + t) * d + c];
  });
  return y;
}

template <class T>
Tensor<T> gather_tokens(const Tensor<T>& x, const std::vector<int>& idx) {
  NAV_CHECK_SHAPE(x.ndim() == 3, "gather_tokens: expects [N,L,D]");
  const int n = x.dim(0), l = x.dim(1), d = x.dim(2);
  const int k = static_cast<int>(idx.size());
  for (int i : idx)
    NAV_CHECK_SHAPE(i >= 0 && i < l, "gather_tokens: index out of range");
  Tensor<T> y = Tensor<T>::zeros({n, k, d});
  const T* xd = x.data();
  T* yd = y.data();
  for (int b = 0; b < n; ++b)
    for (int i = 0; i < k; ++i)
      std::copy(xd + (static_cast<std::int64_t>(b) * l + idx[i]) * d,
                xd + (static_cast<std::int64_t>(b) * l + idx[i] + 1) * d,
                yd + (static_cast<std::int64_t>(b) * k + i) * d);
  auto xn = x.node();
  auto* yn = y.node().get();
  attach_op(y, {xn}, [xn, yn, idx, n, l, d, k]() {
    auto& g = grad_of(xn);
    const T* gy = yn->grad.data();
    for (int b = 0; b < n; ++b)
      for (int i = 0; i < k; ++i)
        for (int j = 0; j < d; ++j)
          g[(static_cast<std::int64_t>(b) * l + idx[i]) * d + j] +=
              gy[(static_cast<std::int64_t>(b) * k + i) * d + j];
  });
  return y;
}

template <class T>
Tensor<T> assemble_tokens(const Tensor<T>& visible, const Tensor<T>& mask_token,
                          const std::vector<int>& visible_idx, int total) {
  NAV_CHECK_SHAPE(visible.ndim() == 3, "assemble_tokens: expects [N,K,D]");
  const int n = visible.dim(0), k = visible.dim(1), d = visible.dim(2);
  NAV_CHECK_SHAPE(static_cast<int>(visible_idx.size()) == k &&
                      mask_token.numel() == d,
                  "assemble_tokens: inconsistent sizes");
  Tensor<T> y = Tensor<T>::zeros({n, total, d});
  const T* vd = visible.data();
  const T* md = mask_token.data();
  T* yd = y.data();
  std::vector<char> is_visible(static_cast<std::size_t>(total), 0);
  for (int i : visible_idx) is_visible[static_cast<std::size_t>(i)] = 1;
  for (int b = 0; b < n; ++b) {
    for (int t = 0; t < total; ++t)
      if (!is_visible[static_cast<std::size_t>(t)])
        std::copy(md, md + d, yd + (static_cast<std::int64_t>(b) * total + t) * d);
    for (int i = 0; i < k; ++i)
      std::copy(vd + (static_cast<std::int64_t>(b) * k + i) * d,
                vd + (static_cast<std::int64_t>(b) * k + i + 1) * d,
                yd + (static_cast<std::int64_t>(b) * total + visible_idx[i]) * d);
  }
  auto vn = visible.node();
  auto mn = mask_token.node();
  auto* yn = y.node().get();
  attach_op(y, {vn, mn}, [vn, mn, yn, visible_idx, is_visible, n, k, d, total]() {
    const T* gy = yn->grad.data();
    if (vn->requires_grad) {
      auto& g = grad_of(vn);
      for (int b = 0; b < n; ++b)
        for (int i = 0; i < k; ++i)
          for (int j = 0; j < d; ++j)
            g[(static_cast<std::int64_t>(b) * k + i) * d + j] +=
                gy[(static_cast<std::int64_t>(b) * total + visible_idx[i]) * d +
                   j];
    }
    if (mn->requires_grad) {
      auto& g = grad_of(mn);
      for (int b = 0; b < n; ++b)
        for (int t = 0; t < total; ++t)
          if (!is_visible[static_cast<std::size_t>(t)])
            for (int j = 0; j < d; ++j)
              g[j] += gy[(static_cast<std::int64_t>(b) * total + t) * d + j];
    }
  });
  return y;
}

// ---------------- losses ----------------

template <class T>
Tensor<T> masked_patch_mse(const Tensor<T>& pred, const Tensor<T>& target,
                           const std::vector<int>& masked_idx, bool normalize,
                           T eps) {
  NAV_CHECK_SHAPE(pred.ndim() == 3 && pred.shape() == target.shape(),
                  "masked_patch_mse: expects matching [N,L,P]");
  NAV_CHECK_CONFIG(!masked_idx.empty(), "masked_patch_mse: empty mask");
  const int n = pred.dim(0), l = pred.dim(1), p = pred.dim(2);
  const int m = static_cast<int>(masked_idx.size());
  for (int i : masked_idx)
    NAV_CHECK_SHAPE(i >= 0 && i < l, "masked_patch_mse: index out of range");

  // Residuals on masked patches, against (optionally standardized) targets.
  std::vector<T> residual(static_cast<std::size_t>(n) * m * p);
  const T* pd = pred.data();
  const T* td = target.data();
  T total = T(0);
  for (int b = 0; b < n; ++b)
    for (int i = 0; i < m; ++i) {
      const std::int64_t off =
          (static_cast<std::int64_t>(b) * l + masked_idx[i]) * p;
      const T* tp = td + off;
      T mean = T(0), var = T(0);
      if (normalize) {
        for (int j = 0; j < p; ++j) mean += tp[j];
        mean /= static_cast<T>(p);
        for (int j = 0; j < p; ++j) var += (tp[j] - mean) * (tp[j] - mean);
        var /= static_cast<T>(p);
      }
      const T inv_std = normalize ? T(1) / std::sqrt(var + eps) : T(1);
      T* res = residual.data() + (static_cast<std::int64_t>(b) * m + i) * p;
      for (int j = 0; j < p; ++j) {
        const T tgt = normalize ? (tp[j] - mean) * inv_std : tp[j];
        res[j] = pd[off + j] - tgt;
        total += res[j] * res[j];
      }
    }
  const T denom = static_cast<T>(n) * m * p;
  Tensor<T> y = Tensor<T>::scalar(total / denom);
  auto pn = pred.node();
  auto* yn = y.node().get();
  attach_op(y, {pn},
            [pn, yn, residual = std::move(residual), masked_idx, n, l, p, m,
             denom]() {
              auto& g = grad_of(pn);
              const T gy = yn->grad[0];
              for (int b = 0; b < n; ++b)
                for (int i = 0; i < m; ++i) {
                  const std::int64_t off =
                      (static_cast<std::int64_t>(b) * l + masked_idx[i]) * p;
                  const T* res = residual.data() +
                                 (static_cast<std::int64_t>(b) * m + i) * p;
                  for (int j = 0; j < p; ++j)
                    g[off + j] += gy * T(2) * res[j] / denom;
                }
            });
  return y;
}

template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
  NAV_CHECK_SHAPE(logits.ndim() == 2 &&
                      logits.dim(0) == static_cast<int>(labels.size()),
                  "cross_entropy: logits/labels mismatch");
  const int n = logits.dim(0), a = logits.dim(1);
  std::vector<T> probs(static_cast<std::size_t>(n) * a);
  const T* xd = logits.data();
  T loss = T(0);
  for (int r = 0; r < n; ++r) {
    NAV_CHECK_SHAPE(labels[r] >= 0 && labels[r] < a,
                    "cross_entropy: label out of range");
    const T* row = xd + static_cast<std::int64_t>(r) * a;
    T mx = row[0];
    for (int j = 1; j < a; ++j) mx = std::max(mx, row[j]);
    T z = T(0);
    for (int j = 0; j < a; ++j) z += std::exp(row[j] - mx);
    const T logz = std::log(z) + mx;
    for (int j = 0; j < a; ++j)
      probs[static_cast<std::int64_t>(r) * a + j] = std::exp(row[j] - logz);
    loss -= row[labels[r]] - logz;
  }
  Tensor<T> y = Tensor<T>::scalar(loss / static_cast<T>(n));
  auto xn = logits.node();
  auto* yn = y.node().get();
  attach_op(y, {xn}, [xn, yn, probs = std::move(probs), labels, n, a]() {
    auto& g = grad_of(xn);
    const T gy = yn->grad[0];
    for (int r = 0; r < n; ++r)
      for (int j = 0; j < a; ++j) {
        T v = probs[static_cast<std::int64_t>(r) * a + j];
        if (j == labels[r]) v -= T(1);
        g[static_cast<std::int64_t>(r) * a + j] += gy * v / static_cast<T>(n);
      }
  });
  return y;
}

template <class T>
Tensor<T> logp_actions(const Tensor<T>& logits, const std::vector<int>& actions) {
  NAV_CHECK_SHAPE(logits.ndim() == 2 &&
                      logits.dim(0) == static_cast<int>(actions.size()),
                  "logp_actions: logits/actions mismatch");
  const int n = logits.dim(0), a = logits.dim(1);
  std::vector<T> probs(static_cast<std::size_t>(n) * a);
  Tensor<T> y = Tensor<T>::zeros({n});
  const T* xd = logits.data();
  T* yd = y.data();
  for (int r = 0; r < n; ++r) {
    NAV_CHECK_SHAPE(actions[r] >= 0 && actions[r] < a,
                    "logp_actions: action out of range");
    const T* row = xd + static_cast<std::int64_t>(r) * a;
    T mx = row[0];
    for (int j = 1; j < a; ++j) mx = std::max(mx, row[j]);
    T z = T(0);
    for (int j = 0; j < a; ++j) z += std::exp(row[j] - mx);
    const T logz = std::log(z) + mx;
    for (int j = 0; j < a; ++j)
      probs[static_cast<std::int64_t>(r) * a + j] = std::exp(row[j] - logz);
    yd[r] = row[actions[r]] - logz;
  }
  auto xn = logits.node();
  auto* yn = y.node().get();
  attach_op(y, {xn}, [xn, yn, probs = std::move(probs), actions, n, a]() {
    auto& g = grad_of(xn);
    const T* gy = yn->grad.data();
    for (int r = 0; r < n; ++r)
      for (int j = 0; j < a; ++j) {
        const T onehot = (j == actions[r]) ? T(1) : T(0);
        g[static_cast<std::int64_t>(r) * a + j] +=
            gy[r] * (onehot - probs[static_cast<std::int64_t>(r) * a + j]);
      }
  });
  return y;
}

// ---------------- helpers ----------------

template <class T>
std::vector<T> softmax_row(const T* logits, int n) {
  std::vector<T> p(static_cast<std::size_t>(n));
  T mx = logits[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
  T z = T(0);
  for (int i = 0; i < n; ++i) {
    p[static_cast<std::size_t>(i)] = std::exp(logits[i] - mx);
    z += p[static_cast<std::size_t>(i)];
  }
  for (int i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] /= z;
  return p;
}

template <class T>
int argmax_row(const T* v, int n) {
  int best = 0;
  for (int i = 1; i < n; ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

#define NAV_INSTANTIATE_BASIC(T)                                               \
  template Tensor<T> relu(const Tensor<T>&);                                   \
  template Tensor<T> gelu(const Tensor<T>&);                                   \
  template Tensor<T> tanh_op(const Tensor<T>&);                                \
  template Tensor<T> sigmoid_op(const Tensor<T>&);                             \
  template Tensor<T> exp_op(const Tensor<T>&);                                 \
  template Tensor<T> square(const Tensor<T>&);                                 \
  template Tensor<T> neg(const Tensor<T>&);                                    \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                          \
  template Tensor<T> mul_scalar(const Tensor<T>&, T);                          \
  template Tensor<T> clamp_op(const Tensor<T>&, T, T);                         \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> min_elem(const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> add_broadcast(const Tensor<T>&, const Tensor<T>&);        \
  template Tensor<T> sum_all(const Tensor<T>&);                                \
  template Tensor<T> mean_all(const Tensor<T>&);                               \
  template Tensor<T> sum_lastdim(const Tensor<T>&);                            \
  template Tensor<T> reshape(const Tensor<T>&, const Shape&);                  \
  template Tensor<T> chunk_lastdim(const Tensor<T>&, int, int);                \
  template Tensor<T> concat_lastdim(const std::vector<Tensor<T>>&);            \
  template Tensor<T> gather_rows(const Tensor<T>&, const std::vector<int>&);   \
  template Tensor<T> patchify(const Tensor<T>&, int);                          \
  template Tensor<T> unpatchify(const Tensor<T>&, int, int);                   \
  template Tensor<T> tokens_to_grid(const Tensor<T>&);                         \
  template Tensor<T> grid_to_tokens(const Tensor<T>&);                         \
  template Tensor<T> gather_tokens(const Tensor<T>&, const std::vector<int>&); \
  template Tensor<T> assemble_tokens(const Tensor<T>&, const Tensor<T>&,       \
                                     const std::vector<int>&, int);            \
  template Tensor<T> masked_patch_mse(const Tensor<T>&, const Tensor<T>&,      \
                                      const std::vector<int>&, bool, T);       \
  template Tensor<T> cross_entropy(const Tensor<T>&, const std::vector<int>&); \
  template Tensor<T> logp_actions(const Tensor<T>&, const std::vector<int>&);  \
  template std::vector<T> softmax_row(const T*, int);                          \
  template int argmax_row(const T*, int);

NAV_INSTANTIATE_BASIC(float)
NAV_INSTANTIATE_BASIC(double)

}  // namespace nav
