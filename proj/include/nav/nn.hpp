#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "nav/ops.hpp"
#include "nav/tensor.hpp"

namespace nav {

/// Ordered registry of named trainable tensors.
template <class T>
class ParamStore {
 public:
  /// Registers a tensor; the returned handle shares storage with the store.
  Tensor<T> add(const std::string& name, Tensor<T> t) {
    NAV_CHECK_CONFIG(index_.find(name) == index_.end(),
                     "duplicate parameter name: " + name);
    t.set_requires_grad(true);
    index_[name] = items_.size();
    items_.emplace_back(name, t);
    return t;
  }

  Tensor<T>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &items_[it->second].second;
  }
  const Tensor<T>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &items_[it->second].second;
  }

  std::vector<std::pair<std::string, Tensor<T>>>& items() { return items_; }
  const std::vector<std::pair<std::string, Tensor<T>>>& items() const {
    return items_;
  }
  std::size_t size() const { return items_.size(); }

  std::int64_t param_count() const {
    std::int64_t n = 0;
    for (const auto& [_, t] : items_) n += t.numel();
    return n;
  }

  void zero_grad() {
    for (auto& [_, t] : items_) t.zero_grad();
  }

  T grad_norm() const {
    T sq = T(0);
    for (const auto& [_, t] : items_)
      for (T g : t.node()->grad) sq += g * g;
    return std::sqrt(sq);
  }

  /// Scales all gradients so the global norm is at most max_norm.
  /// Returns the pre-clip norm.
  T clip_grad_norm(T max_norm) {
    const T norm = grad_norm();
    if (norm > max_norm && norm > T(0)) {
      const T s = max_norm / norm;
      for (auto& [_, t] : items_)
        for (T& g : t.node()->grad) g *= s;
    }
    return norm;
  }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

constexpr double kInitStd = 0.02;  // truncated-normal std for weights

template <class T>
struct Linear {
  Tensor<T> w, b;

  Linear() = default;
  Linear(ParamStore<T>& ps, const std::string& prefix, int in, int out,
         Rng& rng, bool bias = true) {
    w = ps.add(prefix + ".w",
               Tensor<T>::trunc_normal({out, in}, rng, T(kInitStd)));
    if (bias) b = ps.add(prefix + ".b", Tensor<T>::zeros({out}));
  }

  Tensor<T> forward(const Tensor<T>& x) const { return linear(x, w, b); }
};

template <class T>
struct Conv2dP {
  Tensor<T> w, b;
  int padding = 1;

  Conv2dP() = default;
  Conv2dP(ParamStore<T>& ps, const std::string& prefix, int in_ch, int out_ch,
          int kernel, Rng& rng, bool bias = true)
      : padding((kernel - 1) / 2) {
    w = ps.add(prefix + ".w", Tensor<T>::trunc_normal(
                                  {out_ch, in_ch, kernel, kernel}, rng,
                                  T(kInitStd)));
    if (bias) b = ps.add(prefix + ".b", Tensor<T>::zeros({out_ch}));
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    return conv2d(x, w, b, padding);
  }
};

template <class T>
struct LayerNormP {
  Tensor<T> gamma, beta;
  T eps = T(1e-6);

  LayerNormP() = default;
  LayerNormP(ParamStore<T>& ps, const std::string& prefix, int dim) {
    gamma = ps.add(prefix + ".gamma", Tensor<T>::full({dim}, T(1)));
    beta = ps.add(prefix + ".beta", Tensor<T>::zeros({dim}));
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    return layer_norm(x, gamma, beta, eps);
  }
};

template <class T>
struct GroupNormP {
  Tensor<T> gamma, beta;
  int num_groups = 1;
  T eps = T(1e-5);

  GroupNormP() = default;
  GroupNormP(ParamStore<T>& ps, const std::string& prefix, int groups,
             int channels)
      : num_groups(groups) {
    gamma = ps.add(prefix + ".gamma", Tensor<T>::full({channels}, T(1)));
    beta = ps.add(prefix + ".beta", Tensor<T>::zeros({channels}));
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    return group_norm(x, num_groups, gamma, beta, eps);
  }
};

template <class T>
struct Embedding {
  Tensor<T> table;

  Embedding() = default;
  Embedding(ParamStore<T>& ps, const std::string& prefix, int count, int dim,
            Rng& rng) {
    table = ps.add(prefix + ".table",
                   Tensor<T>::trunc_normal({count, dim}, rng, T(kInitStd)));
  }

  Tensor<T> forward(const std::vector<int>& idx) const {
    return gather_rows(table, idx);
  }
};

/// Pre-norm transformer block: x + MHA(LN(x)), then x + MLP(LN(x)).
template <class T>
struct TransformerBlock {
  LayerNormP<T> norm1, norm2;
  Linear<T> qkv, proj, fc1, fc2;
  int num_heads = 1;

  TransformerBlock() = default;
  TransformerBlock(ParamStore<T>& ps, const std::string& prefix, int dim,
                   int heads, Rng& rng, int mlp_ratio = 4)
      : norm1(ps, prefix + ".norm1", dim),
        norm2(ps, prefix + ".norm2", dim),
        qkv(ps, prefix + ".qkv", dim, 3 * dim, rng),
        proj(ps, prefix + ".proj", dim, dim, rng),
        fc1(ps, prefix + ".fc1", dim, mlp_ratio * dim, rng),
        fc2(ps, prefix + ".fc2", mlp_ratio * dim, dim, rng),
        num_heads(heads) {}

  Tensor<T> forward(const Tensor<T>& x) const {
    Tensor<T> a = multihead_attention(qkv.forward(norm1.forward(x)), num_heads);
    Tensor<T> h = add(x, proj.forward(a));
    Tensor<T> m = fc2.forward(gelu(fc1.forward(norm2.forward(h))));
    return add(h, m);
  }
};

template <class T>
struct LstmCellP {
  Tensor<T> w_ih, w_hh, b;
  int hidden = 0;

  LstmCellP() = default;
  LstmCellP(ParamStore<T>& ps, const std::string& prefix, int in, int hid,
            Rng& rng)
      : hidden(hid) {
    w_ih = ps.add(prefix + ".w_ih",
                  Tensor<T>::trunc_normal({4 * hid, in}, rng, T(kInitStd)));
    w_hh = ps.add(prefix + ".w_hh",
                  Tensor<T>::trunc_normal({4 * hid, hid}, rng, T(kInitStd)));
    b = ps.add(prefix + ".b", Tensor<T>::zeros({4 * hid}));
  }

  /// hc packs (h, c) as [N, 2*hidden].
  Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& hc) const {
    return lstm_cell(x, hc, w_ih, w_hh, b);
  }

  Tensor<T> initial_state(int batch) const {
    return Tensor<T>::zeros({batch, 2 * hidden});
  }
};

}  // namespace nav
