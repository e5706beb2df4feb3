#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "nav/nn.hpp"
#include "nav/tensor.hpp"

namespace nav {

template <class T>
struct AdamWConfig {
  T learning_rate = T(2.5e-4);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T epsilon = T(1e-8);
  T weight_decay = T(1e-6);
};

/// AdamW with decoupled weight decay and optional per-group learning rates.
template <class T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig<T> cfg) : cfg_(cfg) {}

  /// Adds parameters updated with the base learning rate.
  void add_params(const std::vector<std::pair<std::string, Tensor<T>>>& params) {
    add_params(params, cfg_.learning_rate);
  }

  /// Adds parameters updated with a group-specific learning rate.
  void add_params(const std::vector<std::pair<std::string, Tensor<T>>>& params,
                  T lr) {
    for (const auto& [name, t] : params) {
      Entry e;
      e.name = name;
      e.param = t;
      e.lr = lr;
      e.m.assign(static_cast<std::size_t>(t.numel()), T(0));
      e.v.assign(static_cast<std::size_t>(t.numel()), T(0));
      entries_.push_back(std::move(e));
    }
  }

  void zero_grad() {
    for (auto& e : entries_) e.param.zero_grad();
  }

  /// One update over all registered parameters. Gradients must be populated;
  /// parameters with no gradient buffer are treated as zero-gradient.
  void step() {
    ++t_;
    const T bc1 = T(1) - std::pow(cfg_.beta1, static_cast<T>(t_));
    const T bc2 = T(1) - std::pow(cfg_.beta2, static_cast<T>(t_));
    for (auto& e : entries_) {
      T* p = e.param.data();
      const auto& grad = e.param.node()->grad;
      const std::int64_t n = e.param.numel();
      for (std::int64_t i = 0; i < n; ++i) {
        const T g = grad.empty() ? T(0) : grad[static_cast<std::size_t>(i)];
        NAV_CHECK(std::isfinite(g), NumericError,
                  "non-finite gradient in parameter " + e.name);
        auto& m = e.m[static_cast<std::size_t>(i)];
        auto& v = e.v[static_cast<std::size_t>(i)];
        m = cfg_.beta1 * m + (T(1) - cfg_.beta1) * g;
        v = cfg_.beta2 * v + (T(1) - cfg_.beta2) * g * g;
        const T mhat = m / bc1;
        const T vhat = v / bc2;
        // Decoupled decay: applied to the parameter, not the gradient.
        p[i] -= e.lr * (mhat / (std::sqrt(vhat) + cfg_.epsilon) +
                        cfg_.weight_decay * p[i]);
      }
    }
  }

  std::int64_t step_count() const { return t_; }
  void set_step_count(std::int64_t t) { t_ = t; }
  const AdamWConfig<T>& config() const { return cfg_; }

  /// Moment buffers, keyed for checkpointing ("optim.m.<name>" / "optim.v.<name>").
  std::vector<std::pair<std::string, std::vector<T>*>> state() {
    std::vector<std::pair<std::string, std::vector<T>*>> out;
    for (auto& e : entries_) {
      out.emplace_back("optim.m." + e.name, &e.m);
      out.emplace_back("optim.v." + e.name, &e.v);
    }
    return out;
  }

 private:
  struct Entry {
    std::string name;
    Tensor<T> param;
    T lr = T(0);
    std::vector<T> m, v;
  };

  AdamWConfig<T> cfg_;
  std::vector<Entry> entries_;
  std::int64_t t_ = 0;
};

}  // namespace nav
