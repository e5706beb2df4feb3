#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "nav/common.hpp"

namespace nav {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s);

/// Thread-local autodiff recording switch.
bool grad_enabled();
void set_grad_enabled(bool on);

struct NoGradGuard {
  NoGradGuard() : prev_(grad_enabled()) { set_grad_enabled(false); }
  ~NoGradGuard() { set_grad_enabled(prev_); }

 private:
  bool prev_;
};

template <class T>
struct TensorNode {
  Shape shape;
  std::shared_ptr<std::vector<T>> data;  // shared so reshapes alias storage
  std::vector<T> grad;                   // allocated on first use
  bool requires_grad = false;
  std::uint64_t id = 0;  // creation order; a valid topological order
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void()> backward_fn;

  std::int64_t numel() const { return shape_numel(shape); }

  std::vector<T>& ensure_grad() {
    if (grad.size() != static_cast<std::size_t>(numel()))
      grad.assign(static_cast<std::size_t>(numel()), T(0));
    return grad;
  }
};

std::uint64_t next_node_id();

/// Value-semantics handle to a tensor node. Copies share storage.
template <class T>
class Tensor {
 public:
  using Node = TensorNode<T>;

  Tensor() = default;

  static Tensor zeros(const Shape& shape) { return full(shape, T(0)); }

  static Tensor full(const Shape& shape, T value) {
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = shape;
    t.node_->data = std::make_shared<std::vector<T>>(
        static_cast<std::size_t>(shape_numel(shape)), value);
    t.node_->id = next_node_id();
    return t;
  }

  static Tensor from(const Shape& shape, std::vector<T> values) {
    NAV_CHECK_SHAPE(
        static_cast<std::int64_t>(values.size()) == shape_numel(shape),
        "tensor data size does not match shape " + shape_str(shape));
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = shape;
    t.node_->data = std::make_shared<std::vector<T>>(std::move(values));
    t.node_->id = next_node_id();
    return t;
  }

  static Tensor scalar(T value) { return from({1}, {value}); }

  static Tensor randn(const Shape& shape, Rng& rng, T stddev = T(1)) {
    Tensor t = zeros(shape);
    T* d = t.data();
    for (std::int64_t i = 0; i < t.numel(); ++i)
      d[i] = static_cast<T>(rng.normal()) * stddev;
    return t;
  }

  static Tensor uniform(const Shape& shape, Rng& rng, T lo, T hi) {
    Tensor t = zeros(shape);
    T* d = t.data();
    for (std::int64_t i = 0; i < t.numel(); ++i)
      d[i] = static_cast<T>(rng.uniform(lo, hi));
    return t;
  }

  static Tensor trunc_normal(const Shape& shape, Rng& rng, T stddev) {
    Tensor t = zeros(shape);
    T* d = t.data();
    for (std::int64_t i = 0; i < t.numel(); ++i)
      d[i] = static_cast<T>(rng.trunc_normal(stddev));
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  std::int64_t numel() const { return node_->numel(); }

  T* data() { return node_->data->data(); }
  const T* data() const { return node_->data->data(); }
  std::vector<T>& vec() { return *node_->data; }
  const std::vector<T>& vec() const { return *node_->data; }

  T item() const {
    NAV_CHECK_SHAPE(numel() == 1, "item() requires a scalar tensor");
    return (*node_->data)[0];
  }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    node_->requires_grad = on;
    return *this;
  }

  T* grad_data() { return node_->ensure_grad().data(); }
  const std::vector<T>& grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() {
    if (!node_->grad.empty())
      std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  /// Shares storage; drops graph edges and gradient tracking.
  Tensor detach() const {
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = node_->shape;
    t.node_->data = node_->data;
    t.node_->id = next_node_id();
    return t;
  }

  Tensor clone() const {
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = node_->shape;
    t.node_->data = std::make_shared<std::vector<T>>(*node_->data);
    t.node_->id = next_node_id();
    return t;
  }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> t = Tensor<U>::zeros(shape());
    const T* s = data();
    U* d = t.data();
    for (std::int64_t i = 0; i < numel(); ++i) d[i] = static_cast<U>(s[i]);
    return t;
  }

  /// Reverse-mode sweep from a scalar root. Gradients of reachable nodes
  /// accumulate; interior nodes release grad and tape state as consumed.
  void backward();

  std::shared_ptr<Node> node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Marks `out` as produced from `parents` by an op whose backward is `fn`.
/// No-op (and `fn` discarded) when grad recording is off or no parent
/// requires grad.
template <class T>
void attach_op(Tensor<T>& out,
               std::vector<std::shared_ptr<TensorNode<T>>> parents,
               std::function<void()> fn) {
  if (!grad_enabled()) return;
  bool any = false;
  for (const auto& p : parents)
    if (p->requires_grad) any = true;
  if (!any) return;
  auto n = out.node();
  n->requires_grad = true;
  n->parents = std::move(parents);
  n->backward_fn = std::move(fn);
}

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace nav
