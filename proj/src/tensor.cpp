#include "nav/tensor.hpp"

#include <algorithm>
#include <unordered_set>

namespace nav {

namespace {
thread_local bool g_grad_enabled = true;
std::atomic<std::uint64_t> g_node_counter{1};
}  // namespace

bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool on) { g_grad_enabled = on; }
std::uint64_t next_node_id() {
  return g_node_counter.fetch_add(1, std::memory_order_relaxed);
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

template <class T>
void Tensor<T>::backward() {
  NAV_CHECK_SHAPE(numel() == 1, "backward() requires a scalar loss");
  NAV_CHECK(node_->requires_grad, NumericError,
            "backward() on a tensor with no graph");

  // Collect the reachable recorded subgraph.
  std::vector<std::shared_ptr<Node>> nodes;
  std::unordered_set<Node*> seen;
  std::vector<std::shared_ptr<Node>> stack{node_};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto n = stack.back();
    stack.pop_back();
    nodes.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p);
    }
  }
  // Creation order is a topological order for a dynamic tape.
  std::sort(nodes.begin(), nodes.end(),
            [](const auto& a, const auto& b) { return a->id > b->id; });

  node_->ensure_grad()[0] = T(1);
  for (auto& n : nodes) {
    if (n->backward_fn) {
      if (!n->grad.empty()) n->backward_fn();
      // Interior nodes are finished: free tape state so peak memory tracks the
      // backward frontier instead of the whole graph.
      n->backward_fn = nullptr;
      n->parents.clear();
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
  }
}

template void Tensor<float>::backward();
template void Tensor<double>::backward();

}  // namespace nav
