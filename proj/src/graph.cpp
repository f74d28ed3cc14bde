#include "micropatch/graph.hpp"
#include "micropatch/ops.hpp"

#include <unordered_set>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace micropatch {

namespace {
thread_local std::string g_layer;

#if defined(__GLIBC__)
// Activations are large and short-lived; serving them from the heap instead of
// fresh mmap regions avoids a page-fault storm on every forward pass.
[[maybe_unused]] const bool g_allocator_tuned = [] {
  mallopt(M_MMAP_MAX, 0);  // never hand activations to mmap
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return true;
}();
#endif
}  // namespace

namespace {
thread_local MacCounter* g_mac_counter = nullptr;
thread_local bool g_no_grad = false;
}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_no_grad) { g_no_grad = true; }
NoGradGuard::~NoGradGuard() { g_no_grad = previous_; }
bool NoGradGuard::active() { return g_no_grad; }

MacCounter::MacCounter() : previous_(g_mac_counter) { g_mac_counter = this; }
MacCounter::~MacCounter() { g_mac_counter = previous_; }
void MacCounter::add(std::int64_t macs) {
  if (g_mac_counter) g_mac_counter->total_ += macs;
}

LayerScope::LayerScope(std::string name) : previous_(g_layer) {
  g_layer = previous_.empty() ? std::move(name) : previous_ + "." + name;
}

LayerScope::~LayerScope() { g_layer = std::move(previous_); }

std::string LayerScope::current() { return g_layer; }

template <typename Scalar>
Var<Scalar> make_result(Tensor<Scalar> value, std::string_view op, std::vector<Var<Scalar>> parents,
                        typename Node<Scalar>::BackwardFn backward) {
  if (!value.all_finite()) {
    const std::string layer = LayerScope::current();
    throw NumericError("non-finite value produced by op '" + std::string(op) + "'" +
                       (layer.empty() ? std::string() : " in layer '" + layer + "'"));
  }
  bool needs_grad = false;
  if (!g_no_grad)
    for (const auto& p : parents) needs_grad = needs_grad || p->requires_grad;
  auto node = std::make_shared<Node<Scalar>>(std::move(value), needs_grad, op);
  if (needs_grad) {
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward);
  }
  return node;
}

template <typename Scalar>
std::vector<Node<Scalar>*> topological_order(const Var<Scalar>& root) {
  std::vector<Node<Scalar>*> order;
  std::unordered_set<Node<Scalar>*> visited;
  // Iterative post-order DFS; graphs for deep models exceed comfortable recursion depth.
  std::vector<std::pair<Node<Scalar>*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<Scalar>* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

template <typename Scalar>
void backward(const Var<Scalar>& root, const Tensor<Scalar>& seed) {
  if (!root->requires_grad) return;
  if (seed.shape() != root->shape()) {
    throw DimensionError("backward seed shape " + shape_string(seed.shape()) + " != " +
                         shape_string(root->shape()));
  }
  auto order = topological_order(root);
  root->ensure_grad().vec() += seed.vec();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<Scalar>* node = *it;
    if (!node->backward_fn) continue;  // leaf
    if (node->has_grad()) node->backward_fn(*node);
    // Interior gradients and closures are dead once propagated.
    node->grad = Tensor<Scalar>();
    node->backward_fn = nullptr;
  }
}

template <typename Scalar>
void backward(const Var<Scalar>& root) {
  if (root->value.size() != 1) throw DimensionError("backward() without a seed needs a scalar root");
  backward(root, Tensor<Scalar>(root->shape(), Scalar(1)));
}

#define MICROPATCH_INSTANTIATE(S)                                                                  \
  template Var<S> make_result<S>(Tensor<S>, std::string_view, std::vector<Var<S>>,                 \
                                 typename Node<S>::BackwardFn);                                    \
  template std::vector<Node<S>*> topological_order<S>(const Var<S>&);                              \
  template void backward<S>(const Var<S>&);                                                        \
  template void backward<S>(const Var<S>&, const Tensor<S>&);

MICROPATCH_INSTANTIATE(float)
MICROPATCH_INSTANTIATE(double)
#undef MICROPATCH_INSTANTIATE

}  // namespace micropatch
