#pragma once

#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "micropatch/tensor.hpp"

namespace micropatch {

template <typename Scalar>
class Node;

/// Handle to a node of the reverse-mode graph. Parameters are long-lived
/// leaves; every op result holds strong references to its parents only when
/// at least one of them requires a gradient, so inference builds no graph.
template <typename Scalar>
using Var = std::shared_ptr<Node<Scalar>>;

template <typename Scalar>
class Node {
 public:
  using BackwardFn = std::function<void(Node&)>;

  Node(Tensor<Scalar> value, bool requires_grad, std::string_view op = "leaf")
      : value(std::move(value)), op(op), requires_grad(requires_grad) {}

  Tensor<Scalar> value;
  Tensor<Scalar> grad;  // allocated on first use
  std::string_view op;
  std::vector<Var<Scalar>> parents;
  BackwardFn backward_fn;
  bool requires_grad = false;

  const Shape& shape() const { return value.shape(); }

  bool has_grad() const { return !grad.empty(); }

  Tensor<Scalar>& ensure_grad() {
    if (grad.empty()) grad = Tensor<Scalar>(value.shape());
    return grad;
  }

  void zero_grad() {
    if (!grad.empty()) grad.set_zero();
  }
};

template <typename Scalar>
Var<Scalar> leaf(Tensor<Scalar> value, bool requires_grad = false) {
  return std::make_shared<Node<Scalar>>(std::move(value), requires_grad);
}

template <typename Scalar>
Var<Scalar> parameter(Tensor<Scalar> value) {
  return leaf(std::move(value), true);
}

/// Name of the innermost layer currently executing a forward pass; attached
/// to numeric errors so a non-finite activation can be traced to its layer.
class LayerScope {
 public:
  explicit LayerScope(std::string name);
  ~LayerScope();
  LayerScope(const LayerScope&) = delete;
  LayerScope& operator=(const LayerScope&) = delete;

  static std::string current();

 private:
  std::string previous_;
};

/// While alive, op results on this thread never record a graph, even when
/// their inputs require gradients. Used for inference.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

  static bool active();

 private:
  bool previous_;
};

/// Builds an op result. Throws NumericError when the forward value holds a
/// NaN or Inf. The backward closure and parent links are kept only when a
/// parent requires a gradient.
template <typename Scalar>
Var<Scalar> make_result(Tensor<Scalar> value, std::string_view op, std::vector<Var<Scalar>> parents,
                        typename Node<Scalar>::BackwardFn backward);

/// Seeds d(root)/d(root) = 1 (root must be a scalar unless a seed is given)
/// and propagates gradients in reverse topological order. Each node is
/// visited once; contributions from multiple consumers are summed.
template <typename Scalar>
void backward(const Var<Scalar>& root);

template <typename Scalar>
void backward(const Var<Scalar>& root, const Tensor<Scalar>& seed);

/// Nodes reachable from root in topological order (parents before children).
template <typename Scalar>
std::vector<Node<Scalar>*> topological_order(const Var<Scalar>& root);

}  // namespace micropatch
