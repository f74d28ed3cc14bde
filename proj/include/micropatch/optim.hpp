#pragma once

#include <cstdint>
#include <vector>

#include "micropatch/graph.hpp"

namespace micropatch {

struct AdamOptions {
  double learning_rate = 1e-3;
  double weight_decay = 0.0;  // decoupled: p <- p - lr * wd * p before the moment update
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename Scalar>
struct AdamMoments {
  Tensor<Scalar> m;
  Tensor<Scalar> v;
};

/// One Adam update of a single tensor at (1-based) step t, with bias correction.
template <typename Scalar>
void adam_update(Tensor<Scalar>& param, const Tensor<Scalar>& grad, AdamMoments<Scalar>& moments,
                 std::int64_t step, const AdamOptions& options);

/// Adam over a fixed parameter list. Parameters whose requires_grad flag is
/// cleared (frozen) or that received no gradient are left untouched.
template <typename Scalar>
class Adam {
 public:
  Adam(std::vector<Var<Scalar>> params, AdamOptions options);

  void step();
  void zero_grad();

  std::int64_t steps() const { return step_; }
  const AdamOptions& options() const { return options_; }
  const std::vector<AdamMoments<Scalar>>& moments() const { return moments_; }

 private:
  std::vector<Var<Scalar>> params_;
  std::vector<AdamMoments<Scalar>> moments_;
  AdamOptions options_;
  std::int64_t step_ = 0;
};

}  // namespace micropatch
