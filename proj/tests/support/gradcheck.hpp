#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "micropatch/ops.hpp"

namespace micropatch::check {

using VarD = Var<double>;

struct GradCase {
  std::string name;
  std::vector<Shape> shapes;
  std::function<VarD(const std::vector<VarD>&)> fn;
  double tolerance = 1e-4;
  // Optional input transform, e.g. to keep values away from a kink.
  std::function<void(std::vector<TensorD>&)> prepare = {};
};

/// Largest relative error (per input, norm-wise) between backward gradients
/// and central differences of sum(out * R) with a fixed random R.
double grad_error(const GradCase& c, std::uint64_t seed);

/// One case per differentiable operator (and mode) of the tensor core.
std::vector<GradCase> all_grad_cases();

}  // namespace micropatch::check
