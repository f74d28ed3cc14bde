#pragma once

#include "micropatch/ops.hpp"

namespace micropatch::detail {

template <typename Scalar>
inline bool wants_grad(const Var<Scalar>& v) {
  return v && v->requires_grad;
}

template <typename Scalar>
inline std::vector<Var<Scalar>> present(std::initializer_list<Var<Scalar>> vars) {
  std::vector<Var<Scalar>> out;
  for (const auto& v : vars)
    if (v) out.push_back(v);
  return out;
}

inline void require(bool condition, const std::string& message) {
  if (!condition) throw DimensionError(message);
}

}  // namespace micropatch::detail

#define MICROPATCH_FOR_SCALARS(MACRO) \
  MACRO(float)                        \
  MACRO(double)
