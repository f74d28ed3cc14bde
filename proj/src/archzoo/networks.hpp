#pragma once

#include <memory>

#include "layers.hpp"

namespace micropatch::zoo {

/// Instantiates the network for spec.arch, registering its tensors in reg.
template <typename Scalar>
std::unique_ptr<Network<Scalar>> make_network(Registry<Scalar>& reg, const ModelSpec& spec);

}  // namespace micropatch::zoo
