#pragma once

// Parameter registry and the layer building blocks shared by the
// architecture builders. Internal to the library.

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "micropatch/archzoo.hpp"

namespace micropatch::zoo {

enum class Init { kaiming_uniform, xavier_uniform, trunc_normal };

inline constexpr double kTransformerInitStd = 0.02;

template <typename Scalar>
class Registry {
 public:
  explicit Registry(std::uint64_t seed) : rng_(seed) {}

  Var<Scalar> param(const std::string& name, Tensor<Scalar> init, bool head = false) {
    return add(name, std::move(init), EntryKind::parameter, head);
  }

  Var<Scalar> buffer(const std::string& name, Tensor<Scalar> init) {
    return add(name, std::move(init), EntryKind::buffer, false);
  }

  /// Weight tensor of the given shape; fan_in/fan_out drive the uniform schemes.
  Tensor<Scalar> weight(const Shape& shape, Index fan_in, Index fan_out, Init init) {
    Tensor<Scalar> t(shape);
    double bound = 0.0;
    switch (init) {
      case Init::kaiming_uniform:
        bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        break;
      case Init::xavier_uniform:
        bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        break;
      case Init::trunc_normal:
        for (auto& v : t.values()) v = static_cast<Scalar>(rng_.truncated_normal(kTransformerInitStd));
        return t;
    }
    for (auto& v : t.values()) v = static_cast<Scalar>(rng_.uniform(-bound, bound));
    return t;
  }

  std::vector<ModelEntry<Scalar>> take() { return std::move(entries_); }

 private:
  Var<Scalar> add(const std::string& name, Tensor<Scalar> init, EntryKind kind, bool head) {
    if (!names_.insert(name).second) throw ConfigurationError("duplicate parameter name '" + name + "'");
    auto var = leaf(std::move(init), kind == EntryKind::parameter);
    entries_.push_back({name, var, kind, head});
    return var;
  }

  Rng rng_;
  std::vector<ModelEntry<Scalar>> entries_;
  std::set<std::string> names_;
};

template <typename Scalar>
struct Linear {
  std::string name;
  Var<Scalar> weight;  // [in, out]
  Var<Scalar> bias;

  Var<Scalar> operator()(const Var<Scalar>& x) const {
    LayerScope scope(name);
    return linear(x, weight, bias);
  }
};

template <typename Scalar>
Linear<Scalar> make_linear(Registry<Scalar>& reg, const std::string& name, Index in, Index out, Init init,
                           bool head = false) {
  Linear<Scalar> l{name, nullptr, nullptr};
  l.weight = reg.param(name + ".weight", reg.weight({in, out}, in, out, init), head);
  l.bias = reg.param(name + ".bias", Tensor<Scalar>(Shape{out}), head);
  return l;
}

template <typename Scalar>
struct Conv {
  std::string name;
  Var<Scalar> kernel;  // [O, C, k, k] or [C, 1, k, k] when depthwise
  Var<Scalar> bias;    // may be null
  Conv2dOptions options;
  bool depthwise = false;

  Var<Scalar> operator()(const Var<Scalar>& x) const {
    LayerScope scope(name);
    return depthwise ? depthwise_conv2d(x, kernel, bias, options) : conv2d(x, kernel, bias, options);
  }
};

struct ConvShape {
  Index in = 0, out = 0, kernel = 3, stride = 1, padding = 0;
  bool bias = true;
  bool depthwise = false;
  bool floor_output = false;
};

template <typename Scalar>
Conv<Scalar> make_conv(Registry<Scalar>& reg, const std::string& name, ConvShape s, Init init) {
  Conv<Scalar> c{name, nullptr, nullptr, {s.stride, s.padding, s.floor_output}, s.depthwise};
  const Index per_filter = (s.depthwise ? 1 : s.in) * s.kernel * s.kernel;
  const Shape shape = s.depthwise ? Shape{s.in, 1, s.kernel, s.kernel} : Shape{s.out, s.in, s.kernel, s.kernel};
  const Index fan_out = (s.depthwise ? 1 : s.out) * s.kernel * s.kernel;
  c.kernel = reg.param(name + ".weight", reg.weight(shape, per_filter, fan_out, init));
  if (s.bias) c.bias = reg.param(name + ".bias", Tensor<Scalar>(Shape{s.depthwise ? s.in : s.out}));
  return c;
}

template <typename Scalar>
struct BatchNorm {
  std::string name;
  Var<Scalar> gamma, beta, running_mean, running_var;

  Var<Scalar> operator()(const Var<Scalar>& x, bool training) const {
    LayerScope scope(name);
    return batch_norm(x, gamma, beta, {&running_mean->value, &running_var->value}, training);
  }
};

template <typename Scalar>
BatchNorm<Scalar> make_batch_norm(Registry<Scalar>& reg, const std::string& name, Index channels) {
  BatchNorm<Scalar> bn{name, nullptr, nullptr, nullptr, nullptr};
  bn.gamma = reg.param(name + ".weight", Tensor<Scalar>(Shape{channels}, Scalar(1)));
  bn.beta = reg.param(name + ".bias", Tensor<Scalar>(Shape{channels}));
  bn.running_mean = reg.buffer(name + ".running_mean", Tensor<Scalar>(Shape{channels}));
  bn.running_var = reg.buffer(name + ".running_var", Tensor<Scalar>(Shape{channels}, Scalar(1)));
  return bn;
}

template <typename Scalar>
struct LayerNorm {
  std::string name;
  Var<Scalar> gamma, beta;
  double eps = kTransformerLayerNormEps;

  Var<Scalar> operator()(const Var<Scalar>& x) const {
    LayerScope scope(name);
    return layer_norm(x, gamma, beta, eps);
  }
};

template <typename Scalar>
LayerNorm<Scalar> make_layer_norm(Registry<Scalar>& reg, const std::string& name, Index features, double eps,
                                  bool head = false) {
  LayerNorm<Scalar> ln{name, nullptr, nullptr, eps};
  ln.gamma = reg.param(name + ".weight", Tensor<Scalar>(Shape{features}, Scalar(1)), head);
  ln.beta = reg.param(name + ".bias", Tensor<Scalar>(Shape{features}), head);
  return ln;
}

/// Squeeze-and-excitation: global pool, bottleneck FC, activation, dropout,
/// expansion FC, sigmoid gate, channel-wise rescale.
template <typename Scalar>
struct SqueezeExcite {
  std::string name;
  Linear<Scalar> reduce, expand;
  Activation activation = Activation::relu;
  double dropout_rate = 0.0;

  Var<Scalar> operator()(const Var<Scalar>& x, ForwardContext<Scalar>& ctx) const {
    LayerScope scope(name);
    auto h = activate(reduce(global_avg_pool(x)), activation);
    h = dropout(h, dropout_rate, ctx.training, *ctx.rng);
    auto gate = sigmoid(expand(h));
    if (ctx.check_gates) {
      const auto& g = gate->value.vec();
      if (!(g.minCoeff() > Scalar(0) && g.maxCoeff() < Scalar(1)))
        throw NumericError("SE gate outside (0, 1) in layer '" + LayerScope::current() + "'");
    }
    return scale_channels(x, gate);
  }
};

template <typename Scalar>
SqueezeExcite<Scalar> make_se(Registry<Scalar>& reg, const std::string& name, Index channels, Index squeezed,
                              Activation activation, double dropout_rate) {
  const Init first = Init::kaiming_uniform;
  return {name, make_linear(reg, name + ".reduce", channels, squeezed, first),
          make_linear(reg, name + ".expand", squeezed, channels, Init::xavier_uniform), activation, dropout_rate};
}

}  // namespace micropatch::zoo
