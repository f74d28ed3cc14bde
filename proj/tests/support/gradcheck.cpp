#include "gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace micropatch::check {

namespace {

double weighted_sum(const GradCase& c, const std::vector<TensorD>& values, const TensorD& weights) {
  std::vector<VarD> vars;
  for (const auto& v : values) vars.push_back(leaf(v));
  NoGradGuard guard;
  const auto out = c.fn(vars);
  return out->value.vec().dot(weights.vec());
}

void nudge_from_zero(std::vector<TensorD>& xs) {
  for (auto& t : xs)
    for (auto& v : t.values())
      if (std::abs(v) < 0.05) v = v < 0 ? v - 0.05 : v + 0.05;
}

VarD conv_case(const std::vector<VarD>& in, Conv2dOptions o) { return conv2d(in[0], in[1], in[2], o); }

}  // namespace

double grad_error(const GradCase& c, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<TensorD> values;
  for (const auto& s : c.shapes) {
    TensorD t(s);
    for (auto& v : t.values()) v = rng.normal();
    values.push_back(std::move(t));
  }
  if (c.prepare) c.prepare(values);

  std::vector<VarD> vars;
  for (const auto& v : values) vars.push_back(parameter(v));
  const auto out = c.fn(vars);
  TensorD weights(out->value.shape());
  for (auto& v : weights.values()) v = rng.normal();
  const auto loss = sum(mul(out, leaf(weights)));
  backward(loss);

  constexpr double h = 1e-6;
  double worst = 0.0;
  for (std::size_t k = 0; k < values.size(); ++k) {
    TensorD numeric(values[k].shape());
    for (Index i = 0; i < values[k].size(); ++i) {
      auto probe = values;
      probe[k][i] += h;
      const double up = weighted_sum(c, probe, weights);
      probe[k][i] -= 2 * h;
      const double down = weighted_sum(c, probe, weights);
      numeric[i] = (up - down) / (2 * h);
    }
    const TensorD analytic = vars[k]->has_grad() ? vars[k]->grad : TensorD(values[k].shape());
    const double diff = (analytic.vec() - numeric.vec()).norm();
    const double scale = std::max({analytic.vec().norm(), numeric.vec().norm(), 1e-12});
    worst = std::max(worst, diff / scale);
  }
  return worst;
}

std::vector<GradCase> all_grad_cases() {
  std::vector<GradCase> cases;
  auto add_case = [&](std::string name, std::vector<Shape> shapes, std::function<VarD(const std::vector<VarD>&)> fn,
                      double tol = 1e-4, std::function<void(std::vector<TensorD>&)> prep = {}) {
    cases.push_back({std::move(name), std::move(shapes), std::move(fn), tol, std::move(prep)});
  };

  add_case("linear", {{2, 3}, {3, 2}, {2}}, [](const auto& in) { return linear(in[0], in[1], in[2]); });
  add_case("linear_3d", {{2, 4, 3}, {3, 5}, {5}}, [](const auto& in) { return linear(in[0], in[1], in[2]); });
  add_case("bmm", {{2, 3, 4}, {2, 4, 5}}, [](const auto& in) { return bmm(in[0], in[1]); });
  add_case("bmm_transposed", {{2, 3, 4}, {2, 5, 4}}, [](const auto& in) { return bmm(in[0], in[1], true); });

  add_case("conv2d", {{2, 3, 8, 8}, {4, 3, 3, 3}, {4}},
           [](const auto& in) { return conv_case(in, {.stride = 1, .padding = 1}); });
  add_case("conv2d_stride2", {{2, 3, 7, 7}, {4, 3, 3, 3}, {4}},
           [](const auto& in) { return conv_case(in, {.stride = 2, .padding = 1}); });
  add_case("conv2d_1x1_floor", {{1, 3, 5, 5}, {2, 3, 1, 1}, {2}},
           [](const auto& in) { return conv_case(in, {.stride = 2, .padding = 0, .floor_output = true}); });
  add_case("conv2d_patch", {{1, 3, 8, 8}, {5, 3, 4, 4}, {5}},
           [](const auto& in) { return conv_case(in, {.stride = 4}); });
  add_case("depthwise_conv2d", {{2, 3, 6, 6}, {3, 1, 5, 5}, {3}},
           [](const auto& in) { return depthwise_conv2d(in[0], in[1], in[2], {.stride = 1, .padding = 2}); });
  add_case("depthwise_conv2d_stride2", {{1, 4, 7, 7}, {4, 1, 3, 3}, {4}},
           [](const auto& in) { return depthwise_conv2d(in[0], in[1], in[2], {.stride = 2, .padding = 1}); });

  add_case("max_pool", {{2, 3, 4, 4}}, [](const auto& in) { return pool2d(in[0], PoolKind::max); });
  add_case("avg_pool", {{2, 3, 4, 4}}, [](const auto& in) { return pool2d(in[0], PoolKind::avg); });
  add_case("global_avg_pool", {{2, 3, 3, 3}}, [](const auto& in) { return global_avg_pool(in[0]); });

  add_case("relu", {{3, 5}}, [](const auto& in) { return relu(in[0]); }, 1e-4, nudge_from_zero);
  add_case("tanh", {{3, 5}}, [](const auto& in) { return micropatch::tanh(in[0]); });
  add_case("gelu", {{3, 5}}, [](const auto& in) { return gelu(in[0]); });
  add_case("silu", {{3, 5}}, [](const auto& in) { return silu(in[0]); });
  add_case("sigmoid", {{3, 5}}, [](const auto& in) { return sigmoid(in[0]); });
  add_case("softmax", {{3, 5}}, [](const auto& in) { return softmax(in[0]); });

  add_case("batch_norm_train", {{4, 3, 2, 2}, {3}, {3}}, [](const auto& in) {
    TensorD rm(Shape{3}), rv(Shape{3}, 1.0);
    return batch_norm(in[0], in[1], in[2], {&rm, &rv}, true);
  });
  add_case("batch_norm_inference", {{4, 3, 2, 2}, {3}, {3}}, [](const auto& in) {
    TensorD rm(Shape{3}, 0.2), rv(Shape{3}, 1.5);
    return batch_norm(in[0], in[1], in[2], {&rm, &rv}, false);
  });
  add_case("batch_norm_2d", {{6, 4}, {4}, {4}}, [](const auto& in) {
    TensorD rm(Shape{4}), rv(Shape{4}, 1.0);
    return batch_norm(in[0], in[1], in[2], {&rm, &rv}, true);
  });
  add_case("layer_norm", {{2, 3, 6}, {6}, {6}},
           [](const auto& in) { return layer_norm(in[0], in[1], in[2], kTransformerLayerNormEps); });

  add_case("attention", {{1, 4, 8}, {8, 24}, {24}, {8, 8}, {8}}, [](const auto& in) {
    return multi_head_attention(in[0], 2, AttentionWeights<double>{in[1], in[2], in[3], in[4]});
  }, 1e-3);

  add_case("dropout", {{4, 6}}, [](const auto& in) {
    Rng rng(11);
    return dropout(in[0], 0.3, true, rng);
  });
  add_case("drop_path", {{4, 2, 3}}, [](const auto& in) {
    Rng rng(5);
    return drop_path(in[0], 0.4, true, rng);
  });
  add_case("cross_entropy", {{3, 4}}, [](const auto& in) {
    static const std::vector<int> labels = {0, 2, 1};
    return cross_entropy(in[0], std::span<const int>(labels));
  });

  add_case("reshape", {{2, 6}}, [](const auto& in) { return reshape(in[0], Shape{3, 4}); });
  add_case("flatten", {{2, 2, 3}}, [](const auto& in) { return flatten(in[0]); });
  add_case("permute", {{2, 3, 4}}, [](const auto& in) { return permute(in[0], {2, 0, 1}); });
  add_case("concat", {{2, 3}, {2, 2}}, [](const auto& in) { return concat<double>({in[0], in[1]}, 1); });
  add_case("narrow", {{2, 5, 3}}, [](const auto& in) { return narrow(in[0], 1, 1, 3); });
  add_case("expand_batch", {{1, 2, 3}}, [](const auto& in) { return expand_batch(in[0], 3); });
  add_case("add", {{2, 3}, {2, 3}}, [](const auto& in) { return add(in[0], in[1]); });
  add_case("mul", {{2, 3}, {2, 3}}, [](const auto& in) { return mul(in[0], in[1]); });
  add_case("scale", {{2, 3}}, [](const auto& in) { return scale(in[0], 2.5); });
  add_case("add_broadcast", {{3, 2, 4}, {2, 4}}, [](const auto& in) { return add_broadcast(in[0], in[1]); });
  add_case("scale_channels", {{2, 3, 2, 2}, {2, 3}}, [](const auto& in) { return scale_channels(in[0], in[1]); });
  add_case("sum", {{2, 3}}, [](const auto& in) { return sum(in[0]); });
  add_case("mean", {{2, 3}}, [](const auto& in) { return mean(in[0]); });
  add_case("shared_input", {{2, 3}}, [](const auto& in) { return add(mul(in[0], in[0]), in[0]); });
  return cases;
}

}  // namespace micropatch::check
