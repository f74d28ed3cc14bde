#include <cmath>

#include "ops_detail.hpp"

namespace micropatch {

using detail::require;

template <typename Scalar>
Var<Scalar> batch_norm(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta,
                       BatchNormBuffers<Scalar> buffers, bool training, double momentum, double eps) {
  const Shape& s = x->shape();
  require(s.size() >= 2, "batch_norm: input must be [B, C, ...]");
  const Index batch = s[0];
  const Index channels = s[1];
  const Index inner = x->value.size() / std::max<Index>(batch * channels, 1);
  require(batch * inner > 0, "batch_norm: zero-size normalization axis");
  require(gamma->value.size() == channels && beta->value.size() == channels, "batch_norm: affine size mismatch");
  require(buffers.running_mean && buffers.running_var && buffers.running_mean->size() == channels &&
              buffers.running_var->size() == channels,
          "batch_norm: running buffers missing or mis-sized");

  using Vector = typename Tensor<Scalar>::Vector;
  using Plane = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>;
  using MutablePlane = Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>;
  const Index count = batch * inner;
  auto plane = [inner](const Tensor<Scalar>& t, Index b, Index c, Index channels) {
    return Plane(t.data() + (b * channels + c) * inner, inner);
  };
  auto mutable_plane = [inner](Tensor<Scalar>& t, Index b, Index c, Index channels) {
    return MutablePlane(t.data() + (b * channels + c) * inner, inner);
  };

  Vector mu(channels), var(channels);
  if (training) {
    for (Index c = 0; c < channels; ++c) {
      Scalar total = 0;
      for (Index b = 0; b < batch; ++b) total += plane(x->value, b, c, channels).sum();
      const Scalar m = total / static_cast<Scalar>(count);
      Scalar sq = 0;
      for (Index b = 0; b < batch; ++b) sq += (plane(x->value, b, c, channels) - m).square().sum();
      mu[c] = m;
      var[c] = sq / static_cast<Scalar>(count);
    }
    const Scalar m = static_cast<Scalar>(momentum);
    const Scalar unbias = count > 1 ? static_cast<Scalar>(count) / static_cast<Scalar>(count - 1) : Scalar(1);
    buffers.running_mean->vec() = (Scalar(1) - m) * buffers.running_mean->vec() + m * mu;
    buffers.running_var->vec() = (Scalar(1) - m) * buffers.running_var->vec() + m * unbias * var;
  } else {
    mu = buffers.running_mean->vec();
    var = buffers.running_var->vec();
  }
  const Vector inv_std = (var.array() + static_cast<Scalar>(eps)).rsqrt().matrix();
  auto normalized = std::make_shared<Tensor<Scalar>>(s);
  Tensor<Scalar> out(s);
  for (Index b = 0; b < batch; ++b) {
    for (Index c = 0; c < channels; ++c) {
      auto xn = mutable_plane(*normalized, b, c, channels);
      xn = (plane(x->value, b, c, channels) - mu[c]) * inv_std[c];
      mutable_plane(out, b, c, channels) = xn * gamma->value[c] + beta->value[c];
    }
  }
  return make_result<Scalar>(std::move(out), "batch_norm", {x, gamma, beta},
                             [=](Node<Scalar>& n) {
    auto& px = n.parents[0];
    auto& pg = n.parents[1];
    auto& pb = n.parents[2];
    Vector sum_dy = Vector::Zero(channels), sum_dy_xn = Vector::Zero(channels);
    for (Index b = 0; b < batch; ++b) {
      for (Index c = 0; c < channels; ++c) {
        const auto dy = plane(n.grad, b, c, channels);
        sum_dy[c] += dy.sum();
        sum_dy_xn[c] += (dy * plane(*normalized, b, c, channels)).sum();
      }
    }
    if (pg->requires_grad) pg->ensure_grad().vec() += sum_dy_xn;
    if (pb->requires_grad) pb->ensure_grad().vec() += sum_dy;
    if (!px->requires_grad) return;
    auto& dx = px->ensure_grad();
    for (Index c = 0; c < channels; ++c) {
      const Scalar scale_c = pg->value[c] * inv_std[c];
      const Scalar mean_dy = training ? sum_dy[c] / static_cast<Scalar>(count) : Scalar(0);
      const Scalar mean_dy_xn = training ? sum_dy_xn[c] / static_cast<Scalar>(count) : Scalar(0);
      for (Index b = 0; b < batch; ++b)
        mutable_plane(dx, b, c, channels) +=
            (plane(n.grad, b, c, channels) - mean_dy - plane(*normalized, b, c, channels) * mean_dy_xn) * scale_c;
    }
  });
}

template <typename Scalar>
Var<Scalar> layer_norm(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta, double eps) {
  const Shape& s = x->shape();
  require(!s.empty() && s.back() > 0, "layer_norm: zero-size normalization axis");
  const Index features = s.back();
  require(gamma->value.size() == features && beta->value.size() == features, "layer_norm: affine size mismatch");
  const Index rows = x->value.size() / features;
  using Vector = typename Tensor<Scalar>::Vector;

  const auto in = x->value.matrix(rows, features);
  const Vector mu = in.rowwise().mean();
  auto normalized = std::make_shared<Tensor<Scalar>>(s);
  auto xn = normalized->matrix(rows, features);
  xn = in.colwise() - mu;
  auto inv_std = std::make_shared<Vector>(
      (xn.array().square().rowwise().sum() / static_cast<Scalar>(features) + static_cast<Scalar>(eps)).rsqrt());
  xn.array().colwise() *= inv_std->array();
  Tensor<Scalar> out(s);
  out.matrix(rows, features) =
      ((xn.array().rowwise() * gamma->value.vec().transpose().array()).rowwise() +
       beta->value.vec().transpose().array())
          .matrix();
  return make_result<Scalar>(std::move(out), "layer_norm", {x, gamma, beta}, [=](Node<Scalar>& n) {
    auto& px = n.parents[0];
    auto& pg = n.parents[1];
    auto& pb = n.parents[2];
    const auto dy = n.grad.matrix(rows, features);
    const auto xn = normalized->matrix(rows, features);
    if (pg->requires_grad) pg->ensure_grad().vec() += (dy.array() * xn.array()).colwise().sum().matrix().transpose();
    if (pb->requires_grad) pb->ensure_grad().vec() += dy.colwise().sum().transpose();
    if (!px->requires_grad) return;
    const RowMatrix<Scalar> dxn = (dy.array().rowwise() * pg->value.vec().transpose().array()).matrix();
    const Vector mean_dxn = dxn.rowwise().mean();
    const Vector mean_dxn_xn = (dxn.array() * xn.array()).rowwise().mean();
    px->ensure_grad().matrix(rows, features).array() +=
        ((dxn.colwise() - mean_dxn).array() - xn.array().colwise() * mean_dxn_xn.array()).colwise() *
        inv_std->array();
  });
}

#define MICROPATCH_INSTANTIATE(S)                                                                     \
  template Var<S> batch_norm<S>(const Var<S>&, const Var<S>&, const Var<S>&, BatchNormBuffers<S>, bool, \
                                double, double);                                                      \
  template Var<S> layer_norm<S>(const Var<S>&, const Var<S>&, const Var<S>&, double);

MICROPATCH_FOR_SCALARS(MICROPATCH_INSTANTIATE)
#undef MICROPATCH_INSTANTIATE

}  // namespace micropatch
