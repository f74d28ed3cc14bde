#include "micropatch/optim.hpp"

#include <cmath>

namespace micropatch {

template <typename Scalar>
void adam_update(Tensor<Scalar>& param, const Tensor<Scalar>& grad, AdamMoments<Scalar>& moments,
                 std::int64_t step, const AdamOptions& options) {
  if (grad.shape() != param.shape() || moments.m.shape() != param.shape() || moments.v.shape() != param.shape()) {
    throw DimensionError("adam: gradient/moment shape mismatch for parameter " + shape_string(param.shape()));
  }
  if (!(options.learning_rate > 0.0)) throw ConfigurationError("adam: learning rate must be positive");
  if (step < 1) throw ConfigurationError("adam: step counter starts at 1");
  const Scalar lr = static_cast<Scalar>(options.learning_rate);
  const Scalar b1 = static_cast<Scalar>(options.beta1);
  const Scalar b2 = static_cast<Scalar>(options.beta2);
  const Scalar eps = static_cast<Scalar>(options.eps);
  if (options.weight_decay > 0.0) param.vec() *= Scalar(1) - lr * static_cast<Scalar>(options.weight_decay);
  moments.m.vec() = b1 * moments.m.vec() + (Scalar(1) - b1) * grad.vec();
  moments.v.vec() = b2 * moments.v.vec() + (Scalar(1) - b2) * grad.vec().cwiseAbs2();
  const Scalar c1 = Scalar(1) - static_cast<Scalar>(std::pow(options.beta1, double(step)));
  const Scalar c2 = Scalar(1) - static_cast<Scalar>(std::pow(options.beta2, double(step)));
  param.array() -= lr * (moments.m.array() / c1) / ((moments.v.array() / c2).sqrt() + eps);
}

template <typename Scalar>
Adam<Scalar>::Adam(std::vector<Var<Scalar>> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  if (!(options_.learning_rate > 0.0)) throw ConfigurationError("adam: learning rate must be positive");
  moments_.reserve(params_.size());
  for (const auto& p : params_) moments_.push_back({Tensor<Scalar>(p->shape()), Tensor<Scalar>(p->shape())});
}

template <typename Scalar>
void Adam<Scalar>::step() {
  ++step_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p->requires_grad || !p->has_grad()) continue;
    adam_update(p->value, p->grad, moments_[i], step_, options_);
  }
}

template <typename Scalar>
void Adam<Scalar>::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

template void adam_update<float>(Tensor<float>&, const Tensor<float>&, AdamMoments<float>&, std::int64_t,
                                 const AdamOptions&);
template void adam_update<double>(Tensor<double>&, const Tensor<double>&, AdamMoments<double>&, std::int64_t,
                                  const AdamOptions&);
template class Adam<float>;
template class Adam<double>;

}  // namespace micropatch
