#include <cmath>

#include "ops_detail.hpp"

namespace micropatch {

using detail::require;

template <typename Scalar>
Var<Scalar> softmax(const Var<Scalar>& x) {
  const Index cols = x->value.dim(-1);
  const Index rows = x->value.size() / cols;
  Tensor<Scalar> out(x->shape());
  auto y = out.matrix(rows, cols);
  y = x->value.matrix(rows, cols).colwise() - x->value.matrix(rows, cols).rowwise().maxCoeff();
  y = y.array().exp().matrix();
  y.array().colwise() /= y.rowwise().sum().array();
  return make_result<Scalar>(std::move(out), "softmax", {x}, [rows, cols](Node<Scalar>& n) {
    const auto y = n.value.matrix(rows, cols);
    const auto g = n.grad.matrix(rows, cols);
    const typename Tensor<Scalar>::Vector dot = (g.array() * y.array()).rowwise().sum();
    n.parents[0]->ensure_grad().matrix(rows, cols).array() += y.array() * (g.colwise() - dot).array();
  });
}

template <typename Scalar>
Var<Scalar> cross_entropy(const Var<Scalar>& logits, std::span<const int> labels) {
  require(logits->value.rank() == 2, "cross_entropy: logits must be [B, C]");
  const Index batch = logits->value.dim(0);
  const Index classes = logits->value.dim(1);
  require(static_cast<Index>(labels.size()) == batch, "cross_entropy: label count != batch size");
  require(batch > 0, "cross_entropy: empty batch");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes)
      throw DataError("cross_entropy: label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                      " outside [0, " + std::to_string(classes) + ")");
  }
  const auto z = logits->value.matrix(batch, classes);
  auto probs = std::make_shared<RowMatrix<Scalar>>(z.colwise() - z.rowwise().maxCoeff());
  const typename Tensor<Scalar>::Vector log_norm = probs->array().exp().rowwise().sum().log();
  Scalar loss = 0;
  for (Index b = 0; b < batch; ++b) loss += log_norm[b] - (*probs)(b, labels[static_cast<std::size_t>(b)]);
  loss /= static_cast<Scalar>(batch);
  // keep softmax probabilities for the backward pass
  *probs = (probs->colwise() - log_norm).array().exp().matrix();
  std::vector<int> kept(labels.begin(), labels.end());
  return make_result<Scalar>(Tensor<Scalar>(Shape{1}, loss), "cross_entropy", {logits},
                             [probs, kept = std::move(kept), batch, classes](Node<Scalar>& n) {
    RowMatrix<Scalar> g = *probs;
    for (Index b = 0; b < batch; ++b) g(b, kept[static_cast<std::size_t>(b)]) -= Scalar(1);
    n.parents[0]->ensure_grad().matrix(batch, classes) += g * (n.grad[0] / static_cast<Scalar>(batch));
  });
}

template <typename Scalar>
Var<Scalar> dropout(const Var<Scalar>& x, double p, bool training, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigurationError("dropout: p must be in [0, 1), got " + std::to_string(p));
  if (!training || p == 0.0) return x;
  auto mask = std::make_shared<typename Tensor<Scalar>::Vector>(x->value.size());
  const Scalar keep_scale = static_cast<Scalar>(1.0 / (1.0 - p));
  for (Index i = 0; i < mask->size(); ++i) (*mask)[i] = rng.uniform() < p ? Scalar(0) : keep_scale;
  Tensor<Scalar> out(x->shape(), typename Tensor<Scalar>::Vector(x->value.array() * mask->array()));
  return make_result<Scalar>(std::move(out), "dropout", {x}, [mask](Node<Scalar>& n) {
    n.parents[0]->ensure_grad().array() += n.grad.array() * mask->array();
  });
}

template <typename Scalar>
Var<Scalar> drop_path(const Var<Scalar>& x, double p, bool training, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigurationError("drop_path: p must be in [0, 1), got " + std::to_string(p));
  if (!training || p == 0.0) return x;
  const Index batch = x->value.dim(0);
  const Index inner = x->value.size() / std::max<Index>(batch, 1);
  auto keep = std::make_shared<typename Tensor<Scalar>::Vector>(batch);
  const Scalar keep_scale = static_cast<Scalar>(1.0 / (1.0 - p));
  for (Index b = 0; b < batch; ++b) (*keep)[b] = rng.uniform() < p ? Scalar(0) : keep_scale;
  Tensor<Scalar> out = x->value;
  out.matrix(batch, inner).array().colwise() *= keep->array();
  return make_result<Scalar>(std::move(out), "drop_path", {x}, [keep, batch, inner](Node<Scalar>& n) {
    n.parents[0]->ensure_grad().matrix(batch, inner).array() +=
        n.grad.matrix(batch, inner).array().colwise() * keep->array();
  });
}

template <typename Scalar>
Var<Scalar> multi_head_attention(const Var<Scalar>& x, Index heads, const AttentionWeights<Scalar>& w,
                                 Tensor<Scalar>* probe) {
  require(x->value.rank() == 3, "multi_head_attention: input must be [B, T, D]");
  const Index batch = x->value.dim(0);
  const Index tokens = x->value.dim(1);
  const Index dim = x->value.dim(2);
  if (heads <= 0 || dim % heads != 0)
    throw ConfigurationError("multi_head_attention: embedding " + std::to_string(dim) + " not divisible by " +
                             std::to_string(heads) + " heads");
  const Index head_dim = dim / heads;

  const auto qkv = linear(x, w.qkv_weight, w.qkv_bias);
  auto split_heads = [&](Index part) {
    auto t = narrow(qkv, 2, part * dim, dim);
    t = reshape(t, Shape{batch, tokens, heads, head_dim});
    t = permute(t, {0, 2, 1, 3});
    return reshape(t, Shape{batch * heads, tokens, head_dim});
  };
  const auto q = split_heads(0);
  const auto k = split_heads(1);
  const auto v = split_heads(2);

  auto scores = scale(bmm(q, k, /*transpose_b=*/true), static_cast<Scalar>(1.0 / std::sqrt(double(head_dim))));
  auto attn = softmax(scores);
  if (probe) *probe = attn->value.reshaped(Shape{batch, heads, tokens, tokens});

  auto ctx = bmm(attn, v);
  ctx = reshape(ctx, Shape{batch, heads, tokens, head_dim});
  ctx = permute(ctx, {0, 2, 1, 3});
  ctx = reshape(ctx, Shape{batch, tokens, dim});
  return linear(ctx, w.proj_weight, w.proj_bias);
}

#define MICROPATCH_INSTANTIATE(S)                                                                       \
  template Var<S> softmax<S>(const Var<S>&);                                                            \
  template Var<S> cross_entropy<S>(const Var<S>&, std::span<const int>);                                \
  template Var<S> dropout<S>(const Var<S>&, double, bool, Rng&);                                        \
  template Var<S> drop_path<S>(const Var<S>&, double, bool, Rng&);                                      \
  template Var<S> multi_head_attention<S>(const Var<S>&, Index, const AttentionWeights<S>&, Tensor<S>*);

MICROPATCH_FOR_SCALARS(MICROPATCH_INSTANTIATE)
#undef MICROPATCH_INSTANTIATE

}  // namespace micropatch
