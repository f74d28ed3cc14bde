#include <cmath>

#include <unsupported/Eigen/SpecialFunctions>

#include "ops_detail.hpp"

namespace micropatch {

using detail::require;
using detail::wants_grad;

template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& x, Shape shape) {
  auto out = x->value.reshaped(std::move(shape));
  return make_result<Scalar>(std::move(out), "reshape", {x}, [](Node<Scalar>& n) {
    auto& px = n.parents[0];
    px->ensure_grad().vec() += n.grad.vec();
  });
}

template <typename Scalar>
Var<Scalar> flatten(const Var<Scalar>& x) {
  const Index batch = x->value.dim(0);
  return reshape(x, Shape{batch, x->value.size() / std::max<Index>(batch, 1)});
}

namespace {

// Calls visit(src, dst) for every element, src indexing the input and dst the
// permuted output, in output order.
template <typename Visit>
void for_each_permuted(const Shape& in_shape, const std::vector<int>& axes, Visit&& visit) {
  const std::size_t rank = in_shape.size();
  Shape in_strides(rank), out_shape(rank), gather(rank);
  Index stride = 1;
  for (std::size_t i = rank; i-- > 0;) {
    in_strides[i] = stride;
    stride *= in_shape[i];
  }
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = in_shape[static_cast<std::size_t>(axes[i])];
    gather[i] = in_strides[static_cast<std::size_t>(axes[i])];
  }
  const Index total = stride;
  const Index inner_extent = rank ? out_shape[rank - 1] : 1;
  const Index inner_stride = rank ? gather[rank - 1] : 1;
  std::vector<Index> counter(rank, 0);
  Index src = 0;
  for (Index dst = 0; dst < total; dst += inner_extent) {
    for (Index j = 0; j < inner_extent; ++j) visit(src + j * inner_stride, dst + j);
    for (std::size_t d = rank - 1; d-- > 0;) {
      ++counter[d];
      src += gather[d];
      if (counter[d] < out_shape[d]) break;
      src -= gather[d] * out_shape[d];
      counter[d] = 0;
    }
  }
}

}  // namespace

template <typename Scalar>
Var<Scalar> permute(const Var<Scalar>& x, const std::vector<int>& axes) {
  const Shape& in_shape = x->value.shape();
  require(axes.size() == in_shape.size() && !axes.empty(), "permute: axes rank mismatch");
  Shape out_shape(in_shape.size());
  for (std::size_t i = 0; i < axes.size(); ++i) out_shape[i] = in_shape[static_cast<std::size_t>(axes[i])];
  Tensor<Scalar> out(out_shape);
  const Scalar* in = x->value.data();
  Scalar* dst = out.data();
  for_each_permuted(in_shape, axes, [&](Index s, Index d) { dst[d] = in[s]; });
  return make_result<Scalar>(std::move(out), "permute", {x}, [axes](Node<Scalar>& n) {
    auto& px = n.parents[0];
    Scalar* g = px->ensure_grad().data();
    const Scalar* go = n.grad.data();
    for_each_permuted(px->value.shape(), axes, [&](Index s, Index d) { g[s] += go[d]; });
  });
}

namespace {

// (outer, axis extent, inner) decomposition around an axis.
struct AxisSplit {
  Index outer = 1;
  Index extent = 1;
  Index inner = 1;
};

AxisSplit split_at(const Shape& shape, int axis) {
  AxisSplit s;
  for (int i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
  s.extent = shape[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

template <typename Scalar>
Var<Scalar> concat(const std::vector<Var<Scalar>>& xs, int axis) {
  require(!xs.empty(), "concat: no inputs");
  Shape out_shape = xs.front()->value.shape();
  const int rank = static_cast<int>(out_shape.size());
  if (axis < 0) axis += rank;
  Index total = 0;
  for (const auto& x : xs) {
    const Shape& s = x->value.shape();
    require(static_cast<int>(s.size()) == rank, "concat: rank mismatch");
    for (int d = 0; d < rank; ++d)
      if (d != axis) require(s[d] == out_shape[d], "concat: shape mismatch " + shape_string(s));
    total += s[axis];
  }
  out_shape[axis] = total;
  Tensor<Scalar> out(out_shape);
  const AxisSplit os = split_at(out_shape, axis);
  Index offset = 0;
  std::vector<Index> offsets;
  for (const auto& x : xs) {
    const AxisSplit s = split_at(x->value.shape(), axis);
    const Index block = s.extent * s.inner;
    for (Index o = 0; o < s.outer; ++o) {
      std::copy_n(x->value.data() + o * block, block, out.data() + o * os.extent * os.inner + offset * os.inner);
    }
    offsets.push_back(offset);
    offset += s.extent;
  }
  return make_result<Scalar>(std::move(out), "concat", xs, [axis, offsets, os](Node<Scalar>& n) {
    for (std::size_t i = 0; i < n.parents.size(); ++i) {
      auto& p = n.parents[i];
      if (!p->requires_grad) continue;
      const AxisSplit s = split_at(p->value.shape(), axis);
      const Index block = s.extent * s.inner;
      Scalar* g = p->ensure_grad().data();
      for (Index o = 0; o < s.outer; ++o) {
        const Scalar* src = n.grad.data() + o * os.extent * os.inner + offsets[i] * os.inner;
        Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(g + o * block, block) +=
            Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(src, block);
      }
    }
  });
}

template <typename Scalar>
Var<Scalar> narrow(const Var<Scalar>& x, int axis, Index start, Index length) {
  const Shape& in_shape = x->value.shape();
  if (axis < 0) axis += static_cast<int>(in_shape.size());
  const AxisSplit s = split_at(in_shape, axis);
  require(start >= 0 && length >= 0 && start + length <= s.extent, "narrow: range out of bounds");
  Shape out_shape = in_shape;
  out_shape[axis] = length;
  Tensor<Scalar> out(out_shape);
  const Index block = length * s.inner;
  for (Index o = 0; o < s.outer; ++o)
    std::copy_n(x->value.data() + (o * s.extent + start) * s.inner, block, out.data() + o * block);
  return make_result<Scalar>(std::move(out), "narrow", {x}, [s, start, block](Node<Scalar>& n) {
    Scalar* g = n.parents[0]->ensure_grad().data();
    using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
    for (Index o = 0; o < s.outer; ++o)
      Eigen::Map<Vec>(g + (o * s.extent + start) * s.inner, block) +=
          Eigen::Map<const Vec>(n.grad.data() + o * block, block);
  });
}

template <typename Scalar>
Var<Scalar> expand_batch(const Var<Scalar>& x, Index batch) {
  require(x->value.dim(0) == 1, "expand_batch: leading extent must be 1");
  Shape out_shape = x->value.shape();
  out_shape[0] = batch;
  Tensor<Scalar> out(out_shape);
  const Index block = x->value.size();
  out.matrix(batch, block).rowwise() = x->value.matrix(1, block).row(0);
  return make_result<Scalar>(std::move(out), "expand_batch", {x}, [batch, block](Node<Scalar>& n) {
    n.parents[0]->ensure_grad().matrix(1, block) += n.grad.matrix(batch, block).colwise().sum();
  });
}

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  require(a->shape() == b->shape(),
          "add: shape mismatch " + shape_string(a->shape()) + " vs " + shape_string(b->shape()));
  Tensor<Scalar> out(a->shape(), typename Tensor<Scalar>::Vector(a->value.vec() + b->value.vec()));
  return make_result<Scalar>(std::move(out), "add", {a, b}, [](Node<Scalar>& n) {
    for (auto& p : n.parents)
      if (p->requires_grad) p->ensure_grad().vec() += n.grad.vec();
  });
}

template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  require(a->shape() == b->shape(),
          "mul: shape mismatch " + shape_string(a->shape()) + " vs " + shape_string(b->shape()));
  Tensor<Scalar> out(a->shape(),
                     typename Tensor<Scalar>::Vector(a->value.array() * b->value.array()));
  return make_result<Scalar>(std::move(out), "mul", {a, b}, [](Node<Scalar>& n) {
    auto& pa = n.parents[0];
    auto& pb = n.parents[1];
    if (pa->requires_grad) pa->ensure_grad().array() += n.grad.array() * pb->value.array();
    if (pb->requires_grad) pb->ensure_grad().array() += n.grad.array() * pa->value.array();
  });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& x, Scalar factor) {
  Tensor<Scalar> out(x->shape(), typename Tensor<Scalar>::Vector(x->value.vec() * factor));
  return make_result<Scalar>(std::move(out), "scale", {x}, [factor](Node<Scalar>& n) {
    n.parents[0]->ensure_grad().vec() += n.grad.vec() * factor;
  });
}

template <typename Scalar>
Var<Scalar> add_broadcast(const Var<Scalar>& x, const Var<Scalar>& y) {
  const Index block = y->value.size();
  require(block > 0 && x->value.size() % block == 0, "add_broadcast: incompatible shapes");
  Shape tail(x->shape().begin() + 1, x->shape().end());
  Shape ytail = y->shape();
  if (!ytail.empty() && ytail.size() == x->shape().size() && ytail[0] == 1) ytail.erase(ytail.begin());
  require(tail == ytail, "add_broadcast: " + shape_string(y->shape()) + " does not broadcast over " +
                             shape_string(x->shape()));
  const Index rows = x->value.size() / block;
  Tensor<Scalar> out = x->value;
  out.matrix(rows, block).rowwise() += y->value.matrix(1, block).row(0);
  return make_result<Scalar>(std::move(out), "add_broadcast", {x, y}, [rows, block](Node<Scalar>& n) {
    auto& px = n.parents[0];
    auto& py = n.parents[1];
    if (px->requires_grad) px->ensure_grad().vec() += n.grad.vec();
    if (py->requires_grad) py->ensure_grad().matrix(1, block) += n.grad.matrix(rows, block).colwise().sum();
  });
}

template <typename Scalar>
Var<Scalar> scale_channels(const Var<Scalar>& x, const Var<Scalar>& gate) {
  const Index batch = x->value.dim(0);
  const Index channels = x->value.dim(1);
  require(gate->value.rank() == 2 && gate->value.dim(0) == batch && gate->value.dim(1) == channels,
          "scale_channels: gate must be [B, C]");
  const Index rows = batch * channels;
  const Index inner = x->value.size() / rows;
  Tensor<Scalar> out = x->value;
  out.matrix(rows, inner).array().colwise() *= gate->value.vec().array();
  return make_result<Scalar>(std::move(out), "scale_channels", {x, gate}, [rows, inner](Node<Scalar>& n) {
    auto& px = n.parents[0];
    auto& pg = n.parents[1];
    const auto g = n.grad.matrix(rows, inner);
    if (px->requires_grad)
      px->ensure_grad().matrix(rows, inner).array() += g.array().colwise() * pg->value.vec().array();
    if (pg->requires_grad)
      pg->ensure_grad().vec().array() +=
          (g.array() * px->value.matrix(rows, inner).array()).rowwise().sum();
  });
}

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& x) {
  Tensor<Scalar> out(Shape{1}, x->value.vec().sum());
  return make_result<Scalar>(std::move(out), "sum", {x}, [](Node<Scalar>& n) {
    n.parents[0]->ensure_grad().array() += n.grad[0];
  });
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& x) {
  const Index count = x->value.size();
  Tensor<Scalar> out(Shape{1}, x->value.vec().mean());
  return make_result<Scalar>(std::move(out), "mean", {x}, [count](Node<Scalar>& n) {
    n.parents[0]->ensure_grad().array() += n.grad[0] / static_cast<Scalar>(count);
  });
}

template <typename Scalar>
Var<Scalar> activate(const Var<Scalar>& x, Activation kind) {
  using Vector = typename Tensor<Scalar>::Vector;
  const auto in = x->value.array();
  Vector out;
  std::string_view op;
  switch (kind) {
    case Activation::relu:
      out = in.max(Scalar(0));
      op = "relu";
      break;
    case Activation::tanh:
      out = in.tanh();
      op = "tanh";
      break;
    case Activation::gelu:
      out = Scalar(0.5) * in * (Scalar(1) + (in * Scalar(M_SQRT1_2)).erf());
      op = "gelu";
      break;
    case Activation::silu:
      out = in * in.logistic();
      op = "silu";
      break;
    case Activation::sigmoid:
      out = in.logistic();
      op = "sigmoid";
      break;
  }
  return make_result<Scalar>(Tensor<Scalar>(x->shape(), std::move(out)), op, {x}, [kind](Node<Scalar>& n) {
    const auto in = n.parents[0]->value.array();
    const auto y = n.value.array();
    const auto g = n.grad.array();
    auto dx = n.parents[0]->ensure_grad().array();
    switch (kind) {
      case Activation::relu:
        dx += (in > Scalar(0)).select(g, Scalar(0));
        break;
      case Activation::tanh:
        dx += g * (Scalar(1) - y.square());
        break;
      case Activation::gelu:
        dx += g * (Scalar(0.5) * (Scalar(1) + (in * Scalar(M_SQRT1_2)).erf()) +
                   in * (Scalar(-0.5) * in.square()).exp() * Scalar(0.3989422804014327));
        break;
      case Activation::silu:
      {
        const Eigen::Array<Scalar, Eigen::Dynamic, 1> s = in.logistic();
        dx += g * s * (Scalar(1) + in * (Scalar(1) - s));
      }
        break;
      case Activation::sigmoid:
        dx += g * y * (Scalar(1) - y);
        break;
    }
  });
}

template <typename Scalar>
Var<Scalar> linear(const Var<Scalar>& x, const Var<Scalar>& w, const Var<Scalar>& b) {
  require(w->value.rank() == 2, "linear: weight must be [in, out]");
  const Index in_features = w->value.dim(0);
  const Index out_features = w->value.dim(1);
  require(x->value.rank() >= 1 && x->value.dim(-1) == in_features,
          "linear: input " + shape_string(x->shape()) + " incompatible with weight " + shape_string(w->shape()));
  require(!b || (b->value.rank() == 1 && b->value.dim(0) == out_features), "linear: bias must be [out]");
  const Index rows = x->value.size() / in_features;
  Shape out_shape = x->shape();
  out_shape.back() = out_features;
  Tensor<Scalar> out(out_shape);
  MacCounter::add(rows * in_features * out_features);
  auto y = out.matrix(rows, out_features);
  y.noalias() = x->value.matrix(rows, in_features) * w->value.matrix(in_features, out_features);
  if (b) y.rowwise() += b->value.matrix(1, out_features).row(0);
  return make_result<Scalar>(std::move(out), "linear", detail::present({x, w, b}),
                             [rows, in_features, out_features](Node<Scalar>& n) {
                               auto& px = n.parents[0];
                               auto& pw = n.parents[1];
                               const auto g = n.grad.matrix(rows, out_features);
                               if (px->requires_grad)
                                 px->ensure_grad().matrix(rows, in_features).noalias() +=
                                     g * pw->value.matrix(in_features, out_features).transpose();
                               if (pw->requires_grad)
                                 pw->ensure_grad().matrix(in_features, out_features).noalias() +=
                                     px->value.matrix(rows, in_features).transpose() * g;
                               if (n.parents.size() > 2 && n.parents[2]->requires_grad)
                                 n.parents[2]->ensure_grad().matrix(1, out_features) += g.colwise().sum();
                             });
}

template <typename Scalar>
Var<Scalar> bmm(const Var<Scalar>& a, const Var<Scalar>& b, bool transpose_b) {
  require(a->value.rank() == 3 && b->value.rank() == 3, "bmm: operands must be rank 3");
  const Index batch = a->value.dim(0);
  const Index m = a->value.dim(1);
  const Index k = a->value.dim(2);
  const Index p = transpose_b ? b->value.dim(1) : b->value.dim(2);
  const Index bk = transpose_b ? b->value.dim(2) : b->value.dim(1);
  require(b->value.dim(0) == batch && bk == k, "bmm: shape mismatch " + shape_string(a->shape()) + " x " +
                                                   shape_string(b->shape()));
  Tensor<Scalar> out(Shape{batch, m, p});
  MacCounter::add(batch * m * k * p);
  const Index b_rows = transpose_b ? p : k;
  const Index b_cols = transpose_b ? k : p;
  for (Index i = 0; i < batch; ++i) {
    ConstMatrixMap<Scalar> am(a->value.data() + i * m * k, m, k);
    ConstMatrixMap<Scalar> bm(b->value.data() + i * k * p, b_rows, b_cols);
    MatrixMap<Scalar> om(out.data() + i * m * p, m, p);
    if (transpose_b)
      om.noalias() = am * bm.transpose();
    else
      om.noalias() = am * bm;
  }
  return make_result<Scalar>(std::move(out), "bmm", {a, b},
                             [batch, m, k, p, b_rows, b_cols, transpose_b](Node<Scalar>& n) {
                               auto& pa = n.parents[0];
                               auto& pb = n.parents[1];
                               for (Index i = 0; i < batch; ++i) {
                                 ConstMatrixMap<Scalar> g(n.grad.data() + i * m * p, m, p);
                                 ConstMatrixMap<Scalar> am(pa->value.data() + i * m * k, m, k);
                                 ConstMatrixMap<Scalar> bm(pb->value.data() + i * k * p, b_rows, b_cols);
                                 if (pa->requires_grad) {
                                   MatrixMap<Scalar> ga(pa->ensure_grad().data() + i * m * k, m, k);
                                   if (transpose_b)
                                     ga.noalias() += g * bm;
                                   else
                                     ga.noalias() += g * bm.transpose();
                                 }
                                 if (pb->requires_grad) {
                                   MatrixMap<Scalar> gb(pb->ensure_grad().data() + i * k * p, b_rows, b_cols);
                                   if (transpose_b)
                                     gb.noalias() += g.transpose() * am;
                                   else
                                     gb.noalias() += am.transpose() * g;
                                 }
                               }
                             });
}

#define MICROPATCH_INSTANTIATE(S)                                                              \
  template Var<S> reshape<S>(const Var<S>&, Shape);                                            \
  template Var<S> flatten<S>(const Var<S>&);                                                   \
  template Var<S> permute<S>(const Var<S>&, const std::vector<int>&);                          \
  template Var<S> concat<S>(const std::vector<Var<S>>&, int);                                  \
  template Var<S> narrow<S>(const Var<S>&, int, Index, Index);                                 \
  template Var<S> expand_batch<S>(const Var<S>&, Index);                                       \
  template Var<S> add<S>(const Var<S>&, const Var<S>&);                                        \
  template Var<S> mul<S>(const Var<S>&, const Var<S>&);                                        \
  template Var<S> scale<S>(const Var<S>&, S);                                                  \
  template Var<S> add_broadcast<S>(const Var<S>&, const Var<S>&);                              \
  template Var<S> scale_channels<S>(const Var<S>&, const Var<S>&);                             \
  template Var<S> sum<S>(const Var<S>&);                                                       \
  template Var<S> mean<S>(const Var<S>&);                                                      \
  template Var<S> activate<S>(const Var<S>&, Activation);                                      \
  template Var<S> linear<S>(const Var<S>&, const Var<S>&, const Var<S>&);                      \
  template Var<S> bmm<S>(const Var<S>&, const Var<S>&, bool);

MICROPATCH_FOR_SCALARS(MICROPATCH_INSTANTIATE)
#undef MICROPATCH_INSTANTIATE

}  // namespace micropatch
