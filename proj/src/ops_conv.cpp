#include <algorithm>
#include <limits>
#include <optional>

#include "ops_detail.hpp"

namespace micropatch {

using detail::require;

namespace {

struct ConvGeometry {
  Index batch, channels, height, width;
  Index out_channels, kh, kw;
  Index stride, padding;
  Index out_h, out_w;

  Index patch() const { return channels * kh * kw; }
  Index positions() const { return out_h * out_w; }
};

ConvGeometry conv_geometry(const Shape& x, Index out_channels, Index kh, Index kw, Conv2dOptions opt) {
  require(x.size() == 4, "conv2d: input must be [B, C, H, W], got " + shape_string(x));
  require(opt.stride >= 1 && opt.padding >= 0, "conv2d: invalid stride/padding");
  ConvGeometry g{x[0], x[1], x[2], x[3], out_channels, kh, kw, opt.stride, opt.padding, 0, 0};
  const Index span_h = g.height + 2 * g.padding - kh;
  const Index span_w = g.width + 2 * g.padding - kw;
  const bool exact = opt.floor_output || (span_h % g.stride == 0 && span_w % g.stride == 0);
  require(span_h >= 0 && span_w >= 0 && exact,
          "conv2d: output size is not a positive integer for input " + shape_string(x) + ", kernel " +
              std::to_string(kh) + "x" + std::to_string(kw) + ", stride " + std::to_string(g.stride) +
              ", padding " + std::to_string(g.padding));
  g.out_h = span_h / g.stride + 1;
  g.out_w = span_w / g.stride + 1;
  return g;
}

bool is_pointwise(const ConvGeometry& g) {
  return g.kh == 1 && g.kw == 1 && g.stride == 1 && g.padding == 0;
}

/// Visits every (output row, kernel tap) pair of a convolution plane with the
/// range [ox0, ox1) of output columns whose input column stays in bounds;
/// ix0 is the input column read by ox0.
template <typename Fn>
void for_each_tap(const ConvGeometry& g, Fn&& fn) {
  for (Index oy = 0; oy < g.out_h; ++oy) {
    for (Index ky = 0; ky < g.kh; ++ky) {
      const Index iy = oy * g.stride - g.padding + ky;
      if (iy < 0 || iy >= g.height) continue;
      for (Index kx = 0; kx < g.kw; ++kx) {
        const Index shift = g.padding - kx;  // ix = ox * stride - shift
        if (g.width - 1 + shift < 0) continue;
        const Index ox0 = shift > 0 ? (shift + g.stride - 1) / g.stride : 0;
        const Index ox1 = std::min(g.out_w, (g.width - 1 + shift) / g.stride + 1);
        if (ox0 < ox1) fn(oy, iy, ky, kx, ox0, ox1, ox0 * g.stride - shift);
      }
    }
  }
}

// Rows (c, ky, kx), columns (sample, oy, ox) for samples [first, first + count).
template <typename Scalar>
void im2col(const ConvGeometry& g, const Scalar* x, Index first, Index count, RowMatrix<Scalar>& col) {
  const Index positions = g.positions();
  col.setZero(g.patch(), count * positions);
  for (Index s = 0; s < count; ++s) {
    for (Index c = 0; c < g.channels; ++c) {
      const Scalar* plane = x + ((first + s) * g.channels + c) * g.height * g.width;
      for_each_tap(g, [&](Index oy, Index iy, Index ky, Index kx, Index ox0, Index ox1, Index ix0) {
        Scalar* dst = col.data() + ((c * g.kh + ky) * g.kw + kx) * count * positions + s * positions + oy * g.out_w;
        const Scalar* src = plane + iy * g.width + ix0;
        if (g.stride == 1) {
          std::copy_n(src, ox1 - ox0, dst + ox0);
        } else {
          for (Index ox = ox0; ox < ox1; ++ox) dst[ox] = src[(ox - ox0) * g.stride];
        }
      });
    }
  }
}

template <typename Scalar>
void col2im(const ConvGeometry& g, const RowMatrix<Scalar>& col, Index first, Index count, Scalar* dx) {
  const Index positions = g.positions();
  for (Index s = 0; s < count; ++s) {
    for (Index c = 0; c < g.channels; ++c) {
      Scalar* plane = dx + ((first + s) * g.channels + c) * g.height * g.width;
      for_each_tap(g, [&](Index oy, Index iy, Index ky, Index kx, Index ox0, Index ox1, Index ix0) {
        const Scalar* src =
            col.data() + ((c * g.kh + ky) * g.kw + kx) * count * positions + s * positions + oy * g.out_w;
        Scalar* dst = plane + iy * g.width + ix0;
        for (Index ox = ox0; ox < ox1; ++ox) dst[(ox - ox0) * g.stride] += src[ox];
      });
    }
  }
}

// Samples per im2col chunk, bounding the column buffer to ~8M elements.
Index chunk_size(const ConvGeometry& g) {
  const Index per_sample = std::max<Index>(1, g.patch() * g.positions());
  return std::clamp<Index>(Index{8'000'000} / per_sample, 1, g.batch);
}

}  // namespace

template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& kernel, const Var<Scalar>& bias,
                   Conv2dOptions options) {
  const Shape& ks = kernel->shape();
  require(ks.size() == 4, "conv2d: kernel must be [O, C, kh, kw]");
  const ConvGeometry g = conv_geometry(x->shape(), ks[0], ks[2], ks[3], options);
  require(ks[1] == g.channels, "conv2d: kernel expects " + std::to_string(ks[1]) + " channels, input has " +
                                   std::to_string(g.channels));
  require(!bias || bias->value.size() == g.out_channels, "conv2d: bias must be [O]");

  const Index positions = g.positions();
  MacCounter::add(g.batch * g.out_channels * g.patch() * positions);
  Tensor<Scalar> out(Shape{g.batch, g.out_channels, g.out_h, g.out_w});
  const auto weights = kernel->value.matrix(g.out_channels, g.patch());
  const Index chunk = chunk_size(g);
  RowMatrix<Scalar> col, result;
  for (Index first = 0; first < g.batch; first += chunk) {
    const Index count = std::min(chunk, g.batch - first);
    for (Index s = 0; s < count; ++s) {
      MatrixMap<Scalar> y(out.data() + (first + s) * g.out_channels * positions, g.out_channels, positions);
      if (is_pointwise(g)) {
        y.noalias() = weights * ConstMatrixMap<Scalar>(x->value.data() + (first + s) * g.channels * positions,
                                                       g.channels, positions);
      }
    }
    if (!is_pointwise(g)) {
      im2col(g, x->value.data(), first, count, col);
      result.noalias() = weights * col;
      for (Index s = 0; s < count; ++s) {
        MatrixMap<Scalar>(out.data() + (first + s) * g.out_channels * positions, g.out_channels, positions) =
            result.middleCols(s * positions, positions);
      }
    }
  }
  if (bias) {
    const typename Tensor<Scalar>::Vector per_row = bias->value.vec().replicate(g.batch, 1);
    out.matrix(g.batch * g.out_channels, positions).colwise() += per_row;
  }

  return make_result<Scalar>(std::move(out), "conv2d", detail::present({x, kernel, bias}), [g](Node<Scalar>& n) {
    auto& px = n.parents[0];
    auto& pk = n.parents[1];
    const Index positions = g.positions();
    const auto weights = pk->value.matrix(g.out_channels, g.patch());
    if (n.parents.size() > 2 && n.parents[2]->requires_grad) {
      n.parents[2]->ensure_grad().vec() +=
          n.grad.matrix(g.batch * g.out_channels, positions).rowwise().sum().reshaped(g.out_channels, g.batch)
              .rowwise().sum();
    }
    if (is_pointwise(g)) {
      for (Index s = 0; s < g.batch; ++s) {
        ConstMatrixMap<Scalar> dy(n.grad.data() + s * g.out_channels * positions, g.out_channels, positions);
        if (pk->requires_grad)
          pk->ensure_grad().matrix(g.out_channels, g.patch()).noalias() +=
              dy * ConstMatrixMap<Scalar>(px->value.data() + s * g.channels * positions, g.channels, positions)
                       .transpose();
        if (px->requires_grad)
          MatrixMap<Scalar>(px->ensure_grad().data() + s * g.channels * positions, g.channels, positions)
              .noalias() += weights.transpose() * dy;
      }
      return;
    }
    const Index chunk = chunk_size(g);
    RowMatrix<Scalar> col, dy, dcol;
    for (Index first = 0; first < g.batch; first += chunk) {
      const Index count = std::min(chunk, g.batch - first);
      dy.resize(g.out_channels, count * positions);
      for (Index s = 0; s < count; ++s) {
        dy.middleCols(s * positions, positions) = ConstMatrixMap<Scalar>(
            n.grad.data() + (first + s) * g.out_channels * positions, g.out_channels, positions);
      }
      if (pk->requires_grad) {
        im2col(g, px->value.data(), first, count, col);
        pk->ensure_grad().matrix(g.out_channels, g.patch()).noalias() += dy * col.transpose();
      }
      if (px->requires_grad) {
        dcol.noalias() = weights.transpose() * dy;
        col2im(g, dcol, first, count, px->ensure_grad().data());
      }
    }
  });
}

namespace {



/// Stride-1 depthwise convolution of one plane through a zero-padded copy.
/// Each kernel tap becomes a single contiguous multiply-add over an
/// out_h x padded-width grid whose surplus columns are discarded.
template <typename Scalar>
class PaddedPlane {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  explicit PaddedPlane(const ConvGeometry& g)
      : g_(g), wp_(g.width + 2 * g.padding), span_(g.out_h * wp_),
        padded_(Array::Zero((g.height + 2 * g.padding) * wp_ + g.kw)), grid_(span_) {}

  void load(const Scalar* plane) {
    for (Index y = 0; y < g_.height; ++y)
      std::copy_n(plane + y * g_.width, g_.width, padded_.data() + (y + g_.padding) * wp_ + g_.padding);
  }

  void forward(const Scalar* kernel, Scalar bias, Scalar* out) {
    grid_.setConstant(bias);
    for (Index ky = 0; ky < g_.kh; ++ky)
      for (Index kx = 0; kx < g_.kw; ++kx) grid_ += kernel[ky * g_.kw + kx] * padded_.segment(ky * wp_ + kx, span_);
    for (Index oy = 0; oy < g_.out_h; ++oy) std::copy_n(grid_.data() + oy * wp_, g_.out_w, out + oy * g_.out_w);
  }

  /// Accumulates kernel gradients into dk (may be null) and input gradients
  /// into dx (may be null) for the upstream gradient dy of this plane.
  void backward(const Scalar* kernel, const Scalar* dy, Scalar* dk, Scalar* dx) {
    grid_.setZero();
    for (Index oy = 0; oy < g_.out_h; ++oy) std::copy_n(dy + oy * g_.out_w, g_.out_w, grid_.data() + oy * wp_);
    if (dk)
      for (Index ky = 0; ky < g_.kh; ++ky)
        for (Index kx = 0; kx < g_.kw; ++kx)
          dk[ky * g_.kw + kx] += (grid_ * padded_.segment(ky * wp_ + kx, span_)).sum();
    if (!dx) return;
    if (dpadded_.size() == 0) dpadded_ = Array(padded_.size());
    dpadded_.setZero();
    for (Index ky = 0; ky < g_.kh; ++ky)
      for (Index kx = 0; kx < g_.kw; ++kx)
        dpadded_.segment(ky * wp_ + kx, span_) += kernel[ky * g_.kw + kx] * grid_;
    for (Index y = 0; y < g_.height; ++y) {
      const Scalar* src = dpadded_.data() + (y + g_.padding) * wp_ + g_.padding;
      Scalar* dst = dx + y * g_.width;
      for (Index x = 0; x < g_.width; ++x) dst[x] += src[x];
    }
  }

 private:
  ConvGeometry g_;
  Index wp_, span_;
  Array padded_, grid_, dpadded_;
};

}  // namespace

template <typename Scalar>
Var<Scalar> depthwise_conv2d(const Var<Scalar>& x, const Var<Scalar>& kernel, const Var<Scalar>& bias,
                             Conv2dOptions options) {
  const Shape& ks = kernel->shape();
  require(ks.size() == 4 && ks[1] == 1, "depthwise_conv2d: kernel must be [C, 1, kh, kw]");
  ConvGeometry g = conv_geometry(x->shape(), ks[0], ks[2], ks[3], options);
  require(ks[0] == g.channels, "depthwise_conv2d: kernel/input channel mismatch");
  require(!bias || bias->value.size() == g.channels, "depthwise_conv2d: bias must be [C]");

  Tensor<Scalar> out(Shape{g.batch, g.channels, g.out_h, g.out_w});
  MacCounter::add(g.batch * g.channels * g.kh * g.kw * g.out_h * g.out_w);
  const Scalar* in = x->value.data();
  const Scalar* k = kernel->value.data();
  std::optional<PaddedPlane<Scalar>> padded;
  if (g.stride == 1) padded.emplace(g);
  for (Index b = 0; b < g.batch; ++b) {
    for (Index c = 0; c < g.channels; ++c) {
      const Scalar* plane = in + (b * g.channels + c) * g.height * g.width;
      const Scalar* kc = k + c * g.kh * g.kw;
      Scalar* dst = out.data() + (b * g.channels + c) * g.out_h * g.out_w;
      if (padded) {
        padded->load(plane);
        padded->forward(kc, bias ? bias->value[c] : Scalar(0), dst);
        continue;
      }
      std::fill_n(dst, g.out_h * g.out_w, bias ? bias->value[c] : Scalar(0));
      for_each_tap(g, [&](Index oy, Index iy, Index ky, Index kx, Index ox0, Index ox1, Index ix0) {
        const Scalar w = kc[ky * g.kw + kx];
        Scalar* row = dst + oy * g.out_w;
        const Scalar* src = plane + iy * g.width + ix0;
        for (Index ox = ox0; ox < ox1; ++ox) row[ox] += w * src[(ox - ox0) * g.stride];
      });
    }
  }

  return make_result<Scalar>(std::move(out), "depthwise_conv2d", detail::present({x, kernel, bias}),
                             [g](Node<Scalar>& n) {
    auto& px = n.parents[0];
    auto& pk = n.parents[1];
    Scalar* dx = px->requires_grad ? px->ensure_grad().data() : nullptr;
    Scalar* dk = pk->requires_grad ? pk->ensure_grad().data() : nullptr;
    Scalar* db = (n.parents.size() > 2 && n.parents[2]->requires_grad) ? n.parents[2]->ensure_grad().data()
                                                                        : nullptr;
    const Scalar* in = px->value.data();
    const Scalar* k = pk->value.data();
    std::optional<PaddedPlane<Scalar>> padded;
    if (g.stride == 1) padded.emplace(g);
    for (Index b = 0; b < g.batch; ++b) {
      for (Index c = 0; c < g.channels; ++c) {
        const Index plane_off = (b * g.channels + c) * g.height * g.width;
        const Scalar* dy = n.grad.data() + (b * g.channels + c) * g.out_h * g.out_w;
        if (db)
          db[c] += Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>(dy, g.out_h * g.out_w).sum();
        if (padded) {
          padded->load(in + plane_off);
          padded->backward(k + c * g.kh * g.kw, dy, dk ? dk + c * g.kh * g.kw : nullptr,
                           dx ? dx + plane_off : nullptr);
          continue;
        }
        for_each_tap(g, [&](Index oy, Index iy, Index ky, Index kx, Index ox0, Index ox1, Index ix0) {
          const Index tap = c * g.kh * g.kw + ky * g.kw + kx;
          const Scalar* gy = dy + oy * g.out_w;
          const Index base = plane_off + iy * g.width + ix0;
          if (dk) {
            Scalar acc = 0;
            for (Index ox = ox0; ox < ox1; ++ox) acc += gy[ox] * in[base + (ox - ox0) * g.stride];
            dk[tap] += acc;
          }
          if (dx) {
            const Scalar w = k[tap];
            for (Index ox = ox0; ox < ox1; ++ox) dx[base + (ox - ox0) * g.stride] += gy[ox] * w;
          }
        });
      }
    }
  });
}

template <typename Scalar>
Var<Scalar> pool2d(const Var<Scalar>& x, PoolKind kind, Index window) {
  const Shape& s = x->shape();
  require(s.size() == 4, "pool2d: input must be [B, C, H, W]");
  require(window >= 1 && s[2] % window == 0 && s[3] % window == 0,
          "pool2d: spatial size " + shape_string(s) + " not divisible by " + std::to_string(window));
  const Index planes = s[0] * s[1];
  const Index h = s[2], w = s[3], oh = h / window, ow = w / window;
  Tensor<Scalar> out(Shape{s[0], s[1], oh, ow});
  auto argmax = std::make_shared<std::vector<std::int32_t>>();
  if (kind == PoolKind::max) argmax->resize(static_cast<std::size_t>(out.size()));
  const Scalar inv_area = Scalar(1) / static_cast<Scalar>(window * window);
  for (Index p = 0; p < planes; ++p) {
    const Scalar* plane = x->value.data() + p * h * w;
    for (Index oy = 0; oy < oh; ++oy) {
      for (Index ox = 0; ox < ow; ++ox) {
        const Index o = (p * oh + oy) * ow + ox;
        if (kind == PoolKind::max) {
          Scalar best = -std::numeric_limits<Scalar>::infinity();
          Index best_at = 0;
          for (Index ky = 0; ky < window; ++ky)
            for (Index kx = 0; kx < window; ++kx) {
              const Index at = (oy * window + ky) * w + ox * window + kx;
              if (plane[at] > best) {
                best = plane[at];
                best_at = at;
              }
            }
          out[o] = best;
          (*argmax)[static_cast<std::size_t>(o)] = static_cast<std::int32_t>(best_at);
        } else {
          Scalar acc = 0;
          for (Index ky = 0; ky < window; ++ky)
            for (Index kx = 0; kx < window; ++kx) acc += plane[(oy * window + ky) * w + ox * window + kx];
          out[o] = acc * inv_area;
        }
      }
    }
  }
  return make_result<Scalar>(std::move(out), kind == PoolKind::max ? "max_pool2d" : "avg_pool2d", {x},
                             [=](Node<Scalar>& n) {
    Scalar* dx = n.parents[0]->ensure_grad().data();
    for (Index p = 0; p < planes; ++p) {
      Scalar* plane = dx + p * h * w;
      for (Index oy = 0; oy < oh; ++oy) {
        for (Index ox = 0; ox < ow; ++ox) {
          const Index o = (p * oh + oy) * ow + ox;
          const Scalar gy = n.grad[o];
          if (kind == PoolKind::max) {
            plane[(*argmax)[static_cast<std::size_t>(o)]] += gy;
          } else {
            for (Index ky = 0; ky < window; ++ky)
              for (Index kx = 0; kx < window; ++kx) plane[(oy * window + ky) * w + ox * window + kx] += gy * inv_area;
          }
        }
      }
    }
  });
}

template <typename Scalar>
Var<Scalar> global_avg_pool(const Var<Scalar>& x) {
  const Shape& s = x->shape();
  require(s.size() == 4, "global_avg_pool: input must be [B, C, H, W]");
  const Index rows = s[0] * s[1];
  const Index area = s[2] * s[3];
  Tensor<Scalar> out(Shape{s[0], s[1]});
  out.vec() = x->value.matrix(rows, area).rowwise().mean();
  return make_result<Scalar>(std::move(out), "global_avg_pool", {x}, [rows, area](Node<Scalar>& n) {
    n.parents[0]->ensure_grad().matrix(rows, area).colwise() += n.grad.vec() / static_cast<Scalar>(area);
  });
}

#define MICROPATCH_INSTANTIATE(S)                                                                  \
  template Var<S> conv2d<S>(const Var<S>&, const Var<S>&, const Var<S>&, Conv2dOptions);            \
  template Var<S> depthwise_conv2d<S>(const Var<S>&, const Var<S>&, const Var<S>&, Conv2dOptions);  \
  template Var<S> pool2d<S>(const Var<S>&, PoolKind, Index);                                       \
  template Var<S> global_avg_pool<S>(const Var<S>&);

MICROPATCH_FOR_SCALARS(MICROPATCH_INSTANTIATE)
#undef MICROPATCH_INSTANTIATE

}  // namespace micropatch
