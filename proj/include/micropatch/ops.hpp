#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "micropatch/graph.hpp"
#include "micropatch/rng.hpp"

namespace micropatch {

// Differentiable operators. Every function builds one graph node (composites
// such as multi_head_attention build several) and is instantiated for float
// (training) and double (gradient verification). Image tensors are NCHW.

/// While alive, counts multiply-accumulates performed by the forward passes of
/// linear, bmm, conv2d and depthwise_conv2d on this thread.
class MacCounter {
 public:
  MacCounter();
  ~MacCounter();
  MacCounter(const MacCounter&) = delete;
  MacCounter& operator=(const MacCounter&) = delete;

  std::int64_t total() const { return total_; }

  static void add(std::int64_t macs);

 private:
  std::int64_t total_ = 0;
  MacCounter* previous_;
};

// ---- structural -----------------------------------------------------------

template <typename Scalar> Var<Scalar> reshape(const Var<Scalar>& x, Shape shape);
/// Collapses every axis after the first: [B, ...] -> [B, prod(...)].
template <typename Scalar> Var<Scalar> flatten(const Var<Scalar>& x);
template <typename Scalar> Var<Scalar> permute(const Var<Scalar>& x, const std::vector<int>& axes);
template <typename Scalar> Var<Scalar> concat(const std::vector<Var<Scalar>>& xs, int axis);
template <typename Scalar> Var<Scalar> narrow(const Var<Scalar>& x, int axis, Index start, Index length);
/// Repeats a [1, ...] tensor along a new batch extent.
template <typename Scalar> Var<Scalar> expand_batch(const Var<Scalar>& x, Index batch);

// ---- elementwise ----------------------------------------------------------

template <typename Scalar> Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b);
template <typename Scalar> Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b);
template <typename Scalar> Var<Scalar> scale(const Var<Scalar>& x, Scalar factor);
/// x[B, ...] + y where y has shape [...] or [1, ...].
template <typename Scalar> Var<Scalar> add_broadcast(const Var<Scalar>& x, const Var<Scalar>& y);
/// x[B, C, ...] * gate[B, C], the gate broadcast over trailing axes.
template <typename Scalar> Var<Scalar> scale_channels(const Var<Scalar>& x, const Var<Scalar>& gate);
template <typename Scalar> Var<Scalar> sum(const Var<Scalar>& x);
template <typename Scalar> Var<Scalar> mean(const Var<Scalar>& x);

enum class Activation { relu, tanh, gelu, silu, sigmoid };

template <typename Scalar> Var<Scalar> activate(const Var<Scalar>& x, Activation kind);
template <typename Scalar> Var<Scalar> relu(const Var<Scalar>& x) { return activate(x, Activation::relu); }
template <typename Scalar> Var<Scalar> tanh(const Var<Scalar>& x) { return activate(x, Activation::tanh); }
/// Exact form x * Phi(x).
template <typename Scalar> Var<Scalar> gelu(const Var<Scalar>& x) { return activate(x, Activation::gelu); }
template <typename Scalar> Var<Scalar> silu(const Var<Scalar>& x) { return activate(x, Activation::silu); }
template <typename Scalar> Var<Scalar> sigmoid(const Var<Scalar>& x) { return activate(x, Activation::sigmoid); }

// ---- dense ----------------------------------------------------------------

/// out[..., o] = sum_i x[..., i] w[i, o] + b[o]. Leading axes are batch axes.
template <typename Scalar>
Var<Scalar> linear(const Var<Scalar>& x, const Var<Scalar>& w, const Var<Scalar>& b);

/// Batched matrix product over the leading axis: [N, M, K] x [N, K, P].
/// With transpose_b the second operand is given as [N, P, K].
template <typename Scalar>
Var<Scalar> bmm(const Var<Scalar>& a, const Var<Scalar>& b, bool transpose_b = false);

/// Softmax over the last axis.
template <typename Scalar> Var<Scalar> softmax(const Var<Scalar>& x);

// ---- convolution and pooling ---------------------------------------------

struct Conv2dOptions {
  Index stride = 1;
  Index padding = 0;
  /// Floor a fractional output size instead of rejecting it (trailing rows
  /// and columns that do not fill a whole stride are skipped).
  bool floor_output = false;
};

/// Cross-correlation: x[B, C, H, W], kernel[O, C, kh, kw], bias[O] (bias may be null).
template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& kernel, const Var<Scalar>& bias,
                   Conv2dOptions options = {});

/// One filter per channel: kernel[C, 1, kh, kw], bias[C] (may be null).
template <typename Scalar>
Var<Scalar> depthwise_conv2d(const Var<Scalar>& x, const Var<Scalar>& kernel, const Var<Scalar>& bias,
                             Conv2dOptions options = {});

enum class PoolKind { max, avg };

/// Window k, stride k. Max-pool gradients go to the first maximal element in
/// row-major window order.
template <typename Scalar>
Var<Scalar> pool2d(const Var<Scalar>& x, PoolKind kind, Index window = 2);

/// [B, C, H, W] -> [B, C].
template <typename Scalar> Var<Scalar> global_avg_pool(const Var<Scalar>& x);

// ---- normalization --------------------------------------------------------

template <typename Scalar>
struct BatchNormBuffers {
  Tensor<Scalar>* running_mean;
  Tensor<Scalar>* running_var;
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;
inline constexpr double kConvNextLayerNormEps = 1e-6;
inline constexpr double kTransformerLayerNormEps = 1e-5;

/// Per-channel normalization of x[B, C, ...]. Training mode normalizes with
/// the (biased) batch statistics and updates the running estimates as
/// r <- (1 - momentum) r + momentum s, using the unbiased variance; inference
/// mode uses the running estimates.
template <typename Scalar>
Var<Scalar> batch_norm(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta,
                       BatchNormBuffers<Scalar> buffers, bool training,
                       double momentum = kBatchNormMomentum, double eps = kBatchNormEps);

/// Normalization over the last axis.
template <typename Scalar>
Var<Scalar> layer_norm(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta, double eps);

// ---- regularizers ---------------------------------------------------------

/// Inverted dropout. Identity when !training or p == 0. Throws for p >= 1.
template <typename Scalar>
Var<Scalar> dropout(const Var<Scalar>& x, double p, bool training, Rng& rng);

/// Stochastic depth on a residual branch x[B, ...]: each sample's branch is
/// zeroed with probability p, survivors scaled by 1 / (1 - p).
template <typename Scalar>
Var<Scalar> drop_path(const Var<Scalar>& x, double p, bool training, Rng& rng);

// ---- loss -----------------------------------------------------------------

/// Mean over the batch of -log softmax(logits)[label], log-sum-exp stabilized.
template <typename Scalar>
Var<Scalar> cross_entropy(const Var<Scalar>& logits, std::span<const int> labels);

// ---- attention ------------------------------------------------------------

template <typename Scalar>
struct AttentionWeights {
  Var<Scalar> qkv_weight;   // [D, 3D], columns ordered q | k | v
  Var<Scalar> qkv_bias;     // [3D]
  Var<Scalar> proj_weight;  // [D, D]
  Var<Scalar> proj_bias;    // [D]
};

/// Multi-head self-attention over x[B, T, D]. When probe is non-null it
/// receives the attention probabilities, shape [B, heads, T, T].
template <typename Scalar>
Var<Scalar> multi_head_attention(const Var<Scalar>& x, Index heads, const AttentionWeights<Scalar>& w,
                                 Tensor<Scalar>* probe = nullptr);

}  // namespace micropatch
