#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "micropatch/ops.hpp"

namespace micropatch {

enum class Arch { MLP, CNN, ResNetD4, NIN, SEResNetD4, EfficientNetB0, ConvNeXtTiny, CustomViT };

inline constexpr std::array<Arch, 8> kAllArchs = {Arch::MLP,        Arch::CNN,           Arch::ResNetD4,
                                                  Arch::NIN,        Arch::SEResNetD4,    Arch::EfficientNetB0,
                                                  Arch::ConvNeXtTiny, Arch::CustomViT};

std::string_view arch_name(Arch arch);
/// Accepts the canonical names above (case-insensitive). Throws ConfigurationError.
Arch parse_arch(std::string_view name);

/// Everything needed to build a model deterministically. Defaults are the
/// published per-architecture settings for 40x40 RGB patches.
struct ModelSpec {
  Arch arch = Arch::CNN;
  int num_classes = 16;
  int input_size = 40;
  int channels = 3;
  std::uint64_t init_seed = 42;

  double input_dropout = 0.1;   // MLP, CNN, ResNetD4, NIN, SEResNetD4
  double hidden_dropout = 0.5;  // same family, after each hidden FC layer
  double se_dropout = 0.1;      // SE bottleneck (SEResNetD4, EfficientNetB0)
  double drop_path = 0.2;       // ConvNeXtTiny, linearly scaled over blocks
  double vit_dropout = 0.2;     // CustomViT, after attention and after MLP
  int residual_units = 1;       // per ResNetD4 block
  int vit_depth = 6;
  std::vector<int> convnext_depths = {2, 2, 6, 2};

  static ModelSpec defaults(Arch arch, int num_classes = 16);

  /// Throws ConfigurationError on an invalid combination.
  void validate() const;

  nlohmann::json to_json() const;
  static ModelSpec from_json(const nlohmann::json& j);

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

enum class EntryKind { parameter, buffer };

template <typename Scalar>
struct ModelEntry {
  std::string name;
  Var<Scalar> var;
  EntryKind kind = EntryKind::parameter;
  bool head = false;  // part of the final classification layer
};

template <typename Scalar>
struct ForwardContext {
  bool training = false;
  Rng* rng = nullptr;  // required when training with dropout
  /// When set, receives one [B, heads, T, T] attention map per transformer block.
  std::vector<Tensor<Scalar>>* attention_maps = nullptr;
  /// When set, each SE gate is checked to lie strictly inside (0, 1).
  bool check_gates = false;
  /// When set, receives (stage name, feature shape) pairs.
  std::vector<std::pair<std::string, Shape>>* trace = nullptr;
  /// When set, receives the [B, d] input of the classification head.
  Tensor<Scalar>* features = nullptr;

  void record(std::string name, const Shape& shape) const {
    if (trace) trace->emplace_back(std::move(name), shape);
  }

  const Var<Scalar>& capture(const Var<Scalar>& h) const {
    if (features) *features = h->value;
    return h;
  }
};

template <typename Scalar>
class Network {
 public:
  virtual ~Network() = default;
  virtual Var<Scalar> forward(const Var<Scalar>& x, ForwardContext<Scalar>& ctx) = 0;
};

/// A built architecture: ordered named tensors plus the forward graph.
template <typename Scalar>
class Model {
 public:
  Model(ModelSpec spec, std::vector<ModelEntry<Scalar>> entries, std::unique_ptr<Network<Scalar>> network);

  const ModelSpec& spec() const { return spec_; }

  bool training() const { return training_; }
  void set_training(bool training) { training_ = training; }

  /// Logits [B, num_classes] for a [B, 3, 40, 40] batch in the current mode.
  /// Gradients flow to parameters whose requires_grad flag is set.
  Var<Scalar> forward(const Tensor<Scalar>& batch, ForwardContext<Scalar> ctx = {});

  /// Inference-mode logits, evaluated in chunks without building a graph.
  Tensor<Scalar> predict(const Tensor<Scalar>& batch, Index chunk = 256);

  /// Inference-mode [B, d] inputs of the classification head (backbone features).
  Tensor<Scalar> features(const Tensor<Scalar>& batch, Index chunk = 256);

  const std::vector<ModelEntry<Scalar>>& entries() const { return entries_; }
  std::vector<ModelEntry<Scalar>>& entries() { return entries_; }

  /// Parameters (not buffers) in registration order.
  std::vector<Var<Scalar>> parameters() const;
  /// Parameters whose requires_grad flag is set.
  std::vector<Var<Scalar>> trainable_parameters() const;

  /// Leaves only the classification head trainable (linear-probe mode).
  void freeze_backbone();
  void unfreeze_all();

  Rng& rng() { return rng_; }

 private:
  Tensor<Scalar> infer(const Tensor<Scalar>& batch, Index chunk, bool head_input);

  ModelSpec spec_;
  std::vector<ModelEntry<Scalar>> entries_;
  std::unique_ptr<Network<Scalar>> network_;
  Rng rng_;
  bool training_ = false;
};

/// Builds the architecture named by spec with weights drawn from spec.init_seed.
/// For the pooled/strided convolutional families the feature-map chain
/// 40 -> 20 -> 10 -> 5 is traced and asserted before returning.
template <typename Scalar>
Model<Scalar> build(const ModelSpec& spec);

/// Sum of element counts over trainable tensors (buffers excluded).
template <typename Scalar>
std::int64_t param_count(const Model<Scalar>& model);

/// Parameter count without allocating a model (builds one internally).
std::int64_t param_count(const ModelSpec& spec);

/// Multiply-accumulate count of one forward pass on a single sample, traced
/// from the layer geometry. Used to rank architectures by cost.
std::int64_t forward_macs(const ModelSpec& spec);

using ModelF = Model<float>;

}  // namespace micropatch
