#include "networks.hpp"

#include <array>
#include <optional>

namespace micropatch::zoo {

namespace {

constexpr Index kFlatFeatures = 128 * 5 * 5;  // 3200
constexpr Index kPixels = 3 * 40 * 40;        // 4800

// ---------------------------------------------------------------- MLP family

/// Flatten -> input dropout -> [tanh FC -> hidden dropout]*. Output width is
/// the last hidden size.
template <typename Scalar>
struct MlpTrunk {
  std::vector<Linear<Scalar>> layers;
  double input_dropout = 0.0;
  double hidden_dropout = 0.0;

  static MlpTrunk make(Registry<Scalar>& reg, const std::string& prefix, const ModelSpec& spec) {
    MlpTrunk t;
    t.input_dropout = spec.input_dropout;
    t.hidden_dropout = spec.hidden_dropout;
    const std::vector<Index> dims = {kPixels, 1500, 800, 600};
    for (std::size_t i = 0; i + 1 < dims.size(); ++i)
      t.layers.push_back(make_linear(reg, prefix + "fc" + std::to_string(i + 1), dims[i], dims[i + 1],
                                     Init::xavier_uniform));
    return t;
  }

  Index width() const { return layers.back().weight->value.dim(1); }

  Var<Scalar> operator()(const Var<Scalar>& x, ForwardContext<Scalar>& ctx) const {
    auto h = dropout(flatten(x), input_dropout, ctx.training, *ctx.rng);
    for (const auto& l : layers) h = dropout(tanh(l(h)), hidden_dropout, ctx.training, *ctx.rng);
    return h;
  }
};

/// 3200 -> 512 -> 256 tanh head shared by CNN and the ResNet family.
template <typename Scalar>
struct DenseHead {
  Linear<Scalar> fc1, fc2;
  double hidden_dropout = 0.0;

  static DenseHead make(Registry<Scalar>& reg, const std::string& prefix, double hidden_dropout) {
    return {make_linear(reg, prefix + "fc1", kFlatFeatures, 512, Init::xavier_uniform),
            make_linear(reg, prefix + "fc2", 512, 256, Init::xavier_uniform), hidden_dropout};
  }

  Var<Scalar> operator()(const Var<Scalar>& features, ForwardContext<Scalar>& ctx) const {
    auto h = dropout(tanh(fc1(flatten(features))), hidden_dropout, ctx.training, *ctx.rng);
    return dropout(tanh(fc2(h)), hidden_dropout, ctx.training, *ctx.rng);
  }
};

template <typename Scalar>
class MlpNet final : public Network<Scalar> {
 public:
  MlpNet(Registry<Scalar>& reg, const ModelSpec& spec)
      : trunk_(MlpTrunk<Scalar>::make(reg, "", spec)),
        head_(make_linear(reg, "head", trunk_.width(), spec.num_classes, Init::xavier_uniform, true)) {}

  Var<Scalar> forward(const Var<Scalar>& x, ForwardContext<Scalar>& ctx) override {
    return head_(ctx.capture(trunk_(x, ctx)));
  }

 private:
  MlpTrunk<Scalar> trunk_;
  Linear<Scalar> head_;
};

// ---------------------------------------------------------------------- CNN

template <typename Scalar>
class CnnNet final : public Network<Scalar> {
 public:
  CnnNet(Registry<Scalar>& reg, const ModelSpec& spec) : input_dropout_(spec.input_dropout) {
    const std::vector<Index> widths = {3, 48, 64, 128, 128};
    for (std::size_t i = 0; i + 1 < widths.size(); ++i)
      convs_.push_back(make_conv(reg, "conv" + std::to_string(i + 1),
                                 {.in = widths[i], .out = widths[i + 1], .kernel = 3, .padding = 1},
                                 Init::kaiming_uniform));
    dense_ = DenseHead<Scalar>::make(reg, "", spec.hidden_dropout);
    head_ = make_linear(reg, "head", 256, spec.num_classes, Init::xavier_uniform, true);
  }

  Var<Scalar> forward(const Var<Scalar>& x, ForwardContext<Scalar>& ctx) override {
    auto h = dropout(x, input_dropout_, ctx.training, *ctx.rng);
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      h = relu(convs_[i](h));
      // three halvings: 40 -> 20 -> 10 -> 5, matching the 3200-wide flatten
      if (i < 3) h = pool2d(h, PoolKind::max, 2);
      ctx.record("block" + std::to_string(i + 1), h->shape());
    }
    return head_(ctx.capture(dense_(h, ctx)));
  }

 private:
  double input_dropout_;
  std::vector<Conv<Scalar>> convs_;
  DenseHead<Scalar> dense_;
  Linear<Scalar> head_;
};

// ------------------------------------------------------------ ResNet family

template <typename Scalar>
struct ResidualUnit {
  std::string name;
  Conv<Scalar> conv_a, conv_b;
  std::optional<Conv<Scalar>> projection;   // 1x1 skip when channels change
  std::optional<SqueezeExcite<Scalar>> se;  // after conv_b, before the addition

  static ResidualUnit make(Registry<Scalar>& reg, const std::string& name, Index in, Index out) {
    ResidualUnit u;
    u.name = name;
    u.conv_a = make_conv(reg, name + ".conv_a", {.in = in, .out = out, .kernel = 3, .padding = 1},
                         Init::kaiming_uniform);
    u.conv_b = make_conv(reg, name + ".conv_b", {.in = out, .out = out, .kernel = 3, .padding = 1},
                         Init::kaiming_uniform);
    if (in != out)
      u.projection =
          make_conv(reg, name + ".proj", {.in = in, .out = out, .kernel = 1}, Init::kaiming_uniform);
    return u;
  }

  Var<Scalar> operator()(const Var<Scalar>& x, ForwardContext<Scalar>& ctx) const {
    LayerScope scope(name);
    auto y = conv_b(relu(conv_a(x)));
    if (se) y = (*se)(y, ctx);
    return relu(add(y, projection ? (*projection)(x) : x));
  }
};

/// Stem, four residual blocks (24, 48, 64, 128 channels) with RGB
/// re-injection after block 1 and stride-2 1x1 transitions, optional SE
/// blocks, then the 3200 -> 512 -> 256 dense head. Output width 256.
template <typename Scalar>
struct ResNetTrunk {
  double input_dropout = 0.0;
  Conv<Scalar> stem;
  std::vector<std::vector<ResidualUnit<Scalar>>> blocks;
  std::vector<Conv<Scalar>> transitions;
  std::optional<SqueezeExcite<Scalar>> se_after_transition3, se_end_block3, se_after_transition4, se_end_block4;
  DenseHead<Scalar> dense;

  static ResNetTrunk make(Registry<Scalar>& reg, const std::string& prefix, const ModelSpec& spec, bool with_se) {
    ResNetTrunk t;
    t.input_dropout = spec.input_dropout;
    const std::array<Index, 4> widths = {24, 48, 64, 128};
    t.stem = make_conv(reg, prefix + "stem", {.in = 3, .out = 24, .kernel = 3, .padding = 1}, Init::kaiming_uniform);
    for (std::size_t b = 0; b < widths.size(); ++b) {
      std::vector<ResidualUnit<Scalar>> units;
      for (int u = 0; u < spec.residual_units; ++u)
        units.push_back(ResidualUnit<Scalar>::make(
            reg, prefix + "block" + std::to_string(b + 1) + ".unit" + std::to_string(u + 1), widths[b], widths[b]));
      t.blocks.push_back(std::move(units));
      if (b + 1 < widths.size()) {
        const Index in = widths[b] + (b == 0 ? 3 : 0);  // RGB concatenated after block 1
        t.transitions.push_back(make_conv(
            reg, prefix + "transition" + std::to_string(b + 1),
            {.in = in, .out = widths[b + 1], .kernel = 1, .stride = 2, .floor_output = true}, Init::kaiming_uniform));
      }
    }
    if (with_se) {
      auto se = [&](const std::string& name, Index c) {
        return make_se(reg, prefix + name, c, c / 2, Activation::relu, spec.se_dropout);
      };
      t.se_after_transition3 = se("se_transition3", 64);
      t.se_end_block3 = se("se_block3", 64);
      t.se_after_transition4 = se("se_transition4", 128);
      t.blocks.back().back().se = se("se_final_conv", 128);
      t.se_end_block4 = se("se_block4", 128);
    }
    t.dense = DenseHead<Scalar>::make(reg, prefix, spec.hidden_dropout);
    return t;
  }

  Var<Scalar> operator()(const Var<Scalar>& x, ForwardContext<Scalar>& ctx) const {
    const auto input = dropout(x, input_dropout, ctx.training, *ctx.rng);
    auto h = relu(stem(input));
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      if (b > 0) {
        h = relu(transitions[b - 1](h));
        if (b == 2 && se_after_transition3) h = (*se_after_transition3)(h, ctx);
        if (b == 3 && se_after_transition4) h = (*se_after_transition4)(h, ctx);
      }
      for (const auto& unit : blocks[b]) h = unit(h, ctx);
      if (b == 2 && se_end_block3) h = (*se_end_block3)(h, ctx);
      if (b == 3 && se_end_block4) h = (*se_end_block4)(h, ctx);
      if (b == 0) h = concat<Scalar>({h, input}, 1);
      ctx.record("block" + std::to_string(b + 1), h->shape());
    }
    return dense(h, ctx);
  }
};

template <typename Scalar>
class ResNetNet final : public Network<Scalar> {
 public:
  ResNetNet(Registry<Scalar>& reg, const ModelSpec& spec, bool with_se)
      : trunk_(ResNetTrunk<Scalar>::make(reg, "", spec, with_se)),
        head_(make_linear(reg, "head", 256, spec.num_classes, Init::xavier_uniform, true)) {}

  Var<Scalar> forward(const Var<Scalar>& x, ForwardContext<Scalar>& ctx) override { return head_(ctx.capture(trunk_(x, ctx))); }

 private:
  ResNetTrunk<Scalar> trunk_;
  Linear<Scalar> head_;
};

template <typename Scalar>
class NinNet final : public Network<Scalar> {
 public:
  NinNet(Registry<Scalar>& reg, const ModelSpec& spec)
      : resnet_(ResNetTrunk<Scalar>::make(reg, "resnet.", spec, false)),
        mlp_(MlpTrunk<Scalar>::make(reg, "mlp.", spec)),
        head_(make_linear(reg, "head", 256 + mlp_.width(), spec.num_classes, Init::xavier_uniform, true)) {}

  Var<Scalar> forward(const Var<Scalar>& x, ForwardContext<Scalar>& ctx) override {
    return head_(ctx.capture(concat<Scalar>({resnet_(x, ctx), mlp_(x, ctx)}, 1)));  // 256 + 600 = 856
  }

 private:
  ResNetTrunk<Scalar> resnet_;
  MlpTrunk<Scalar> mlp_;
  Linear<Scalar> head_;
};

// ---------------------------------------------------------- EfficientNet-B0

template <typename Scalar>
struct MBConv {
  std::string name;
  std::optional<Conv<Scalar>> expand;
  std::optional<BatchNorm<Scalar>> expand_bn;
  Conv<Scalar> depthwise;
  BatchNorm<Scalar> depthwise_bn;
  SqueezeExcite<Scalar> se;
  Conv<Scalar> project;
  BatchNorm<Scalar> project_bn;
  bool residual = false;

  static MBConv make(Registry<Scalar>& reg, const std::string& name, Index in, Index out, Index expand_ratio,
                     Index stride, double se_dropout) {
    MBConv m;
    m.name = name;
    const Index hidden = in * expand_ratio;
    if (expand_ratio != 1) {
      m.expand = make_conv(reg, name + ".expand", {.in = in, .out = hidden, .kernel = 1, .bias = false},
                           Init::kaiming_uniform);
      m.expand_bn = make_batch_norm(reg, name + ".expand_bn", hidden);
    }
    m.depthwise = make_conv(reg, name + ".depthwise",
                            {.in = hidden, .out = hidden, .kernel = 3, .stride = stride, .padding = 1,
                             .bias = false, .depthwise = true, .floor_output = true},
                            Init::kaiming_uniform);
    m.depthwise_bn = make_batch_norm(reg, name + ".depthwise_bn", hidden);
    const Index squeezed = std::max<Index>(1, static_cast<Index>(static_cast<double>(in) * 0.25));
    m.se = make_se(reg, name + ".se", hidden, squeezed, Activation::silu, se_dropout);
    m.project = make_conv(reg, name + ".project", {.in = hidden, .out = out, .kernel = 1, .bias = false},
                          Init::kaiming_uniform);
    m.project_bn = make_batch_norm(reg, name + ".project_bn", out);
    m.residual = stride == 1 && in == out;
    return m;
  }

  Var<Scalar> operator()(const Var<Scalar>& x, ForwardContext<Scalar>& ctx) const {
    LayerScope scope(name);
    auto h = x;
    if (expand) h = silu((*expand_bn)((*expand)(h), ctx.training));
    h = silu(depthwise_bn(depthwise(h), ctx.training));
    h = se(h, ctx);
    h = project_bn(project(h), ctx.training);
    return residual ? add(h, x) : h;
  }
};

template <typename Scalar>
class EfficientNetNet final : public Network<Scalar> {
 public:
  EfficientNetNet(Registry<Scalar>& reg, const ModelSpec& spec) {
    stem_ = make_conv(reg, "stem", {.in = 3, .out = 32, .kernel = 3, .stride = 1, .padding = 1, .bias = false},
                      Init::kaiming_uniform);
    stem_bn_ = make_batch_norm(reg, "stem_bn", 32);
    // expansion ratio, output channels, repeats, first stride
    const std::array<std::array<Index, 4>, 7> stages = {{{1, 16, 1, 1},
                                                         {6, 24, 2, 2},
                                                         {6, 40, 2, 2},
                                                         {6, 80, 3, 2},
                                                         {6, 112, 3, 1},
                                                         {6, 192, 4, 2},
                                                         {6, 320, 1, 1}}};
    Index in = 32;
    for (std::size_t s = 0; s < stages.size(); ++s) {
      const auto [ratio, out, repeats, stride] = stages[s];
      for (Index r = 0; r < repeats; ++r) {
        blocks_.push_back(MBConv<Scalar>::make(
            reg, "stage" + std::to_string(s + 1) + ".block" + std::to_string(r + 1), in, out, ratio,
            r == 0 ? stride : 1, spec.se_dropout));
        in = out;
      }
    }
    head_conv_ = make_conv(reg, "head_conv", {.in = in, .out = 1280, .kernel = 1, .bias = false},
                           Init::kaiming_uniform);
    head_bn_ = make_batch_norm(reg, "head_bn", 1280);
    head_ = make_linear(reg, "head", 1280, spec.num_classes, Init::xavier_uniform, true);
  }

  Var<Scalar> forward(const Var<Scalar>& x, ForwardContext<Scalar>& ctx) override {
    auto h = silu(stem_bn_(stem_(x), ctx.training));
    for (const auto& b : blocks_) {
      h = b(h, ctx);
      ctx.record(b.name, h->shape());
    }
    h = silu(head_bn_(head_conv_(h), ctx.training));
    return head_(ctx.capture(global_avg_pool(h)));
  }

 private:
  Conv<Scalar> stem_;
  BatchNorm<Scalar> stem_bn_;
  std::vector<MBConv<Scalar>> blocks_;
  Conv<Scalar> head_conv_;
  BatchNorm<Scalar> head_bn_;
  Linear<Scalar> head_;
};

// ----------------------------------------------------------- ConvNeXt-Tiny

// The residual stream is kept channels-last [B, H, W, C] so the layer norms
// and the pointwise layers act on the last axis; only the depthwise and
// strided convolutions run channels-first.
template <typename Scalar>
Var<Scalar> to_channels_first(const Var<Scalar>& x) {
  return permute(x, {0, 3, 1, 2});
}
template <typename Scalar>
Var<Scalar> to_channels_last(const Var<Scalar>& x) {
  return permute(x, {0, 2, 3, 1});
}

template <typename Scalar>
struct ConvNextBlock {
  std::string name;
  LayerNorm<Scalar> norm_in;
  Conv<Scalar> depthwise;
  LayerNorm<Scalar> norm;
  Linear<Scalar> expand, project;
  double drop_path_rate = 0.0;

  static ConvNextBlock make(Registry<Scalar>& reg, const std::string& name, Index dim, double drop_path_rate) {
    return {name,
            make_layer_norm(reg, name + ".norm_in", dim, kConvNextLayerNormEps),
            make_conv(reg, name + ".depthwise",
                      {.in = dim, .out = dim, .kernel = 5, .padding = 2, .depthwise = true}, Init::trunc_normal),
            make_layer_norm(reg, name + ".norm", dim, kConvNextLayerNormEps),
            make_linear(reg, name + ".expand", dim, 4 * dim, Init::trunc_normal),
            make_linear(reg, name + ".project", 4 * dim, dim, Init::trunc_normal),
            drop_path_rate};
  }

  // x is channels-last
  Var<Scalar> operator()(const Var<Scalar>& x, ForwardContext<Scalar>& ctx) const {
    LayerScope scope(name);
    auto h = to_channels_last(depthwise(to_channels_first(norm_in(x))));
    h = project(gelu(expand(norm(h))));
    return add(x, drop_path(h, drop_path_rate, ctx.training, *ctx.rng));
  }
};

template <typename Scalar>
class ConvNextNet final : public Network<Scalar> {
 public:
  ConvNextNet(Registry<Scalar>& reg, const ModelSpec& spec) {
    const std::array<Index, 4> dims = {48, 96, 192, 384};
    const auto& depths = spec.convnext_depths;
    int total_blocks = 0;
    for (int d : depths) total_blocks += d;
    stem_ = make_conv(reg, "stem", {.in = 3, .out = dims[0], .kernel = 2, .stride = 2}, Init::trunc_normal);
    int index = 0;
    for (std::size_t s = 0; s < dims.size(); ++s) {
      if (s > 0) {
        const std::string name = "downsample" + std::to_string(s);
        downsample_norms_.push_back(make_layer_norm(reg, name + ".norm", dims[s - 1], kConvNextLayerNormEps));
        downsample_convs_.push_back(make_conv(
            reg, name + ".conv", {.in = dims[s - 1], .out = dims[s], .kernel = 2, .stride = 2, .floor_output = true},
            Init::trunc_normal));
      }
      std::vector<ConvNextBlock<Scalar>> stage;
      for (int b = 0; b < depths[s]; ++b, ++index) {
        const double rate =
            total_blocks > 1 ? spec.drop_path * static_cast<double>(index) / (total_blocks - 1) : spec.drop_path;
        stage.push_back(ConvNextBlock<Scalar>::make(
            reg, "stage" + std::to_string(s + 1) + ".block" + std::to_string(b + 1), dims[s], rate));
      }
      stages_.push_back(std::move(stage));
    }
    final_norm_ = make_layer_norm(reg, "final_norm", dims.back(), kConvNextLayerNormEps);
    head_ = make_linear(reg, "head", dims.back(), spec.num_classes, Init::trunc_normal, true);
  }

  Var<Scalar> forward(const Var<Scalar>& x, ForwardContext<Scalar>& ctx) override {
    auto h = to_channels_last(stem_(x));
    for (std::size_t s = 0; s < stages_.size(); ++s) {
      if (s > 0) h = to_channels_last(downsample_convs_[s - 1](to_channels_first(downsample_norms_[s - 1](h))));
      for (const auto& block : stages_[s]) h = block(h, ctx);
      ctx.record("stage" + std::to_string(s + 1), h->shape());
    }
    return head_(ctx.capture(final_norm_(global_avg_pool(to_channels_first(h)))));
  }

 private:
  Conv<Scalar> stem_;
  std::vector<LayerNorm<Scalar>> downsample_norms_;
  std::vector<Conv<Scalar>> downsample_convs_;
  std::vector<std::vector<ConvNextBlock<Scalar>>> stages_;
  LayerNorm<Scalar> final_norm_;
  Linear<Scalar> head_;
};

// --------------------------------------------------------------- CustomViT

inline constexpr Index kPatch = 8;
inline constexpr Index kEmbed = 160;
inline constexpr Index kHeads = 4;
inline constexpr Index kTokens = (40 / kPatch) * (40 / kPatch) + 1;  // 25 patches + class token

template <typename Scalar>
struct TransformerBlock {
  std::string name;
  LayerNorm<Scalar> norm1;
  AttentionWeights<Scalar> attention;
  LayerNorm<Scalar> norm2;
  Linear<Scalar> fc1, fc2;
  double dropout_rate = 0.0;

  static TransformerBlock make(Registry<Scalar>& reg, const std::string& name, double dropout_rate) {
    TransformerBlock t;
    t.name = name;
    t.norm1 = make_layer_norm(reg, name + ".norm1", kEmbed, kTransformerLayerNormEps);
    const auto qkv = make_linear(reg, name + ".attn.qkv", kEmbed, 3 * kEmbed, Init::trunc_normal);
    const auto proj = make_linear(reg, name + ".attn.proj", kEmbed, kEmbed, Init::trunc_normal);
    t.attention = {qkv.weight, qkv.bias, proj.weight, proj.bias};
    t.norm2 = make_layer_norm(reg, name + ".norm2", kEmbed, kTransformerLayerNormEps);
    t.fc1 = make_linear(reg, name + ".mlp.fc1", kEmbed, 4 * kEmbed, Init::trunc_normal);
    t.fc2 = make_linear(reg, name + ".mlp.fc2", 4 * kEmbed, kEmbed, Init::trunc_normal);
    t.dropout_rate = dropout_rate;
    return t;
  }

  Var<Scalar> operator()(const Var<Scalar>& x, ForwardContext<Scalar>& ctx) const {
    LayerScope scope(name);
    Tensor<Scalar> probe;
    auto a = multi_head_attention(norm1(x), kHeads, attention, ctx.attention_maps ? &probe : nullptr);
    if (ctx.attention_maps) ctx.attention_maps->push_back(std::move(probe));
    auto h = add(x, dropout(a, dropout_rate, ctx.training, *ctx.rng));
    auto m = fc2(gelu(fc1(norm2(h))));
    return add(h, dropout(m, dropout_rate, ctx.training, *ctx.rng));
  }
};

template <typename Scalar>
class VitNet final : public Network<Scalar> {
 public:
  VitNet(Registry<Scalar>& reg, const ModelSpec& spec) {
    patch_embed_ = make_conv(reg, "patch_embed", {.in = 3, .out = kEmbed, .kernel = kPatch, .stride = kPatch},
                             Init::trunc_normal);
    class_token_ = reg.param("class_token", reg.weight({1, 1, kEmbed}, 0, 0, Init::trunc_normal));
    position_ = reg.param("pos_embed", reg.weight({1, kTokens, kEmbed}, 0, 0, Init::trunc_normal));
    for (int i = 0; i < spec.vit_depth; ++i)
      blocks_.push_back(TransformerBlock<Scalar>::make(reg, "block" + std::to_string(i + 1), spec.vit_dropout));
    final_norm_ = make_layer_norm(reg, "final_norm", kEmbed, kTransformerLayerNormEps);
    head_ = make_linear(reg, "head", kEmbed, spec.num_classes, Init::trunc_normal, true);
  }

  Var<Scalar> forward(const Var<Scalar>& x, ForwardContext<Scalar>& ctx) override {
    const Index batch = x->value.dim(0);
    auto patches = patch_embed_(x);  // [B, 160, 5, 5]
    auto tokens = permute(reshape(patches, Shape{batch, kEmbed, kTokens - 1}), {0, 2, 1});
    auto h = add_broadcast(concat<Scalar>({expand_batch(class_token_, batch), tokens}, 1), position_);
    ctx.record("tokens", h->shape());
    for (const auto& block : blocks_) h = block(h, ctx);
    auto cls = reshape(narrow(final_norm_(h), 1, 0, 1), Shape{batch, kEmbed});
    return head_(ctx.capture(cls));
  }

 private:
  Conv<Scalar> patch_embed_;
  Var<Scalar> class_token_, position_;
  std::vector<TransformerBlock<Scalar>> blocks_;
  LayerNorm<Scalar> final_norm_;
  Linear<Scalar> head_;
};

}  // namespace

template <typename Scalar>
std::unique_ptr<Network<Scalar>> make_network(Registry<Scalar>& reg, const ModelSpec& spec) {
  switch (spec.arch) {
    case Arch::MLP: return std::make_unique<MlpNet<Scalar>>(reg, spec);
    case Arch::CNN: return std::make_unique<CnnNet<Scalar>>(reg, spec);
    case Arch::ResNetD4: return std::make_unique<ResNetNet<Scalar>>(reg, spec, false);
    case Arch::NIN: return std::make_unique<NinNet<Scalar>>(reg, spec);
    case Arch::SEResNetD4: return std::make_unique<ResNetNet<Scalar>>(reg, spec, true);
    case Arch::EfficientNetB0: return std::make_unique<EfficientNetNet<Scalar>>(reg, spec);
    case Arch::ConvNeXtTiny: return std::make_unique<ConvNextNet<Scalar>>(reg, spec);
    case Arch::CustomViT: return std::make_unique<VitNet<Scalar>>(reg, spec);
  }
  throw ConfigurationError("unknown architecture");
}

template std::unique_ptr<Network<float>> make_network<float>(Registry<float>&, const ModelSpec&);
template std::unique_ptr<Network<double>> make_network<double>(Registry<double>&, const ModelSpec&);

}  // namespace micropatch::zoo
