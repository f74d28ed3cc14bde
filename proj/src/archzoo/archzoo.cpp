#include "micropatch/archzoo.hpp"

#include <algorithm>
#include <cctype>

#include "networks.hpp"

namespace micropatch {

namespace {

constexpr std::array<std::string_view, 8> kArchNames = {"MLP",        "CNN",           "ResNetD4",
                                                        "NIN",        "SEResNetD4",    "EfficientNetB0",
                                                        "ConvNeXtTiny", "CustomViT"};

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

bool has_pooled_chain(Arch arch) {
  return arch == Arch::CNN || arch == Arch::ResNetD4 || arch == Arch::NIN || arch == Arch::SEResNetD4;
}

void check_rate(double p, const char* name) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigurationError(std::string(name) + " must lie in [0, 1)");
}

}  // namespace

std::string_view arch_name(Arch arch) { return kArchNames[static_cast<std::size_t>(arch)]; }

Arch parse_arch(std::string_view name) {
  const std::string wanted = lower(name);
  for (std::size_t i = 0; i < kArchNames.size(); ++i)
    if (lower(kArchNames[i]) == wanted) return kAllArchs[i];
  throw ConfigurationError("unknown architecture '" + std::string(name) + "'");
}

ModelSpec ModelSpec::defaults(Arch arch, int num_classes) {
  ModelSpec spec;
  spec.arch = arch;
  spec.num_classes = num_classes;
  return spec;
}

void ModelSpec::validate() const {
  if (num_classes < 2) throw ConfigurationError("num_classes must be at least 2");
  if (input_size != 40) throw ConfigurationError("input_size must be 40");
  if (channels != 3) throw ConfigurationError("channels must be 3");
  check_rate(input_dropout, "input_dropout");
  check_rate(hidden_dropout, "hidden_dropout");
  check_rate(se_dropout, "se_dropout");
  check_rate(drop_path, "drop_path");
  check_rate(vit_dropout, "vit_dropout");
  if (residual_units < 1) throw ConfigurationError("residual_units must be at least 1");
  if (vit_depth < 1) throw ConfigurationError("vit_depth must be at least 1");
  if (convnext_depths.size() != 4 || std::any_of(convnext_depths.begin(), convnext_depths.end(),
                                                 [](int d) { return d < 1; }))
    throw ConfigurationError("convnext_depths must list four positive depths");
}

nlohmann::json ModelSpec::to_json() const {
  return {{"arch", arch_name(arch)},
          {"num_classes", num_classes},
          {"input_size", input_size},
          {"channels", channels},
          {"init_seed", init_seed},
          {"input_dropout", input_dropout},
          {"hidden_dropout", hidden_dropout},
          {"se_dropout", se_dropout},
          {"drop_path", drop_path},
          {"vit_dropout", vit_dropout},
          {"residual_units", residual_units},
          {"vit_depth", vit_depth},
          {"convnext_depths", convnext_depths}};
}

ModelSpec ModelSpec::from_json(const nlohmann::json& j) {
  try {
    ModelSpec s = defaults(parse_arch(j.at("arch").get<std::string>()));
    s.num_classes = j.value("num_classes", s.num_classes);
    s.input_size = j.value("input_size", s.input_size);
    s.channels = j.value("channels", s.channels);
    s.init_seed = j.value("init_seed", s.init_seed);
    s.input_dropout = j.value("input_dropout", s.input_dropout);
    s.hidden_dropout = j.value("hidden_dropout", s.hidden_dropout);
    s.se_dropout = j.value("se_dropout", s.se_dropout);
    s.drop_path = j.value("drop_path", s.drop_path);
    s.vit_dropout = j.value("vit_dropout", s.vit_dropout);
    s.residual_units = j.value("residual_units", s.residual_units);
    s.vit_depth = j.value("vit_depth", s.vit_depth);
    s.convnext_depths = j.value("convnext_depths", s.convnext_depths);
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigurationError(std::string("malformed model spec: ") + e.what());
  }
}

// ---------------------------------------------------------------- Model

template <typename Scalar>
Model<Scalar>::Model(ModelSpec spec, std::vector<ModelEntry<Scalar>> entries, std::unique_ptr<Network<Scalar>> network)
    : spec_(std::move(spec)),
      entries_(std::move(entries)),
      network_(std::move(network)),
      rng_(derive_seed({spec_.init_seed, 0x64726f70ULL})) {}

template <typename Scalar>
Var<Scalar> Model<Scalar>::forward(const Tensor<Scalar>& batch, ForwardContext<Scalar> ctx) {
  const Shape expected = {batch.rank() == 4 ? batch.dim(0) : -1, spec_.channels, spec_.input_size, spec_.input_size};
  if (batch.shape() != expected || batch.dim(0) < 1)
    throw DimensionError("model input must be [B, 3, 40, 40], got " + shape_string(batch.shape()));
  ctx.training = training_;
  if (!ctx.rng) ctx.rng = &rng_;
  return network_->forward(leaf(batch), ctx);
}

template <typename Scalar>
Tensor<Scalar> Model<Scalar>::predict(const Tensor<Scalar>& batch, Index chunk) {
  return infer(batch, chunk, false);
}

template <typename Scalar>
Tensor<Scalar> Model<Scalar>::features(const Tensor<Scalar>& batch, Index chunk) {
  return infer(batch, chunk, true);
}

template <typename Scalar>
Tensor<Scalar> Model<Scalar>::infer(const Tensor<Scalar>& batch, Index chunk, bool head_input) {
  if (batch.rank() != 4) throw DimensionError("predict expects [B, 3, 40, 40], got " + shape_string(batch.shape()));
  const bool was_training = training_;
  training_ = false;
  NoGradGuard no_grad;
  const Index n = batch.dim(0);
  const Index per_sample = n > 0 ? batch.size() / n : 0;
  Tensor<Scalar> out;
  Index width = head_input ? 0 : spec_.num_classes;
  if (!head_input) out = Tensor<Scalar>(Shape{n, width});
  try {
    for (Index start = 0; start < n; start += chunk) {
      const Index len = std::min(chunk, n - start);
      Tensor<Scalar> part(Shape{len, batch.dim(1), batch.dim(2), batch.dim(3)});
      std::copy_n(batch.data() + start * per_sample, len * per_sample, part.data());
      Tensor<Scalar> captured;
      ForwardContext<Scalar> ctx;
      if (head_input) ctx.features = &captured;
      const auto logits = forward(part, ctx);
      const Tensor<Scalar>& src = head_input ? captured : logits->value;
      if (out.empty()) {
        width = src.dim(-1);
        out = Tensor<Scalar>(Shape{n, width});
      }
      std::copy_n(src.data(), src.size(), out.data() + start * width);
    }
  } catch (...) {
    training_ = was_training;
    throw;
  }
  training_ = was_training;
  if (out.empty()) out = Tensor<Scalar>(Shape{0, width});
  return out;
}

template <typename Scalar>
std::vector<Var<Scalar>> Model<Scalar>::parameters() const {
  std::vector<Var<Scalar>> out;
  for (const auto& e : entries_)
    if (e.kind == EntryKind::parameter) out.push_back(e.var);
  return out;
}

template <typename Scalar>
std::vector<Var<Scalar>> Model<Scalar>::trainable_parameters() const {
  std::vector<Var<Scalar>> out;
  for (const auto& e : entries_)
    if (e.kind == EntryKind::parameter && e.var->requires_grad) out.push_back(e.var);
  return out;
}

template <typename Scalar>
void Model<Scalar>::freeze_backbone() {
  for (auto& e : entries_) {
    if (e.kind != EntryKind::parameter) continue;
    e.var->requires_grad = e.head;
    if (!e.head) e.var->grad = Tensor<Scalar>();
  }
}

template <typename Scalar>
void Model<Scalar>::unfreeze_all() {
  for (auto& e : entries_)
    if (e.kind == EntryKind::parameter) e.var->requires_grad = true;
}

// ---------------------------------------------------------------- build

template <typename Scalar>
Model<Scalar> build(const ModelSpec& spec) {
  spec.validate();
  zoo::Registry<Scalar> reg(spec.init_seed);
  auto network = zoo::make_network(reg, spec);
  Model<Scalar> model(spec, reg.take(), std::move(network));

  if (has_pooled_chain(spec.arch)) {
    std::vector<std::pair<std::string, Shape>> trace;
    ForwardContext<Scalar> ctx;
    ctx.trace = &trace;
    {
      NoGradGuard no_grad;
      model.forward(Tensor<Scalar>(Shape{1, spec.channels, spec.input_size, spec.input_size}), ctx);
    }
    std::vector<Index> chain = {spec.input_size};
    for (const auto& [name, shape] : trace)
      if (shape.size() == 4 && shape[2] != chain.back()) chain.push_back(shape[2]);
    if (chain != std::vector<Index>{40, 20, 10, 5})
      throw DimensionError("feature-map chain of " + std::string(arch_name(spec.arch)) + " is not 40-20-10-5");
  }
  return model;
}

template <typename Scalar>
std::int64_t param_count(const Model<Scalar>& model) {
  std::int64_t total = 0;
  for (const auto& e : model.entries())
    if (e.kind == EntryKind::parameter) total += e.var->value.size();
  return total;
}

std::int64_t param_count(const ModelSpec& spec) { return param_count(build<float>(spec)); }

std::int64_t forward_macs(const ModelSpec& spec) {
  auto model = build<float>(spec);
  MacCounter counter;
  model.predict(TensorF(Shape{1, spec.channels, spec.input_size, spec.input_size}));
  return counter.total();
}

template class Model<float>;
template class Model<double>;
template Model<float> build<float>(const ModelSpec&);
template Model<double> build<double>(const ModelSpec&);
template std::int64_t param_count<float>(const Model<float>&);
template std::int64_t param_count<double>(const Model<double>&);

}  // namespace micropatch
