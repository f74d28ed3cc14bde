#include "micropatch/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "micropatch/error.hpp"
#include "micropatch/optim.hpp"

namespace micropatch {

namespace {

TensorF gather_rows(const TensorF& src, std::span<const std::size_t> indices) {
  Shape shape = src.shape();
  const Index n = shape.empty() ? 0 : shape[0];
  const Index row = n > 0 ? src.size() / n : 0;
  shape[0] = static_cast<Index>(indices.size());
  TensorF out(shape);
  for (std::size_t i = 0; i < indices.size(); ++i)
    std::copy_n(src.data() + static_cast<Index>(indices[i]) * row, row, out.data() + static_cast<Index>(i) * row);
  return out;
}

// Mean cross-entropy of logits against labels, in double.
double mean_cross_entropy(const TensorF& logits, std::span<const int> labels) {
  const auto m = logits.as_rows();
  double total = 0.0;
  for (Index i = 0; i < m.rows(); ++i) {
    const auto row = m.row(i).cast<double>();
    const double top = row.maxCoeff();
    const double lse = top + std::log((row.array() - top).exp().sum());
    total += lse - row(labels[i]);
  }
  return m.rows() > 0 ? total / static_cast<double>(m.rows()) : 0.0;
}

double accuracy_of(const std::vector<int>& predicted, std::span<const int> labels) {
  if (labels.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += predicted[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

std::vector<TensorF> snapshot(const ModelF& model) {
  std::vector<TensorF> out;
  for (const auto& e : model.entries()) out.push_back(e.var->value);
  return out;
}

void restore(ModelF& model, const std::vector<TensorF>& values) {
  auto& entries = model.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) entries[i].var->value = values[i];
}

void check_set(const TensorSet& set, const ModelF& model, const char* what) {
  if (set.size() == 0) throw DataError(std::string(what) + " set is empty");
  if (set.images.rank() != 4 || set.images.dim(0) != set.size())
    throw DimensionError(std::string(what) + " images do not match the label count");
  if (set.num_classes != model.spec().num_classes)
    throw ConfigurationError(std::string(what) + " set has " + std::to_string(set.num_classes) +
                             " classes but the model head has " + std::to_string(model.spec().num_classes));
}

}  // namespace

TensorSet TensorSet::subset(std::span<const std::size_t> indices) const {
  TensorSet out;
  out.images = gather_rows(images, indices);
  out.num_classes = num_classes;
  out.labels.reserve(indices.size());
  for (auto i : indices) out.labels.push_back(labels[i]);
  return out;
}

TrainConfig TrainConfig::resolve(Arch arch) const {
  TrainConfig out = *this;
  if (!out.epochs) {
    switch (arch) {
      case Arch::MLP: out.epochs = 30; break;
      case Arch::CNN: out.epochs = 100; break;
      case Arch::CustomViT: out.epochs = 80; break;
      case Arch::ConvNeXtTiny: out.epochs = 60; break;
      default: out.epochs = 50; break;
    }
  }
  if (!out.learning_rate) {
    const bool slow = arch == Arch::EfficientNetB0 || arch == Arch::ConvNeXtTiny || arch == Arch::CustomViT;
    out.learning_rate = slow ? 1e-4 : 1e-3;
  }
  if (!out.weight_decay) {
    out.weight_decay = arch == Arch::ConvNeXtTiny ? 0.2 : arch == Arch::CustomViT ? 0.01 : 0.0;
  }
  return out;
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigurationError("batch_size must be at least 1");
  if (patience < 1) throw ConfigurationError("patience must be at least 1");
  if (epochs && *epochs < 1) throw ConfigurationError("epochs must be at least 1");
  if (learning_rate && !(*learning_rate > 0.0)) throw ConfigurationError("learning_rate must be positive");
  if (weight_decay && *weight_decay < 0.0) throw ConfigurationError("weight_decay must be non-negative");
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j = {{"batch_size", batch_size},
                      {"patience", patience},
                      {"seed", seed},
                      {"shuffle", shuffle},
                      {"monitor", "val_accuracy"},
                      {"restore_best", true},
                      {"tie_break", "earliest"}};
  j["learning_rate"] = learning_rate ? nlohmann::json(*learning_rate) : nlohmann::json(nullptr);
  j["weight_decay"] = weight_decay ? nlohmann::json(*weight_decay) : nlohmann::json(nullptr);
  j["epochs"] = epochs ? nlohmann::json(*epochs) : nlohmann::json(nullptr);
  j["target_accuracy"] = target_accuracy ? nlohmann::json(*target_accuracy) : nlohmann::json(nullptr);
  return j;
}

nlohmann::json history_json(const TrainHistory& h) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : h.epochs)
    epochs.push_back({{"train_loss", e.train_loss},
                      {"train_accuracy", e.train_accuracy},
                      {"val_loss", e.val_loss},
                      {"val_accuracy", e.val_accuracy}});
  return {{"epochs", epochs},
          {"best_epoch", h.best_epoch},
          {"stopped_early", h.stopped_early},
          {"reached_target", h.reached_target}};
}

void write_history_csv(const std::filesystem::path& path, const TrainHistory& h) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out.precision(10);
  out << "epoch,train_loss,train_accuracy,val_loss,val_accuracy\n";
  for (std::size_t i = 0; i < h.epochs.size(); ++i) {
    const auto& e = h.epochs[i];
    out << i + 1 << ',' << e.train_loss << ',' << e.train_accuracy << ',' << e.val_loss << ',' << e.val_accuracy
        << '\n';
  }
}

TrainHistory train(ModelF& model, const TensorSet& train_set, const TensorSet& val_set, const TrainConfig& config,
                   const EpochCallback& on_epoch) {
  config.validate();
  const TrainConfig cfg = config.resolve(model.spec().arch);
  check_set(train_set, model, "training");
  check_set(val_set, model, "validation");

  Adam<float> optimizer(model.trainable_parameters(), {.learning_rate = *cfg.learning_rate,
                                                       .weight_decay = *cfg.weight_decay});
  const auto n = static_cast<std::size_t>(train_set.size());
  const auto batch = static_cast<std::size_t>(cfg.batch_size);

  TrainHistory history;
  std::vector<TensorF> best;
  int since_best = 0;

  for (int epoch = 0; epoch < *cfg.epochs; ++epoch) {
    const auto e = static_cast<std::uint64_t>(epoch);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (cfg.shuffle) {
      Rng shuffler(derive_seed({cfg.seed, e, 0x73687566ULL}));
      shuffler.shuffle(std::span<std::size_t>(order));
    }
    model.rng() = Rng(derive_seed({cfg.seed, e, 0x64726f70ULL}));
    model.set_training(true);

    double loss_sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t start = 0, b = 0; start < n; start += batch, ++b) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(batch, n - start));
      const TensorSet mini = train_set.subset(idx);
      try {
        optimizer.zero_grad();
        const auto logits = model.forward(mini.images);
        const auto loss = cross_entropy(logits, std::span<const int>(mini.labels));
        const double value = loss->value[0];
        if (!std::isfinite(value)) throw NumericError("non-finite loss");
        backward(loss);
        optimizer.step();
        loss_sum += value * static_cast<double>(idx.size());
        const auto predicted = argmax_rows(logits->value);
        for (std::size_t i = 0; i < idx.size(); ++i) hits += predicted[i] == mini.labels[i];
      } catch (const NumericError& err) {
        model.set_training(false);
        throw NumericError("epoch " + std::to_string(epoch + 1) + " batch " + std::to_string(b + 1) + ": " +
                           err.what());
      }
    }
    model.set_training(false);

    EpochStats stats;
    stats.train_loss = loss_sum / static_cast<double>(n);
    stats.train_accuracy = static_cast<double>(hits) / static_cast<double>(n);
    const TensorF val_logits = model.predict(val_set.images);
    stats.val_loss = mean_cross_entropy(val_logits, val_set.labels);
    stats.val_accuracy = accuracy_of(argmax_rows(val_logits), val_set.labels);
    history.epochs.push_back(stats);
    if (on_epoch) on_epoch(epoch, stats);

    if (history.best_epoch < 0 || stats.val_accuracy > history.best_val_accuracy()) {
      history.best_epoch = epoch;
      best = snapshot(model);
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      history.stopped_early = true;
      break;
    }
    if (cfg.target_accuracy && stats.val_accuracy >= *cfg.target_accuracy) {
      history.reached_target = true;
      break;
    }
  }
  restore(model, best);
  return history;
}

MetricsReport evaluate(ModelF& model, const TensorSet& set) {
  if (set.num_classes != model.spec().num_classes)
    throw ConfigurationError("evaluation set has " + std::to_string(set.num_classes) +
                             " classes but the model head has " + std::to_string(model.spec().num_classes));
  std::vector<int> predicted;
  if (set.size() > 0) predicted = argmax_rows(model.predict(set.images));
  return macro_scores(confusion(set.labels, predicted, set.num_classes));
}

}  // namespace micropatch
