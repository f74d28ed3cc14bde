#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "micropatch/archzoo.hpp"
#include "micropatch/metrics.hpp"

namespace micropatch {

/// Model-ready samples: a whitened [N, 3, 40, 40] tensor plus labels.
struct TensorSet {
  TensorF images;
  std::vector<int> labels;
  int num_classes = 0;

  Index size() const { return static_cast<Index>(labels.size()); }

  /// Rows at the given indices, in that order.
  TensorSet subset(std::span<const std::size_t> indices) const;
};

struct TrainConfig {
  // Unset fields take the per-architecture defaults in resolve().
  std::optional<double> learning_rate;
  std::optional<double> weight_decay;
  std::optional<int> epochs;
  int batch_size = 512;
  int patience = 10;
  std::uint64_t seed = 42;
  bool shuffle = true;
  /// Stop as soon as validation accuracy reaches this value.
  std::optional<double> target_accuracy;

  /// Copy with every optional hyperparameter filled for arch.
  TrainConfig resolve(Arch arch) const;
  /// Throws ConfigurationError when a field is out of range.
  void validate() const;

  nlohmann::json to_json() const;
};

struct EpochStats {
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;

  friend bool operator==(const EpochStats&, const EpochStats&) = default;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  int best_epoch = -1;  // 0-based index into epochs
  bool stopped_early = false;
  bool reached_target = false;

  double best_val_accuracy() const { return best_epoch < 0 ? 0.0 : epochs[best_epoch].val_accuracy; }

  friend bool operator==(const TrainHistory&, const TrainHistory&) = default;
};

nlohmann::json history_json(const TrainHistory& history);
/// Columns epoch,train_loss,train_accuracy,val_loss,val_accuracy.
void write_history_csv(const std::filesystem::path& path, const TrainHistory& history);

using EpochCallback = std::function<void(int epoch, const EpochStats& stats)>;

/// Mini-batch Adam with early stopping on validation accuracy. On return the
/// model holds the best snapshot (earliest epoch on ties). A non-finite loss
/// throws NumericError naming the epoch and batch.
TrainHistory train(ModelF& model, const TensorSet& train_set, const TensorSet& val_set, const TrainConfig& cfg,
                   const EpochCallback& on_epoch = {});

/// Inference-mode metrics. Throws ConfigurationError when the model head and
/// the set disagree on the class count.
MetricsReport evaluate(ModelF& model, const TensorSet& set);

// ---- linear probe -----------------------------------------------------------

struct FeatureTable {
  TensorF features;  // [N, d]
  std::vector<int> labels;
  int num_classes = 0;

  Index size() const { return static_cast<Index>(labels.size()); }
  Index dim() const { return features.empty() ? 0 : features.dim(1); }

  /// Throws DataError on a row-count or label-range mismatch.
  void validate() const;
};

FeatureTable extract_features(ModelF& model, const TensorSet& set);

/// Header label,f0,...,f{d-1}. Reading throws DataError on ragged rows.
void write_features_csv(const std::filesystem::path& path, const FeatureTable& table);
FeatureTable read_features_csv(const std::filesystem::path& path, int num_classes = 0);

struct ProbeConfig {
  double learning_rate = 5e-4;
  int batch_size = 256;
  int epochs = 50;
  double train_fraction = 0.8;
  std::uint64_t seed = 42;
};

struct LinearHead {
  TensorF weight;  // [d, C]
  TensorF bias;    // [C]

  TensorF logits(const TensorF& features) const;
};

struct ProbeResult {
  LinearHead head;
  MetricsReport report;  // on the held-out split
  std::int64_t trained_parameters = 0;
};

/// Trains a single d -> C linear layer on a stratified split of the table.
/// The table itself is never modified.
ProbeResult linear_probe(const FeatureTable& table, const ProbeConfig& cfg = {});

// ---- checkpoints ------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// "MPCK", u32 version, u64 manifest length, JSON manifest (spec, names,
/// shapes, offsets), then little-endian float32 tensors in manifest order.
void save_checkpoint(const ModelF& model, const std::filesystem::path& path);
ModelF load_checkpoint(const std::filesystem::path& path);

std::vector<std::uint8_t> checkpoint_bytes(const ModelF& model);
ModelF checkpoint_from_bytes(std::span<const std::uint8_t> bytes);

/// Size of the checkpoint file save_checkpoint would write.
std::int64_t model_size_bytes(const ModelF& model);

void save_feature_table(const FeatureTable& table, const std::filesystem::path& path);
FeatureTable load_feature_table(const std::filesystem::path& path);

}  // namespace micropatch
