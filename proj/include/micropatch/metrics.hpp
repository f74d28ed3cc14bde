#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "micropatch/archzoo.hpp"

namespace micropatch {

/// counts[t * C + p]: samples of true class t predicted as p.
struct ConfusionMatrix {
  int num_classes = 0;
  std::vector<std::int64_t> counts;

  std::int64_t at(int truth, int predicted) const { return counts[truth * num_classes + predicted]; }
  std::int64_t total() const;
  /// Rows scaled to sum 1 (all-zero rows stay zero).
  std::vector<double> row_normalized() const;
};

/// Throws DataError for labels outside [0, C).
ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> predicted, int num_classes);

struct MetricsReport {
  double accuracy = 0.0;
  std::vector<double> precision, recall, f1;
  std::vector<std::int64_t> support;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  ConfusionMatrix matrix;
};

/// Per-class precision, recall and F1 (zero denominators give 0) and their
/// unweighted means. Throws StatisticsError for a matrix with no classes.
MetricsReport macro_scores(const ConfusionMatrix& cm);

/// Argmax per row of [N, C] logits; ties go to the lowest class.
std::vector<int> argmax_rows(const TensorF& logits);

nlohmann::json metrics_json(const MetricsReport& report);

/// Columns model,stage,accuracy,macro_precision,macro_f1.
void write_metrics_csv(const std::filesystem::path& path, const std::string& model, const std::string& stage,
                       const MetricsReport& report, bool append = false);

struct TimingReport {
  double mean_ms = 0.0;
  double median_ms = 0.0;
  double std_ms = 0.0;
  std::vector<double> samples_ms;
};

/// Summary statistics (population standard deviation) of timing samples.
TimingReport summarize_timings(std::vector<double> samples_ms);

/// Wall-clock per single-sample inference-mode forward: warmup runs are
/// discarded, then runs are measured individually.
TimingReport time_inference(ModelF& model, int runs = 400, int warmup = 20, std::uint64_t seed = 7);

}  // namespace micropatch
