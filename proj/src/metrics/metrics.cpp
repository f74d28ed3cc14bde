#include "micropatch/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "micropatch/error.hpp"

namespace micropatch {

std::int64_t ConfusionMatrix::total() const { return std::accumulate(counts.begin(), counts.end(), std::int64_t{0}); }

std::vector<double> ConfusionMatrix::row_normalized() const {
  std::vector<double> out(counts.size(), 0.0);
  for (int t = 0; t < num_classes; ++t) {
    std::int64_t row = 0;
    for (int p = 0; p < num_classes; ++p) row += at(t, p);
    if (row == 0) continue;
    for (int p = 0; p < num_classes; ++p) out[t * num_classes + p] = static_cast<double>(at(t, p)) / row;
  }
  return out;
}

ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> predicted, int num_classes) {
  if (truth.size() != predicted.size()) throw DataError("confusion: label and prediction counts differ");
  if (num_classes < 0) throw DataError("confusion: negative class count");
  ConfusionMatrix cm{num_classes, std::vector<std::int64_t>(static_cast<std::size_t>(num_classes) * num_classes, 0)};
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = truth[i], p = predicted[i];
    if (t < 0 || t >= num_classes || p < 0 || p >= num_classes)
      throw DataError("confusion: label out of range at sample " + std::to_string(i));
    ++cm.counts[t * num_classes + p];
  }
  return cm;
}

MetricsReport macro_scores(const ConfusionMatrix& cm) {
  const int c = cm.num_classes;
  if (c <= 0) throw StatisticsError("macro_scores: empty confusion matrix");
  MetricsReport r;
  r.matrix = cm;
  r.precision.assign(c, 0.0);
  r.recall.assign(c, 0.0);
  r.f1.assign(c, 0.0);
  r.support.assign(c, 0);
  std::int64_t diagonal = 0;
  for (int k = 0; k < c; ++k) {
    std::int64_t row = 0, col = 0;
    for (int j = 0; j < c; ++j) {
      row += cm.at(k, j);
      col += cm.at(j, k);
    }
    const auto hit = static_cast<double>(cm.at(k, k));
    diagonal += cm.at(k, k);
    r.support[k] = row;
    r.precision[k] = col > 0 ? hit / static_cast<double>(col) : 0.0;
    r.recall[k] = row > 0 ? hit / static_cast<double>(row) : 0.0;
    const double sum = r.precision[k] + r.recall[k];
    r.f1[k] = sum > 0.0 ? 2.0 * r.precision[k] * r.recall[k] / sum : 0.0;
  }
  const double n = static_cast<double>(c);
  r.macro_precision = std::accumulate(r.precision.begin(), r.precision.end(), 0.0) / n;
  r.macro_recall = std::accumulate(r.recall.begin(), r.recall.end(), 0.0) / n;
  r.macro_f1 = std::accumulate(r.f1.begin(), r.f1.end(), 0.0) / n;
  const auto total = cm.total();
  r.accuracy = total > 0 ? static_cast<double>(diagonal) / static_cast<double>(total) : 0.0;
  return r;
}

std::vector<int> argmax_rows(const TensorF& logits) {
  if (logits.rank() != 2) throw DimensionError("argmax_rows expects [N, C] logits");
  const auto m = logits.as_rows();
  std::vector<int> out(static_cast<std::size_t>(m.rows()));
  for (Index i = 0; i < m.rows(); ++i) {
    Index best;
    m.row(i).maxCoeff(&best);
    out[i] = static_cast<int>(best);
  }
  return out;
}

nlohmann::json metrics_json(const MetricsReport& r) {
  return {{"accuracy", r.accuracy},
          {"macro_precision", r.macro_precision},
          {"macro_recall", r.macro_recall},
          {"macro_f1", r.macro_f1},
          {"precision", r.precision},
          {"recall", r.recall},
          {"f1", r.f1},
          {"support", r.support},
          {"confusion", {{"num_classes", r.matrix.num_classes}, {"counts", r.matrix.counts}}}};
}

void write_metrics_csv(const std::filesystem::path& path, const std::string& model, const std::string& stage,
                       const MetricsReport& r, bool append) {
  const bool header = !append || !std::filesystem::exists(path);
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  if (header) out << "model,stage,accuracy,macro_precision,macro_f1\n";
  out.precision(10);
  out << model << ',' << stage << ',' << r.accuracy << ',' << r.macro_precision << ',' << r.macro_f1 << '\n';
}

TimingReport summarize_timings(std::vector<double> samples) {
  TimingReport r;
  r.samples_ms = samples;
  if (samples.empty()) return r;
  const double n = static_cast<double>(samples.size());
  r.mean_ms = std::accumulate(samples.begin(), samples.end(), 0.0) / n;
  double sq = 0.0;
  for (double s : samples) sq += (s - r.mean_ms) * (s - r.mean_ms);
  r.std_ms = std::sqrt(sq / n);
  std::sort(samples.begin(), samples.end());
  const std::size_t mid = samples.size() / 2;
  r.median_ms = samples.size() % 2 ? samples[mid] : 0.5 * (samples[mid - 1] + samples[mid]);
  return r;
}

TimingReport time_inference(ModelF& model, int runs, int warmup, std::uint64_t seed) {
  const auto& spec = model.spec();
  TensorF input(Shape{1, spec.channels, spec.input_size, spec.input_size});
  Rng rng(seed);
  for (auto& v : input.values()) v = static_cast<float>(rng.uniform(-0.5, 0.5));
  for (int i = 0; i < warmup; ++i) model.predict(input);
  std::vector<double> samples;
  samples.reserve(static_cast<std::size_t>(std::max(runs, 0)));
  for (int i = 0; i < runs; ++i) {
    const auto start = std::chrono::steady_clock::now();
    model.predict(input);
    samples.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count());
  }
  return summarize_timings(std::move(samples));
}

}  // namespace micropatch
