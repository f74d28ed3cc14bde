#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "micropatch/archzoo.hpp"
#include "micropatch/datapipe.hpp"
#include "micropatch/metrics.hpp"
#include "micropatch/perturb.hpp"
#include "micropatch/synthetic.hpp"
#include "micropatch/trainer.hpp"

namespace micropatch {

std::string_view version();

struct ArchOverrides {
  std::optional<double> learning_rate;
  std::optional<double> weight_decay;
  std::optional<int> epochs;
  std::optional<int> batch_size;
};

/// Experiment settings read from a flat `key = value` file. Lists are comma
/// separated, `#` starts a comment. Keys are listed in config_keys().
struct ExperimentConfig {
  std::filesystem::path dataset;  // empty: the synthetic generator
  SyntheticConfig synthetic;
  std::vector<Arch> archs{kAllArchs.begin(), kAllArchs.end()};
  std::vector<std::int64_t> flag_limits = {256};
  std::vector<double> sigmas = kSigmaGrid;
  std::vector<BlurScheme> schemes = {BlurScheme::pre, BlurScheme::post};
  std::uint64_t seed = 42;
  double train_fraction = 0.8;
  bool augment = true;
  TrainConfig train;
  std::map<Arch, ArchOverrides> overrides;
  int timing_runs = 400;
  int timing_warmup = 20;
  ProbeConfig probe;
  std::filesystem::path out = "runs";

  /// Training settings for one architecture: global values, then its overrides.
  TrainConfig train_config(Arch arch) const;

  /// Throws ConfigurationError.
  void validate() const;
  nlohmann::json to_json() const;

  static ExperimentConfig parse(std::string_view text);
  static ExperimentConfig load(const std::filesystem::path& path);
};

/// (key, description) for every accepted config key; `<Arch>.<field>` keys are
/// per-architecture overrides.
const std::vector<std::pair<std::string, std::string>>& config_keys();

/// Writes `manifest_<command>.json` into the output directory when created and
/// again on finish(). Holds the resolved config, seeds, design flags, version,
/// timestamps and any recorded facts (such as dataset hashes).
class RunManifest {
 public:
  RunManifest(const ExperimentConfig& cfg, std::string command);

  void record(const std::string& key, nlohmann::json value);
  void finish(const std::string& status);

  const std::filesystem::path& path() const { return path_; }
  const nlohmann::json& json() const { return doc_; }

 private:
  void write() const;

  std::filesystem::path path_;
  nlohmann::json doc_;
};

/// Loads cfg.dataset, or generates the synthetic fixture when it is empty.
Dataset load_source(const ExperimentConfig& cfg);

struct Prepared {
  std::int64_t flag_limit = 0;
  Dataset train;  // augmented when cfg.augment
  Dataset val;
  TensorF mean;   // whitening mean of train at model resolution
  std::int64_t sampled = 0;
};

/// sample -> stratified split -> augment (train only) -> whitening mean.
Prepared prepare(const Dataset& source, std::int64_t flag_limit, const ExperimentConfig& cfg);

/// Training-set size prepare() yields for the given source counts.
std::int64_t expected_train_count(const std::map<std::string, std::int64_t>& counts, std::int64_t flag_limit,
                                  const ExperimentConfig& cfg);

struct CellResult {
  ModelF model;
  TrainHistory history;
  MetricsReport report;  // validation metrics of the restored best model
};

CellResult train_cell(Arch arch, const Prepared& data, const ExperimentConfig& cfg,
                      const EpochCallback& on_epoch = {});

// ---- scaling sweep ------------------------------------------------------------

struct ScalingCell {
  Arch arch = Arch::CNN;
  std::int64_t flag_limit = 0;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  int best_epoch = -1;
  std::string status = "ok";  // ok, aborted (non-finite training) or failed
  std::string message;
};

/// Worker count: requested (at least 1), capped by MICROPATCH_THREADS.
int effective_jobs(int requested);

/// Trains and evaluates every (arch, flag-limit) cell. A failing cell is
/// recorded and the sweep continues. Results are in (flag-limit, arch) order
/// whatever the job count.
std::vector<ScalingCell> run_scaling(const ExperimentConfig& cfg, const Dataset& source, int jobs = 1,
                                     const std::function<void(const ScalingCell&)>& on_cell = {});

/// Columns arch,flag_limit,accuracy,macro_f1,best_epoch,status.
void write_scaling_csv(const std::filesystem::path& path, const std::vector<ScalingCell>& cells);
std::vector<ScalingCell> read_scaling_csv(const std::filesystem::path& path);
/// Macro-F1 against log2(flag-limit), one line per architecture.
std::string scaling_svg(const std::vector<ScalingCell>& cells);

// ---- robustness and timing -----------------------------------------------------

/// Grouped bars (clean, post, pre) of macro-F1 per model at sigma.
std::string robustness_svg(const std::vector<RobustnessReport>& reports, double sigma);
/// Macro-F1 drop slopes per model and scheme; degradation is negative.
std::string slope_svg(const std::vector<RobustnessReport>& reports);
std::vector<RobustnessReport> read_robustness_csv(const std::filesystem::path& path);

struct TimingRow {
  Arch arch = Arch::CNN;
  TimingReport timing;
  std::int64_t params = 0;
  std::int64_t model_size_bytes = 0;
};

std::vector<TimingRow> run_timing(const ExperimentConfig& cfg, int num_classes);
/// Columns arch,mean_ms,median_ms,std_ms,params,model_size_bytes.
void write_timing_csv(const std::filesystem::path& path, const std::vector<TimingRow>& rows);

// ---- plain SVG charts ------------------------------------------------------------

struct ChartSeries {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

std::string line_chart_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<ChartSeries>& series);

struct BarGroup {
  std::string label;
  std::vector<double> values;  // one per series name
};

std::string bar_chart_svg(const std::string& title, const std::string& y_label,
                          const std::vector<std::string>& series_names, const std::vector<BarGroup>& groups);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace micropatch
