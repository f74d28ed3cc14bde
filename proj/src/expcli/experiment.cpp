#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "micropatch/error.hpp"
#include "micropatch/experiment.hpp"

namespace micropatch {

namespace {

std::vector<std::string> csv_fields(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(item);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path, const std::string& header) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line.rfind(header, 0) != 0)
    throw DataError("'" + path.string() + "' does not start with header '" + header + "'");
  const auto width = csv_fields(header).size();
  std::vector<std::vector<std::string>> rows;
  int number = 1;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto f = csv_fields(line);
    if (f.size() < width) throw DataError(path.string() + " row " + std::to_string(number) + ": too few fields");
    rows.push_back(std::move(f));
  }
  return rows;
}

double parse_number(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || *end != '\0') throw DataError("'" + s + "' is not a number");
  return v;
}

}  // namespace

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << text;
}

Dataset load_source(const ExperimentConfig& cfg) {
  if (!cfg.dataset.empty()) return load_dataset(cfg.dataset);
  return generate_synthetic(cfg.synthetic);
}

Prepared prepare(const Dataset& source, std::int64_t flag_limit, const ExperimentConfig& cfg) {
  Prepared p;
  p.flag_limit = flag_limit;
  const auto sampled = class_balanced_sample(source, {flag_limit, cfg.seed});
  p.sampled = static_cast<std::int64_t>(sampled.size());
  auto split = stratified_split(sampled, cfg.train_fraction, cfg.seed);
  p.train = cfg.augment ? augment(split.train, cfg.seed) : std::move(split.train);
  p.val = std::move(split.val);
  p.mean = dataset_mean(p.train);
  return p;
}

std::int64_t expected_train_count(const std::map<std::string, std::int64_t>& counts, std::int64_t flag_limit,
                                  const ExperimentConfig& cfg) {
  std::int64_t train = 0;
  for (const auto& [flag, n] : balanced_counts(counts, {flag_limit, cfg.seed}))
    train += std::max<std::int64_t>(1, static_cast<std::int64_t>(std::floor(cfg.train_fraction * n + 1e-9)));
  return cfg.augment ? augmented_count(train) : train;
}

CellResult train_cell(Arch arch, const Prepared& data, const ExperimentConfig& cfg, const EpochCallback& on_epoch) {
  const auto tr = make_tensor_set(data.train, data.mean);
  const auto va = make_tensor_set(data.val, data.mean);
  auto spec = ModelSpec::defaults(arch, data.train.num_classes());
  spec.init_seed = cfg.seed;
  CellResult r{build<float>(spec), {}, {}};
  r.history = train(r.model, tr, va, cfg.train_config(arch), on_epoch);
  r.report = evaluate(r.model, va);
  return r;
}

int effective_jobs(int requested) {
  int jobs = std::max(1, requested);
  if (const char* env = std::getenv("MICROPATCH_THREADS")) {
    const int cap = std::atoi(env);
    if (cap >= 1) jobs = std::min(jobs, cap);
  }
  return jobs;
}

std::vector<ScalingCell> run_scaling(const ExperimentConfig& cfg, const Dataset& source, int jobs,
                                     const std::function<void(const ScalingCell&)>& on_cell) {
  std::vector<ScalingCell> cells;
  std::mutex report_mutex;
  for (const auto limit : cfg.flag_limits) {
    const std::size_t first = cells.size();
    for (Arch a : cfg.archs) {
      ScalingCell cell;
      cell.arch = a;
      cell.flag_limit = limit;
      cells.push_back(std::move(cell));
    }

    std::optional<TensorSet> tr, va;
    try {
      const auto data = prepare(source, limit, cfg);
      tr = make_tensor_set(data.train, data.mean);
      va = make_tensor_set(data.val, data.mean);
    } catch (const std::exception& e) {
      for (std::size_t i = first; i < cells.size(); ++i) {
        cells[i].status = "failed";
        cells[i].message = e.what();
        if (on_cell) on_cell(cells[i]);
      }
      continue;
    }

    std::atomic<std::size_t> next{first};
    auto worker = [&] {
      for (std::size_t i = next++; i < cells.size(); i = next++) {
        auto& cell = cells[i];
        try {
          auto spec = ModelSpec::defaults(cell.arch, tr->num_classes);
          spec.init_seed = cfg.seed;
          auto model = build<float>(spec);
          const auto history = train(model, *tr, *va, cfg.train_config(cell.arch));
          const auto report = evaluate(model, *va);
          cell.accuracy = report.accuracy;
          cell.macro_f1 = report.macro_f1;
          cell.best_epoch = history.best_epoch;
        } catch (const NumericError& e) {
          cell.status = "aborted";
          cell.message = e.what();
        } catch (const std::exception& e) {
          cell.status = "failed";
          cell.message = e.what();
        }
        if (on_cell) {
          std::lock_guard lock(report_mutex);
          on_cell(cell);
        }
      }
    };
    const int n = std::min<int>(effective_jobs(jobs), static_cast<int>(cfg.archs.size()));
    if (n <= 1) {
      worker();
    } else {
      std::vector<std::jthread> pool;
      for (int t = 0; t < n; ++t) pool.emplace_back(worker);
    }
  }
  return cells;
}

void write_scaling_csv(const std::filesystem::path& path, const std::vector<ScalingCell>& cells) {
  std::ostringstream out;
  out.precision(10);
  out << "arch,flag_limit,accuracy,macro_f1,best_epoch,status\n";
  for (const auto& c : cells)
    out << arch_name(c.arch) << ',' << c.flag_limit << ',' << c.accuracy << ',' << c.macro_f1 << ','
        << c.best_epoch + 1 << ',' << c.status << '\n';
  write_text(path, out.str());
}

std::vector<ScalingCell> read_scaling_csv(const std::filesystem::path& path) {
  std::vector<ScalingCell> cells;
  for (const auto& f : read_csv(path, "arch,flag_limit,accuracy,macro_f1,best_epoch")) {
    ScalingCell c;
    c.arch = parse_arch(f[0]);
    c.flag_limit = static_cast<std::int64_t>(parse_number(f[1]));
    c.accuracy = parse_number(f[2]);
    c.macro_f1 = parse_number(f[3]);
    c.best_epoch = static_cast<int>(parse_number(f[4])) - 1;
    if (f.size() > 5) c.status = f[5];
    cells.push_back(std::move(c));
  }
  return cells;
}

std::string scaling_svg(const std::vector<ScalingCell>& cells) {
  std::vector<ChartSeries> series;
  for (const auto& c : cells) {
    if (c.status != "ok") continue;
    const std::string name(arch_name(c.arch));
    auto it = std::find_if(series.begin(), series.end(), [&](const auto& s) { return s.name == name; });
    if (it == series.end()) it = series.insert(series.end(), ChartSeries{name, {}});
    it->points.emplace_back(std::log2(static_cast<double>(c.flag_limit)), c.macro_f1);
  }
  return line_chart_svg("Macro-F1 against training-set size", "log2(flag limit)", "macro-F1", series);
}

std::string robustness_svg(const std::vector<RobustnessReport>& reports, double sigma) {
  std::vector<BarGroup> groups;
  for (const auto& r : reports) {
    BarGroup g{r.clean().model, {r.clean().macro_f1}};
    for (const char* scheme : {"post", "pre"}) {
      try {
        g.values.push_back(r.at(scheme, sigma).macro_f1);
      } catch (const std::out_of_range&) {
        g.values.push_back(0.0);
      }
    }
    groups.push_back(std::move(g));
  }
  std::ostringstream title;
  title << "Macro-F1 clean and blurred (sigma = " << sigma << ")";
  return bar_chart_svg(title.str(), "macro-F1", {"clean", "post", "pre"}, groups);
}

std::string slope_svg(const std::vector<RobustnessReport>& reports) {
  std::vector<BarGroup> groups;
  std::vector<std::string> names;
  for (const auto& r : reports) {
    BarGroup g{r.clean().model, {}};
    for (const auto& s : r.slopes) {
      if (std::find(names.begin(), names.end(), s.scheme) == names.end()) names.push_back(s.scheme);
      g.values.push_back(s.macro_f1_slope);
    }
    groups.push_back(std::move(g));
  }
  return bar_chart_svg("Macro-F1 drop slope against log2(1 + sigma)", "slope", names, groups);
}

std::vector<RobustnessReport> read_robustness_csv(const std::filesystem::path& path) {
  std::vector<RobustnessReport> reports;
  for (const auto& f : read_csv(path, "model,scheme,sigma,accuracy,macro_f1,delta_accuracy,delta_macro_f1")) {
    RobustnessRow row{f[0], f[1], parse_number(f[2]), parse_number(f[3]), parse_number(f[4]), parse_number(f[5]),
                      parse_number(f[6])};
    if (row.scheme == "clean" || reports.empty() || reports.back().rows.front().model != row.model)
      reports.emplace_back();
    reports.back().rows.push_back(std::move(row));
  }
  for (auto& r : reports) {
    std::vector<std::string> schemes;
    for (const auto& row : r.rows)
      if (row.scheme != "clean" && std::find(schemes.begin(), schemes.end(), row.scheme) == schemes.end())
        schemes.push_back(row.scheme);
    for (const auto& scheme : schemes) {
      std::vector<BlurPoint> acc{{0.0, r.clean().accuracy}}, f1{{0.0, r.clean().macro_f1}};
      for (const auto& row : r.rows)
        if (row.scheme == scheme) {
          acc.push_back({row.sigma, row.accuracy});
          f1.push_back({row.sigma, row.macro_f1});
        }
      r.slopes.push_back({scheme, drop_slope(acc), drop_slope(f1)});
    }
  }
  return reports;
}

std::vector<TimingRow> run_timing(const ExperimentConfig& cfg, int num_classes) {
  std::vector<TimingRow> rows;
  for (Arch a : cfg.archs) {
    auto model = build<float>(ModelSpec::defaults(a, num_classes));
    rows.push_back({a, time_inference(model, cfg.timing_runs, cfg.timing_warmup, cfg.seed), param_count(model),
                    model_size_bytes(model)});
  }
  return rows;
}

void write_timing_csv(const std::filesystem::path& path, const std::vector<TimingRow>& rows) {
  std::ostringstream out;
  out.precision(6);
  out << "arch,mean_ms,median_ms,std_ms,params,model_size_bytes\n";
  for (const auto& r : rows)
    out << arch_name(r.arch) << ',' << r.timing.mean_ms << ',' << r.timing.median_ms << ',' << r.timing.std_ms << ','
        << r.params << ',' << r.model_size_bytes << '\n';
  write_text(path, out.str());
}

}  // namespace micropatch
