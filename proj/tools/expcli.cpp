// Experiment driver: sampling sweeps, training, robustness, timing, reports.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "micropatch/error.hpp"
#include "micropatch/experiment.hpp"

using namespace micropatch;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kPartial = 1, kConfig = 2, kData = 3 };

struct Options {
  std::string config;
  int jobs = 1;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string features;   // linprobe
  std::string synth_dir;  // synth
  int classes = 16;       // timing
  double sigma = 1.6;     // robustness chart
};

ExperimentConfig resolve(const Options& o) {
  ExperimentConfig cfg = o.config.empty() ? ExperimentConfig{} : ExperimentConfig::load(o.config);
  if (o.seed) cfg.seed = cfg.probe.seed = *o.seed;
  if (!o.out.empty()) cfg.out = o.out;
  cfg.validate();
  return cfg;
}

std::string cell_name(Arch a, std::int64_t limit) { return std::string(arch_name(a)) + "_L" + std::to_string(limit); }

fs::path checkpoint_path(const ExperimentConfig& cfg, Arch a, std::int64_t limit) {
  return cfg.out / "models" / (cell_name(a, limit) + ".ckpt");
}

void log(const std::string& msg) { std::cerr << msg << std::endl; }

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(4);
  s << std::fixed << v;
  return s.str();
}

nlohmann::json counts_json(const Dataset& ds) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [flag, n] : ds.counts()) j[flag] = n;
  return j;
}

int cmd_synth(const ExperimentConfig& cfg, RunManifest& manifest, const Options& o) {
  const fs::path dir = o.synth_dir.empty() ? cfg.out / "synthetic" : fs::path(o.synth_dir);
  const auto ds = generate_synthetic(cfg.synthetic);
  save_dataset(ds, dir);
  manifest.record("dataset_hash", dataset_hash(ds));
  manifest.record("counts", counts_json(ds));
  log("wrote " + std::to_string(ds.size()) + " patches to " + dir.string());
  return kOk;
}

int cmd_prepare(const ExperimentConfig& cfg, RunManifest& manifest) {
  const auto source = load_source(cfg);
  manifest.record("source_hash", dataset_hash(source));
  for (const auto limit : cfg.flag_limits) {
    const auto p = prepare(source, limit, cfg);
    const auto dir = cfg.out / "prepared" / ("L" + std::to_string(limit));
    save_dataset(p.train, dir / "train");
    save_dataset(p.val, dir / "val");
    const auto expected = expected_train_count(source.counts(), limit, cfg);
    manifest.record("L" + std::to_string(limit), {{"sampled", p.sampled},
                                                  {"train", p.train.size()},
                                                  {"train_expected", expected},
                                                  {"val", p.val.size()},
                                                  {"train_hash", dataset_hash(p.train)},
                                                  {"val_hash", dataset_hash(p.val)},
                                                  {"train_counts", counts_json(p.train)}});
    log("flag limit " + std::to_string(limit) + ": sampled " + std::to_string(p.sampled) + ", train " +
        std::to_string(p.train.size()) + " (closed form " + std::to_string(expected) + "), val " +
        std::to_string(p.val.size()));
  }
  return kOk;
}

int cmd_train(const ExperimentConfig& cfg, RunManifest& manifest) {
  const auto source = load_source(cfg);
  manifest.record("source_hash", dataset_hash(source));
  const auto metrics_csv = cfg.out / "metrics.csv";
  bool append = false;
  for (const auto limit : cfg.flag_limits) {
    const auto data = prepare(source, limit, cfg);
    for (Arch a : cfg.archs) {
      const auto name = cell_name(a, limit);
      log("training " + name + " on " + std::to_string(data.train.size()) + " samples");
      auto r = train_cell(a, data, cfg, [&](int e, const EpochStats& s) {
        log("  " + name + " epoch " + std::to_string(e + 1) + " loss " + fmt(s.train_loss) + " val_acc " +
            fmt(s.val_accuracy));
      });
      for (const char* sub : {"models", "history"}) fs::create_directories(cfg.out / sub);
      save_checkpoint(r.model, checkpoint_path(cfg, a, limit));
      write_history_csv(cfg.out / "history" / (name + ".csv"), r.history);
      write_text(cfg.out / "history" / (name + ".json"), history_json(r.history).dump(2) + "\n");
      write_metrics_csv(metrics_csv, std::string(arch_name(a)), "L" + std::to_string(limit), r.report, append);
      append = true;
      manifest.record(name, {{"best_epoch", r.history.best_epoch + 1},
                             {"accuracy", r.report.accuracy},
                             {"macro_f1", r.report.macro_f1},
                             {"train_hash", dataset_hash(data.train)}});
      log(name + ": accuracy " + fmt(r.report.accuracy) + ", macro-F1 " + fmt(r.report.macro_f1));
    }
  }
  return kOk;
}

ModelF load_cell(const ExperimentConfig& cfg, Arch a, std::int64_t limit) {
  const auto path = checkpoint_path(cfg, a, limit);
  if (!fs::exists(path))
    throw CheckpointError("no checkpoint for " + cell_name(a, limit) + " (expected " + path.string() + ")");
  return load_checkpoint(path);
}

int cmd_eval(const ExperimentConfig& cfg, RunManifest& manifest) {
  const auto source = load_source(cfg);
  bool append = false;
  for (const auto limit : cfg.flag_limits) {
    const auto data = prepare(source, limit, cfg);
    const auto val = make_tensor_set(data.val, data.mean);
    for (Arch a : cfg.archs) {
      auto model = load_cell(cfg, a, limit);
      const auto r = evaluate(model, val);
      write_metrics_csv(cfg.out / "eval.csv", std::string(arch_name(a)), "L" + std::to_string(limit), r, append);
      write_text(cfg.out / "eval" / (cell_name(a, limit) + ".json"), metrics_json(r).dump(2) + "\n");
      append = true;
      manifest.record(cell_name(a, limit), {{"accuracy", r.accuracy}, {"macro_f1", r.macro_f1}});
      log(cell_name(a, limit) + ": accuracy " + fmt(r.accuracy) + ", macro-F1 " + fmt(r.macro_f1));
    }
  }
  return kOk;
}

int cmd_linprobe(const ExperimentConfig& cfg, RunManifest& manifest, const Options& o) {
  std::vector<std::pair<std::string, FeatureTable>> tables;
  if (!o.features.empty()) {
    const fs::path path = o.features;
    tables.emplace_back(path.stem().string(),
                        path.extension() == ".csv" ? read_features_csv(path) : load_feature_table(path));
  } else {
    // backbone features of trained checkpoints over the sampled (train + val) split
    const auto source = load_source(cfg);
    for (const auto limit : cfg.flag_limits) {
      auto data = prepare(source, limit, cfg);
      const auto train = make_tensor_set(data.train, data.mean), val = make_tensor_set(data.val, data.mean);
      for (Arch a : cfg.archs) {
        auto model = load_cell(cfg, a, limit);
        auto t = extract_features(model, train);
        const auto v = extract_features(model, val);
        TensorF both(Shape{t.size() + v.size(), t.dim()});
        std::copy_n(t.features.data(), t.features.size(), both.data());
        std::copy_n(v.features.data(), v.features.size(), both.data() + t.features.size());
        t.features = std::move(both);
        t.labels.insert(t.labels.end(), v.labels.begin(), v.labels.end());
        const auto name = cell_name(a, limit);
        fs::create_directories(cfg.out / "features");
        write_features_csv(cfg.out / "features" / (name + ".csv"), t);
        tables.emplace_back(name, std::move(t));
      }
    }
  }
  bool append = false;
  for (const auto& [name, table] : tables) {
    const auto r = linear_probe(table, cfg.probe);
    write_metrics_csv(cfg.out / "linprobe.csv", name, "LP", r.report, append);
    append = true;
    manifest.record(name, {{"accuracy", r.report.accuracy},
                           {"macro_f1", r.report.macro_f1},
                           {"trained_parameters", r.trained_parameters},
                           {"feature_dim", table.dim()}});
    log(name + " linear probe: accuracy " + fmt(r.report.accuracy) + ", macro-F1 " + fmt(r.report.macro_f1) + " (" +
        std::to_string(r.trained_parameters) + " trained parameters)");
  }
  return kOk;
}

int cmd_robustness(const ExperimentConfig& cfg, RunManifest& manifest, const Options& o) {
  const auto source = load_source(cfg);
  std::vector<RobustnessReport> reports;
  nlohmann::json sidecar = nlohmann::json::array();
  for (const auto limit : cfg.flag_limits) {
    const auto data = prepare(source, limit, cfg);
    for (Arch a : cfg.archs) {
      auto model = load_cell(cfg, a, limit);
      const auto name = cfg.flag_limits.size() > 1 ? cell_name(a, limit) : std::string(arch_name(a));
      log("robustness sweep for " + name);
      reports.push_back(robustness_sweep(model, data.val, data.mean, cfg.sigmas, cfg.schemes, name));
      auto j = robustness_json(reports.back());
      j["model"] = name;
      sidecar.push_back(j);
    }
  }
  write_robustness_csv(cfg.out / "robustness.csv", reports);
  write_text(cfg.out / "robustness.json", sidecar.dump(2) + "\n");
  write_text(cfg.out / "robustness.svg", robustness_svg(reports, o.sigma));
  write_text(cfg.out / "slopes.svg", slope_svg(reports));
  manifest.record("rows", reports.size() * (reports.empty() ? 0 : reports.front().rows.size()));
  return kOk;
}

int cmd_scaling(const ExperimentConfig& cfg, RunManifest& manifest, const Options& o) {
  const auto source = load_source(cfg);
  manifest.record("source_hash", dataset_hash(source));
  const auto cells = run_scaling(cfg, source, o.jobs, [](const ScalingCell& c) {
    log(cell_name(c.arch, c.flag_limit) + ": " + c.status + " macro-F1 " + fmt(c.macro_f1) +
        (c.message.empty() ? "" : " (" + c.message + ")"));
  });
  write_scaling_csv(cfg.out / "scaling.csv", cells);
  write_text(cfg.out / "scaling.svg", scaling_svg(cells));
  int bad = 0;
  for (const auto& c : cells) bad += c.status != "ok";
  manifest.record("failed_cells", bad);
  return bad > 0 ? kPartial : kOk;
}

int cmd_timing(const ExperimentConfig& cfg, RunManifest& manifest, const Options& o) {
  const auto rows = run_timing(cfg, o.classes);
  write_timing_csv(cfg.out / "timing.csv", rows);
  for (const auto& r : rows)
    log(std::string(arch_name(r.arch)) + ": " + fmt(r.timing.mean_ms) + " ms (median " + fmt(r.timing.median_ms) +
        ")");
  nlohmann::json samples;
  for (const auto& r : rows) samples[std::string(arch_name(r.arch))] = r.timing.samples_ms;
  write_text(cfg.out / "timing_samples.json", samples.dump() + "\n");
  manifest.record("nondeterministic_columns", {"mean_ms", "median_ms", "std_ms"});
  return kOk;
}

int cmd_report(const ExperimentConfig& cfg, const Options& o) {
  std::ostringstream md;
  md << "# Experiment report\n\n";
  bool any = false;
  if (const auto path = cfg.out / "scaling.csv"; fs::exists(path)) {
    const auto cells = read_scaling_csv(path);
    write_text(cfg.out / "scaling.svg", scaling_svg(cells));
    md << "## Scaling\n\n| arch | flag limit | accuracy | macro-F1 | best epoch | status |\n|---|---|---|---|---|---|\n";
    for (const auto& c : cells)
      md << "| " << arch_name(c.arch) << " | " << c.flag_limit << " | " << fmt(c.accuracy) << " | " << fmt(c.macro_f1)
         << " | " << c.best_epoch + 1 << " | " << c.status << " |\n";
    md << "\n![scaling](scaling.svg)\n\n";
    any = true;
  }
  if (const auto path = cfg.out / "robustness.csv"; fs::exists(path)) {
    const auto reports = read_robustness_csv(path);
    write_text(cfg.out / "robustness.svg", robustness_svg(reports, o.sigma));
    write_text(cfg.out / "slopes.svg", slope_svg(reports));
    md << "## Robustness\n\n| model | scheme | accuracy slope | macro-F1 slope |\n|---|---|---|---|\n";
    for (const auto& r : reports)
      for (const auto& s : r.slopes)
        md << "| " << r.clean().model << " | " << s.scheme << " | " << fmt(s.accuracy_slope) << " | "
           << fmt(s.macro_f1_slope) << " |\n";
    md << "\n![robustness](robustness.svg)\n\n![slopes](slopes.svg)\n\n";
    any = true;
  }
  if (const auto path = cfg.out / "timing.csv"; fs::exists(path)) {
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    md << "## Inference timing\n\n| arch | mean ms | median ms | std ms | params | bytes |\n|---|---|---|---|---|---|\n";
    while (std::getline(in, line)) {
      std::string cell;
      std::stringstream ss(line);
      md << '|';
      while (std::getline(ss, cell, ',')) md << ' ' << cell << " |";
      md << '\n';
    }
    md << '\n';
    any = true;
  }
  if (!any) throw DataError("no scaling.csv, robustness.csv or timing.csv in " + cfg.out.string());
  write_text(cfg.out / "report.md", md.str());
  log("wrote " + (cfg.out / "report.md").string());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"micropatch experiment driver"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  app.add_option("--config", o.config, "flat key = value config file")->check(CLI::ExistingFile);
  app.add_option("--jobs", o.jobs, "concurrent sweep cells (capped by MICROPATCH_THREADS)")->check(CLI::PositiveNumber);
  app.add_option("--seed", o.seed, "override the config seed");
  app.add_option("--out", o.out, "output directory");
  bool list_keys = false;
  app.add_flag("--list-keys", list_keys, "print the accepted config keys and exit");

  auto* synth = app.add_subcommand("synth", "write the synthetic fixture as PNGs plus manifest.csv");
  synth->add_option("--dir", o.synth_dir, "target directory (default <out>/synthetic)");
  app.add_subcommand("prepare", "sample, split and augment per flag limit and save the result");
  app.add_subcommand("train", "train every (arch, flag limit) cell and save checkpoints");
  app.add_subcommand("eval", "evaluate saved checkpoints on their validation split");
  auto* probe = app.add_subcommand("linprobe", "train a linear head on frozen features");
  probe->add_option("--features", o.features, "feature table (.csv or binary); default: extract from checkpoints");
  auto* robust = app.add_subcommand("robustness", "blur sweep over saved checkpoints");
  robust->add_option("--chart-sigma", o.sigma, "sigma shown in the bar chart");
  app.add_subcommand("scaling", "train and evaluate the (arch, flag limit) grid");
  auto* timing = app.add_subcommand("timing", "single-sample inference timing per arch");
  timing->add_option("--classes", o.classes, "head width of the timed models")->check(CLI::PositiveNumber);
  auto* report = app.add_subcommand("report", "tables and charts from the CSVs in the output directory");
  report->add_option("--chart-sigma", o.sigma, "sigma shown in the bar chart");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    if (list_keys) {
      for (const auto& [key, what] : config_keys()) std::cout << key << "\t" << what << "\n";
      return kOk;
    }
    app.exit(e);
    return kConfig;
  }

  const auto* sub = app.get_subcommands().front();
  const std::string command = sub->get_name();
  try {
    const auto cfg = resolve(o);
    RunManifest manifest(cfg, command);
    int code = kOk;
    try {
      if (command == "synth") code = cmd_synth(cfg, manifest, o);
      else if (command == "prepare") code = cmd_prepare(cfg, manifest);
      else if (command == "train") code = cmd_train(cfg, manifest);
      else if (command == "eval") code = cmd_eval(cfg, manifest);
      else if (command == "linprobe") code = cmd_linprobe(cfg, manifest, o);
      else if (command == "robustness") code = cmd_robustness(cfg, manifest, o);
      else if (command == "scaling") code = cmd_scaling(cfg, manifest, o);
      else if (command == "timing") code = cmd_timing(cfg, manifest, o);
      else if (command == "report") code = cmd_report(cfg, o);
    } catch (...) {
      manifest.finish("error");
      throw;
    }
    manifest.finish(code == kOk ? "ok" : "partial");
    return code;
  } catch (const ConfigurationError& e) {
    std::cerr << command << ": configuration error: " << e.what() << "\n";
    return kConfig;
  } catch (const DataError& e) {
    std::cerr << command << ": data error: " << e.what() << "\n";
    return kData;
  } catch (const CheckpointError& e) {
    std::cerr << command << ": checkpoint error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << command << ": " << e.what() << "\n";
    return kPartial;
  }
}
