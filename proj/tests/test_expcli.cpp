#include <doctest.h>

#include <fstream>

#include "micropatch/error.hpp"
#include "micropatch/experiment.hpp"

using namespace micropatch;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny(const fs::path& out) {
  auto cfg = ExperimentConfig::parse(
      "synthetic.classes = 3\n"
      "synthetic.per_class = 12\n"
      "synthetic.size = 40\n"
      "archs = MLP\n"
      "flag_limits = 10\n"
      "epochs = 1\n"
      "batch_size = 16\n"
      "sigmas = 0.4, 1.6\n");
  cfg.out = out;
  return cfg;
}

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

}  // namespace

TEST_SUITE("expcli") {
  TEST_CASE("config parsing") {
    const auto cfg = ExperimentConfig::parse(
        "# comment\n"
        "archs = CNN, customvit\n"
        "flag_limits = 256, 1024   # trailing comment\n"
        "seed = 7\n"
        "augment = false\n"
        "CustomViT.learning_rate = 3e-4\n"
        "CustomViT.batch_size = 32\n");
    CHECK(cfg.archs == std::vector<Arch>{Arch::CNN, Arch::CustomViT});
    CHECK(cfg.flag_limits == std::vector<std::int64_t>{256, 1024});
    CHECK(cfg.seed == 7);
    CHECK(cfg.probe.seed == 7);
    CHECK_FALSE(cfg.augment);
    CHECK(*cfg.train_config(Arch::CustomViT).learning_rate == 3e-4);
    CHECK(cfg.train_config(Arch::CustomViT).batch_size == 32);
    CHECK(*cfg.train_config(Arch::CustomViT).weight_decay == 0.01);
    CHECK(*cfg.train_config(Arch::CNN).learning_rate == 1e-3);
    CHECK(cfg.train_config(Arch::CNN).seed == 7);
    CHECK(cfg.to_json()["overrides"]["CustomViT"]["learning_rate"] == 3e-4);

    CHECK_THROWS_AS(ExperimentConfig::parse("flag_limits = 1024, 256\n"), ConfigurationError);
    CHECK_THROWS_AS(ExperimentConfig::parse("bogus = 1\n"), ConfigurationError);
    CHECK_THROWS_AS(ExperimentConfig::parse("archs = AlexNet\n"), ConfigurationError);
    CHECK_THROWS_AS(ExperimentConfig::parse("CNN.momentum = 0.9\n"), ConfigurationError);
    CHECK_THROWS_AS(ExperimentConfig::parse("epochs = many\n"), ConfigurationError);
    CHECK_THROWS_AS(ExperimentConfig::parse("just words\n"), ConfigurationError);
  }

  TEST_CASE("prepare follows the closed form and is deterministic") {
    auto cfg = ExperimentConfig::parse("synthetic.classes = 3\nsynthetic.per_class = 30, 8, 2\nsynthetic.size = 40\n");
    const auto source = load_source(cfg);
    const auto a = prepare(source, 20, cfg), b = prepare(source, 20, cfg);
    CHECK(dataset_hash(a.train) == dataset_hash(b.train));
    CHECK(dataset_hash(a.val) == dataset_hash(b.val));
    // the first class is capped at 20; flag_min is 1 so the 2-sample class stays
    CHECK(a.sampled == 20 + 8 + 2);
    CHECK(static_cast<std::int64_t>(a.train.size()) == expected_train_count(source.counts(), 20, cfg));
    CHECK(static_cast<std::int64_t>(a.train.size()) ==
          augmented_count(a.sampled - static_cast<std::int64_t>(a.val.size())));
    CHECK_THROWS_AS(prepare(source, 100000, cfg), DataError);
  }

  TEST_CASE("manifest is written before work and finished after") {
    const auto dir = fs::temp_directory_path() / "micropatch_test_manifest";
    fs::remove_all(dir);
    const auto cfg = tiny(dir);
    RunManifest m(cfg, "unit");
    REQUIRE(fs::exists(m.path()));
    CHECK(m.json()["status"] == "running");
    m.record("hash", 12);
    m.finish("ok");
    std::ifstream in(m.path());
    const auto j = nlohmann::json::parse(in);
    CHECK(j["status"] == "ok");
    CHECK(j["records"]["hash"] == 12);
    CHECK(j["config"]["seed"] == 42);
    CHECK(j.contains("finished_at"));
    fs::remove_all(dir);
  }

  TEST_CASE("one arch and one flag limit give one scaling row") {
    const auto dir = fs::temp_directory_path() / "micropatch_test_scaling";
    const auto cfg = tiny(dir);
    const auto cells = run_scaling(cfg, load_source(cfg));
    REQUIRE(cells.size() == 1);
    CHECK(cells[0].status == "ok");
    write_scaling_csv(dir / "scaling.csv", cells);
    CHECK(line_count(dir / "scaling.csv") == 2);
    const auto back = read_scaling_csv(dir / "scaling.csv");
    CHECK(back[0].arch == Arch::MLP);
    CHECK(back[0].best_epoch == cells[0].best_epoch);
    CHECK(back[0].macro_f1 == doctest::Approx(cells[0].macro_f1));
    CHECK(scaling_svg(cells).find("<polyline") != std::string::npos);

    // a limit that excludes every class fails its cells without stopping the sweep
    auto bad = cfg;
    bad.flag_limits = {10, 100000};
    const auto mixed = run_scaling(bad, load_source(bad));
    REQUIRE(mixed.size() == 2);
    CHECK(mixed[0].status == "ok");
    CHECK(mixed[1].status == "failed");
    fs::remove_all(dir);
  }

  TEST_CASE("job count does not change results") {
    auto cfg = tiny(fs::temp_directory_path());
    cfg.archs = {Arch::MLP, Arch::CNN};
    const auto source = load_source(cfg);
    const auto serial = run_scaling(cfg, source, 1), parallel = run_scaling(cfg, source, 2);
    REQUIRE(serial.size() == parallel.size());
    for (std::size_t i = 0; i < serial.size(); ++i) {
      CHECK(serial[i].arch == parallel[i].arch);
      CHECK(serial[i].macro_f1 == parallel[i].macro_f1);
    }
  }

  TEST_CASE("robustness files: rows per model and round trip") {
    const auto dir = fs::temp_directory_path() / "micropatch_test_robust";
    fs::create_directories(dir);
    auto cfg = tiny(dir);
    cfg.sigmas = kSigmaGrid;
    const auto data = prepare(load_source(cfg), 10, cfg);
    std::vector<RobustnessReport> reports;
    for (int i = 0; i < 2; ++i) {
      auto model = build<float>(ModelSpec::defaults(Arch::MLP, data.train.num_classes()));
      reports.push_back(robustness_sweep(model, data.val, data.mean, cfg.sigmas, cfg.schemes, "m" + std::to_string(i)));
    }
    write_robustness_csv(dir / "r.csv", reports);
    CHECK(line_count(dir / "r.csv") == 1 + 2 * (1 + 2 * 5));
    const auto back = read_robustness_csv(dir / "r.csv");
    REQUIRE(back.size() == 2);
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t k = 0; k < reports[i].slopes.size(); ++k)
        CHECK(back[i].slopes[k].macro_f1_slope == doctest::Approx(reports[i].slopes[k].macro_f1_slope).epsilon(1e-6));

    // sigma grid {0}: every bar equals the clean value
    auto model = build<float>(ModelSpec::defaults(Arch::MLP, data.train.num_classes()));
    const std::vector<double> zero = {0.0};
    const auto clean_only = robustness_sweep(model, data.val, data.mean, zero, cfg.schemes, "z");
    CHECK(clean_only.rows.size() == 1);
    CHECK(robustness_svg({clean_only}, 1.6).find("<rect") != std::string::npos);
    CHECK(slope_svg(reports).find("<svg") == 0);
    fs::remove_all(dir);
  }

  TEST_CASE("timing rows use the single sources of truth") {
    ExperimentConfig cfg;
    cfg.archs = {Arch::CNN, Arch::CustomViT};
    cfg.timing_runs = 3;
    cfg.timing_warmup = 1;
    const auto rows = run_timing(cfg, 16);
    for (const auto& r : rows) {
      CHECK(r.params == param_count(ModelSpec::defaults(r.arch, 16)));
      // float32 data plus a header and a manifest of a few kilobytes
      const auto overhead = r.model_size_bytes - 4 * r.params;
      CHECK(overhead > 16);
      CHECK(overhead < 64 * 1024);
      CHECK(r.timing.samples_ms.size() == 3);
    }
    const auto path = fs::temp_directory_path() / "micropatch_timing.csv";
    write_timing_csv(path, rows);
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header == "arch,mean_ms,median_ms,std_ms,params,model_size_bytes");
    fs::remove(path);
  }
}
