#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "micropatch/datapipe.hpp"
#include "micropatch/error.hpp"
#include "micropatch/rng.hpp"
#include "micropatch/synthetic.hpp"

using namespace micropatch;
namespace fs = std::filesystem;

namespace {

Image noise_image(int size, std::uint64_t seed) {
  Rng rng(seed);
  Image img(size, size);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.index(256));
  return img;
}

Dataset with_counts(const std::map<std::string, std::int64_t>& counts) {
  std::vector<LabeledPatch> patches;
  for (const auto& [flag, n] : counts)
    for (std::int64_t i = 0; i < n; ++i) patches.push_back({Image(1, 1), flag, "s", flag + std::to_string(i), {}});
  return Dataset::from_patches(std::move(patches));
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("micropatch_test_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_manifest(const fs::path& dir, const std::string& body) {
  std::ofstream(dir / "manifest.csv") << "path,flag,source_id\n" << body;
}

}  // namespace

TEST_SUITE("datapipe") {
  TEST_CASE("png round trip") {
    TempDir dir("png");
    const auto img = noise_image(41, 3);
    write_png(dir.path / "a.png", img);
    CHECK(read_png(dir.path / "a.png") == img);
  }

  TEST_CASE("load_dataset examples and errors") {
    TempDir dir("load");
    for (int i = 0; i < 3; ++i) write_png(dir.path / ("p" + std::to_string(i) + ".png"), noise_image(40, i));
    write_manifest(dir.path, "p0.png,a,s1\np1.png,b,s1\np2.png,a,s2\n");
    const auto ds = load_dataset(dir.path);
    CHECK(ds.size() == 3);
    CHECK(ds.counts() == std::map<std::string, std::int64_t>{{"a", 2}, {"b", 1}});
    CHECK(ds.classes == std::vector<std::string>{"a", "b"});
    CHECK(ds.patches[1].flag == "b");

    write_manifest(dir.path, "");
    CHECK(load_dataset(dir.path).empty());

    // rows are file line numbers; the header is line 1
    write_png(dir.path / "small.png", noise_image(30, 9));
    write_manifest(dir.path, "p0.png,a,s\nsmall.png,a,s\n");
    try {
      load_dataset(dir.path);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("row 3") != std::string::npos);
    }

    write_manifest(dir.path, "missing.png,a,s\n");
    CHECK_THROWS_AS(load_dataset(dir.path), DataError);
    write_png(dir.path / "rect.png", Image(40, 48));
    write_manifest(dir.path, "rect.png,a,s\n");
    CHECK_THROWS_AS(load_dataset(dir.path), DataError);
    write_manifest(dir.path, "p0.png,a\n");
    CHECK_THROWS_AS(load_dataset(dir.path), DataError);
  }

  TEST_CASE("save then load reproduces the dataset hash") {
    TempDir dir("save");
    SyntheticConfig cfg;
    cfg.num_classes = 3;
    cfg.per_class = {4};
    cfg.size = 48;
    const auto ds = generate_synthetic(cfg);
    save_dataset(ds, dir.path);
    const auto back = load_dataset(dir.path);
    REQUIRE(back.size() == ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
      CHECK(back.patches[i].image == ds.patches[i].image);
      CHECK(back.patches[i].flag == ds.patches[i].flag);
    }
  }

  TEST_CASE("class_balanced_sample examples") {
    const auto ds = with_counts({{"a", 300}, {"b", 10}, {"c", 500}});
    const SamplingConfig cfg{256, 42};
    CHECK(cfg.flag_min() == 13);
    const auto out = class_balanced_sample(ds, cfg);
    CHECK(out.counts() == std::map<std::string, std::int64_t>{{"a", 256}, {"c", 256}});
    CHECK(balanced_counts(ds.counts(), cfg) == out.counts());
    const auto again = class_balanced_sample(ds, cfg);
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out.patches[i].id == again.patches[i].id);

    CHECK(class_balanced_sample(with_counts({{"a", 100}}), cfg).size() == 100);
    CHECK_THROWS_AS(class_balanced_sample(with_counts({{"a", 3}}), cfg), DataError);
  }

  TEST_CASE("class_balanced_sample contract over random count vectors") {
    Rng rng(77);
    for (int trial = 0; trial < 200; ++trial) {
      const auto limit = kFlagLimits[rng.index(3)];
      std::map<std::string, std::int64_t> counts;
      const int classes = 1 + static_cast<int>(rng.index(6));
      for (int c = 0; c < classes; ++c) counts["f" + std::to_string(c)] = static_cast<std::int64_t>(rng.index(700));
      const SamplingConfig cfg{limit, static_cast<std::uint64_t>(trial)};
      const auto expected = balanced_counts(counts, cfg);
      if (expected.empty()) continue;
      const auto out = class_balanced_sample(with_counts(counts), cfg);
      for (const auto& [flag, n] : out.counts()) {
        CHECK(n <= limit);
        CHECK(counts[flag] >= cfg.flag_min());
        CHECK(n == std::min(counts[flag], limit));
      }
    }
  }

  TEST_CASE("stratified_split examples and invariants") {
    const auto ds = with_counts({{"a", 10}, {"b", 5}, {"c", 2}});
    const auto split = stratified_split(ds);
    CHECK(split.train.counts() == std::map<std::string, std::int64_t>{{"a", 8}, {"b", 4}, {"c", 1}});
    CHECK(split.val.counts() == std::map<std::string, std::int64_t>{{"a", 2}, {"b", 1}, {"c", 1}});
    std::set<std::string> ids;
    for (const auto& p : split.train.patches) ids.insert(p.id);
    for (const auto& p : split.val.patches) CHECK(ids.insert(p.id).second);
    CHECK(ids.size() == ds.size());

    const auto again = stratified_split(ds);
    for (std::size_t i = 0; i < split.val.size(); ++i) CHECK(split.val.patches[i].id == again.val.patches[i].id);
    CHECK_THROWS_AS(stratified_split(with_counts({{"a", 5}, {"solo", 1}})), DataError);
  }

  TEST_CASE("augmentation arithmetic") {
    CHECK(augmented_count(100) == 960);
    for (std::int64_t n : {10, 100, 1000}) CHECK(augmented_count(n) * 10 == 96 * n);
    CHECK(augmented_count(7) == 4 * (7 + 1 + 2 + 3 + 1 + 1));

    SyntheticConfig cfg;
    cfg.num_classes = 2;
    cfg.per_class = {5};
    cfg.size = 40;
    const auto ds = generate_synthetic(cfg);
    const auto aug = augment(ds, 3);
    CHECK(static_cast<std::int64_t>(aug.size()) == augmented_count(10));
    CHECK(aug.patches[0].tags.empty());
    CHECK(aug.patches[0].image == ds.patches[0].image);
    const auto again = augment(ds, 3);
    CHECK(dataset_hash(aug) == dataset_hash(again));
  }

  TEST_CASE("geometric transforms are bijections") {
    const auto img = noise_image(9, 1);
    CHECK(flip_horizontal(flip_horizontal(img)) == img);
    CHECK(flip_vertical(flip_vertical(img)) == img);
    CHECK(transpose(transpose(img)) == img);
    CHECK(flip_horizontal(img) != img);

    Image two(2, 2);
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 2; ++x)
        for (int c = 0; c < 3; ++c) two.at(y, x, c) = static_cast<std::uint8_t>(10 * (2 * y + x) + c);
    const auto t = transpose(two);
    CHECK(t.at(0, 1, 0) == two.at(1, 0, 0));
    CHECK(t.at(1, 0, 2) == two.at(0, 1, 2));
    CHECK(t.at(0, 0, 1) == two.at(0, 0, 1));
  }

  TEST_CASE("gamma and HSV examples") {
    Image px(1, 1);
    px.at(0, 0, 0) = 128;
    px.at(0, 0, 1) = 0;
    px.at(0, 0, 2) = 255;
    CHECK(gamma_correct(px, Channel::all, 1.0) == px);
    const auto g = gamma_correct(px, Channel::all, 1.2);
    CHECK(g.at(0, 0, 0) == 112);
    CHECK(g.at(0, 0, 1) == 0);
    CHECK(g.at(0, 0, 2) == 255);
    const auto r = gamma_correct(px, Channel::blue, 1.2);
    CHECK(r.at(0, 0, 0) == 128);

    Image red(1, 1);
    red.at(0, 0, 0) = 255;
    const auto h = hsv_transform(red, 0.8, 1.1);
    CHECK(h.at(0, 0, 0) == 255);
    CHECK(h.at(0, 0, 1) == 51);
    CHECK(h.at(0, 0, 2) == 51);

    Image gray(1, 1, 100);
    const auto gv = hsv_transform(gray, 0.5, 1.1);
    for (int c = 0; c < 3; ++c) CHECK(gv.at(0, 0, c) == 110);

    const auto img = noise_image(16, 5);
    const auto same = hsv_transform(img, 1.0, 1.0);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) CHECK(std::abs(img.pixels[i] - same.pixels[i]) <= 1);
  }

  TEST_CASE("synthetic generator is deterministic and labels flags lexicographically") {
    SyntheticConfig cfg;
    cfg.num_classes = 5;
    cfg.per_class = {2};
    const auto a = generate_synthetic(cfg), b = generate_synthetic(cfg);
    CHECK(dataset_hash(a) == dataset_hash(b));
    CHECK(std::is_sorted(a.classes.begin(), a.classes.end()));
    CHECK(a.num_classes() == 5);
    CHECK(a.patches.front().image.width == 80);
  }
}
