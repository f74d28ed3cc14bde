#include "micropatch/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "micropatch/error.hpp"

namespace micropatch {

namespace {

constexpr std::array<const char*, 4> kColorNames = {"violet", "blue", "magenta", "brown"};
constexpr std::array<const char*, 4> kTextureNames = {"smooth", "checker", "rings", "speckle"};
constexpr std::array<std::array<double, 3>, 4> kNucleusColors = {{
    {110, 60, 150},
    {55, 75, 165},
    {185, 70, 140},
    {140, 95, 60},
}};
constexpr std::array<double, 3> kBackground = {232, 212, 222};
constexpr double kTextureAmplitude = 55.0;
constexpr double kPi = 3.14159265358979323846;

}  // namespace

std::string synthetic_flag(int c) {
  return std::string(kColorNames[c % 4]) + "_" + kTextureNames[(c / 4) % 4];
}

Image synthetic_image(int c, int size, double difficulty, Rng& rng) {
  const double k = size / 40.0;  // native pixels per model pixel
  const double d = std::clamp(difficulty, 0.0, 1.0);
  const int texture = (c / 4) % 4;
  ImageF img(size, size);

  std::array<double, 3> bg;
  for (int ch = 0; ch < 3; ++ch) bg[ch] = kBackground[ch] + rng.uniform(-8.0, 8.0) * (0.5 + d);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = static_cast<float>(bg[ch]);

  // faint cytoplasm-like color blobs
  const int blobs = 2 + static_cast<int>(rng.index(3));
  for (int b = 0; b < blobs; ++b) {
    const double cx = rng.uniform(0, size), cy = rng.uniform(0, size);
    const double radius = rng.uniform(4, 10) * k;
    std::array<double, 3> tint;
    for (auto& t : tint) t = rng.uniform(-25, 10);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const double w = std::exp(-((x - cx) * (x - cx) + (y - cy) * (y - cy)) / (2 * radius * radius));
        for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) += static_cast<float>(w * tint[ch]);
      }
  }

  // nucleus
  const double jitter = 8.0 + 16.0 * d;
  std::array<double, 3> color;
  const double brightness = rng.uniform(-jitter, jitter) * 0.5;
  for (int ch = 0; ch < 3; ++ch) color[ch] = kNucleusColors[c % 4][ch] + rng.uniform(-jitter, jitter) + brightness;
  const double cx = size / 2.0 + rng.uniform(-6, 6) * k;
  const double cy = size / 2.0 + rng.uniform(-6, 6) * k;
  const double radius = rng.uniform(11, 15) * k;
  const double amplitude = kTextureAmplitude * rng.uniform(0.55 - 0.25 * d, 1.0);
  const double cell = 2.0 * k;  // half period of the 4-pixel textures
  const double phase_x = rng.uniform(0, 2 * cell), phase_y = rng.uniform(0, 2 * cell);
  const int blocks = static_cast<int>(std::ceil(size / cell)) + 2;
  std::vector<double> speckle(static_cast<std::size_t>(blocks) * blocks);
  for (auto& s : speckle) s = rng.bernoulli(0.5) ? 1.0 : -1.0;

  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      const double r = std::hypot(px - cx, py - cy);
      const double coverage = std::clamp(radius - r + 0.5, 0.0, 1.0);
      if (coverage <= 0.0) continue;
      double t = 0.0;
      switch (texture) {
        case 1: {
          const auto bx = static_cast<long>(std::floor((px + phase_x) / cell));
          const auto by = static_cast<long>(std::floor((py + phase_y) / cell));
          t = ((bx + by) % 2 == 0) ? 1.0 : -1.0;
          break;
        }
        case 2:
          t = std::cos(2 * kPi * r / (2 * cell)) >= 0 ? 1.0 : -1.0;
          break;
        case 3: {
          const auto bx = static_cast<int>((px + phase_x) / cell);
          const auto by = static_cast<int>((py + phase_y) / cell);
          t = speckle[static_cast<std::size_t>(by) * blocks + bx];
          break;
        }
        default:
          break;
      }
      for (int ch = 0; ch < 3; ++ch) {
        const double v = color[ch] + amplitude * t * 0.5;
        float& dst = img.at(y, x, ch);
        dst = static_cast<float>(coverage * v + (1.0 - coverage) * dst);
      }
    }
  }

  const double noise = 3.0 + 6.0 * d;
  for (auto& v : img.pixels) v += static_cast<float>(rng.normal() * noise);
  return to_bytes(img);
}

Dataset generate_synthetic(const SyntheticConfig& cfg) {
  if (cfg.num_classes < 1 || cfg.num_classes > kSyntheticMaxClasses)
    throw ConfigurationError("synthetic num_classes must lie in [1, 16]");
  if (cfg.size < 40) throw ConfigurationError("synthetic size must be at least 40");
  if (cfg.per_class.size() != 1 && cfg.per_class.size() != static_cast<std::size_t>(cfg.num_classes))
    throw ConfigurationError("synthetic per_class needs one count or one per class");
  std::vector<LabeledPatch> patches;
  for (int c = 0; c < cfg.num_classes; ++c) {
    const std::int64_t n = cfg.per_class.size() == 1 ? cfg.per_class[0] : cfg.per_class[c];
    for (std::int64_t i = 0; i < n; ++i) {
      // one stream per sample so counts can change without reshuffling others
      Rng rng(derive_seed({cfg.seed, static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(i)}));
      LabeledPatch p;
      p.image = synthetic_image(c, cfg.size, cfg.difficulty, rng);
      p.flag = synthetic_flag(c);
      p.source_id = "synthetic-" + std::to_string(cfg.seed);
      p.id = p.flag + "_" + std::to_string(i);
      patches.push_back(std::move(p));
    }
  }
  return Dataset::from_patches(std::move(patches));
}

}  // namespace micropatch
