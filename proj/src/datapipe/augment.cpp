#include <algorithm>
#include <array>
#include <cmath>

#include "micropatch/datapipe.hpp"
#include "micropatch/error.hpp"
#include "micropatch/rng.hpp"

namespace micropatch {

namespace {

std::uint8_t quantize(double unit) {
  return static_cast<std::uint8_t>(std::clamp(std::floor(unit * 255.0 + 0.5), 0.0, 255.0));
}

struct Hsv {
  double h, s, v;
};

Hsv rgb_to_hsv(double r, double g, double b) {
  const double max = std::max({r, g, b});
  const double min = std::min({r, g, b});
  const double delta = max - min;
  double h = 0.0;
  if (delta > 0.0) {
    if (max == r)
      h = 60.0 * std::fmod((g - b) / delta, 6.0);
    else if (max == g)
      h = 60.0 * ((b - r) / delta + 2.0);
    else
      h = 60.0 * ((r - g) / delta + 4.0);
    if (h < 0.0) h += 360.0;
  }
  return {h, max > 0.0 ? delta / max : 0.0, max};
}

std::array<double, 3> hsv_to_rgb(const Hsv& p) {
  const double c = p.v * p.s;
  const double sector = p.h / 60.0;
  const double x = c * (1.0 - std::abs(std::fmod(sector, 2.0) - 1.0));
  const double m = p.v - c;
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(sector) % 6) {
    case 0: r = c, g = x; break;
    case 1: r = x, g = c; break;
    case 2: g = c, b = x; break;
    case 3: g = x, b = c; break;
    case 4: r = x, b = c; break;
    default: r = c, b = x; break;
  }
  return {r + m, g + m, b + m};
}

template <typename Map>
Image remap(const Image& img, int out_h, int out_w, Map source) {
  Image out(out_h, out_w);
  for (int y = 0; y < out_h; ++y)
    for (int x = 0; x < out_w; ++x) {
      const auto [sy, sx] = source(y, x);
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(sy, sx, c);
    }
  return out;
}

enum class Geometric { identity, hflip, vflip, transpose };

constexpr std::array<Geometric, 4> kGeometric = {Geometric::identity, Geometric::hflip, Geometric::vflip,
                                                 Geometric::transpose};

Image apply_geometric(const Image& img, Geometric g) {
  switch (g) {
    case Geometric::identity: return img;
    case Geometric::hflip: return flip_horizontal(img);
    case Geometric::vflip: return flip_vertical(img);
    case Geometric::transpose: return transpose(img);
  }
  return img;
}

const char* geometric_tag(Geometric g) {
  switch (g) {
    case Geometric::hflip: return "hflip";
    case Geometric::vflip: return "vflip";
    case Geometric::transpose: return "transpose";
    default: return nullptr;
  }
}

}  // namespace

Image gamma_correct(const Image& img, Channel channels, double gamma) {
  if (!(gamma > 0.0)) throw ConfigurationError("gamma must be positive");
  std::array<std::uint8_t, 256> table{};
  for (int v = 0; v < 256; ++v) table[v] = quantize(std::pow(v / 255.0, gamma));
  Image out = img;
  const auto mask = static_cast<unsigned>(channels);
  for (std::size_t i = 0; i < out.pixels.size(); ++i)
    if (mask & (1u << (i % 3))) out.pixels[i] = table[out.pixels[i]];
  return out;
}

Image hsv_transform(const Image& img, double alpha_s, double alpha_v) {
  if (!(alpha_s > 0.0 && alpha_v > 0.0)) throw ConfigurationError("HSV factors must be positive");
  Image out = img;
  for (std::size_t i = 0; i < out.pixels.size(); i += 3) {
    Hsv p = rgb_to_hsv(img.pixels[i] / 255.0, img.pixels[i + 1] / 255.0, img.pixels[i + 2] / 255.0);
    p.s = std::min(1.0, alpha_s * p.s);
    p.v = std::min(1.0, alpha_v * p.v);
    const auto rgb = hsv_to_rgb(p);
    for (int c = 0; c < 3; ++c) out.pixels[i + c] = quantize(rgb[c]);
  }
  return out;
}

Image flip_horizontal(const Image& img) {
  return remap(img, img.height, img.width, [&](int y, int x) { return std::pair{y, img.width - 1 - x}; });
}

Image flip_vertical(const Image& img) {
  return remap(img, img.height, img.width, [&](int y, int x) { return std::pair{img.height - 1 - y, x}; });
}

Image transpose(const Image& img) {
  return remap(img, img.width, img.height, [](int y, int x) { return std::pair{x, y}; });
}

const std::vector<ColorVariant>& color_variants() {
  static const std::vector<ColorVariant> variants = {
      {20, {"gamma_r1.2"}},
      {30, {"gamma_b1.2"}},
      {50, {"gamma_rgb1.2"}},
      {20, {"hsv_s0.8_v1.1"}},
      {20, {"hsv_s0.7_v1.1", "gamma_b1.3"}},
  };
  return variants;
}

Image apply_color_variant(const Image& img, const ColorVariant& variant) {
  Image out = img;
  for (const auto& tag : variant.tags) {
    if (tag == "gamma_r1.2") out = gamma_correct(out, Channel::red, 1.2);
    else if (tag == "gamma_b1.2") out = gamma_correct(out, Channel::blue, 1.2);
    else if (tag == "gamma_rgb1.2") out = gamma_correct(out, Channel::all, 1.2);
    else if (tag == "gamma_b1.3") out = gamma_correct(out, Channel::blue, 1.3);
    else if (tag == "hsv_s0.8_v1.1") out = hsv_transform(out, 0.8, 1.1);
    else if (tag == "hsv_s0.7_v1.1") out = hsv_transform(out, 0.7, 1.1);
    else throw ConfigurationError("unknown color transform '" + tag + "'");
  }
  return out;
}

std::int64_t augmented_count(std::int64_t n) {
  std::int64_t total = n;
  for (const auto& v : color_variants()) total += n * v.percent / 100;
  return 4 * total;
}

Dataset augment(const Dataset& train, std::uint64_t seed) {
  const std::size_t n = train.size();
  // (original index, color variant or -1)
  std::vector<std::pair<std::size_t, int>> colored;
  for (std::size_t i = 0; i < n; ++i) colored.emplace_back(i, -1);
  const auto& variants = color_variants();
  for (std::size_t v = 0; v < variants.size(); ++v) {
    const std::size_t k = n * static_cast<std::size_t>(variants[v].percent) / 100;
    Rng rng(derive_seed({seed, static_cast<std::uint64_t>(v), 0x636f6c72ULL}));
    for (auto i : rng.sample_without_replacement(n, k)) colored.emplace_back(i, static_cast<int>(v));
  }

  Dataset out;
  out.classes = train.classes;
  out.patches.reserve(colored.size() * kGeometric.size());
  for (const auto& [index, variant] : colored) {
    const LabeledPatch& source = train.patches[index];
    LabeledPatch base = source;
    if (variant >= 0) {
      base.image = apply_color_variant(source.image, variants[variant]);
      base.tags.insert(base.tags.end(), variants[variant].tags.begin(), variants[variant].tags.end());
    }
    for (const auto g : kGeometric) {
      LabeledPatch p = base;
      p.image = apply_geometric(base.image, g);
      if (const char* tag = geometric_tag(g)) p.tags.emplace_back(tag);
      out.patches.push_back(std::move(p));
    }
  }
  return out;
}

}  // namespace micropatch
