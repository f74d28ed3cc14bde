#include "micropatch/perturb.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "micropatch/error.hpp"

namespace micropatch {

namespace {

// Planar double buffer: channel c, row y, column x at (c * h + y) * w + x.
struct Planes {
  int height = 0, width = 0;
  std::vector<double> v;

  double& at(int c, int y, int x) { return v[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  double at(int c, int y, int x) const { return v[(static_cast<std::size_t>(c) * height + y) * width + x]; }
};

template <typename T>
Planes to_planes(const BasicImage<T>& img) {
  Planes p{img.height, img.width, std::vector<double>(static_cast<std::size_t>(3) * img.height * img.width)};
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) p.at(c, y, x) = static_cast<double>(img.at(y, x, c));
  return p;
}

ImageF from_planes(const Planes& p) {
  ImageF img(p.height, p.width);
  for (int y = 0; y < p.height; ++y)
    for (int x = 0; x < p.width; ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<float>(p.at(c, y, x));
  return img;
}

// Symmetric taps are summed in pairs so that mirrored inputs give
// bit-identical mirrored outputs.
void convolve_lines(const double* src, double* dst, int length, int stride, int count, int line_stride,
                    const std::vector<double>& kernel) {
  const int r = static_cast<int>(kernel.size() / 2);
  auto clamp = [length](int i) { return std::clamp(i, 0, length - 1); };
  for (int line = 0; line < count; ++line) {
    const double* s = src + static_cast<std::ptrdiff_t>(line) * line_stride;
    double* d = dst + static_cast<std::ptrdiff_t>(line) * line_stride;
    for (int i = 0; i < length; ++i) {
      double acc = kernel[r] * s[static_cast<std::ptrdiff_t>(i) * stride];
      for (int k = 1; k <= r; ++k)
        acc += kernel[r + k] * (s[static_cast<std::ptrdiff_t>(clamp(i - k)) * stride] +
                                s[static_cast<std::ptrdiff_t>(clamp(i + k)) * stride]);
      d[static_cast<std::ptrdiff_t>(i) * stride] = acc;
    }
  }
}

Planes blur_planes(const Planes& in, double sigma) {
  const auto kernel = gaussian_kernel(sigma);
  Planes tmp = in, out = in;
  for (int c = 0; c < 3; ++c) {
    const std::size_t base = static_cast<std::size_t>(c) * in.height * in.width;
    convolve_lines(in.v.data() + base, tmp.v.data() + base, in.width, 1, in.height, in.width, kernel);
    convolve_lines(tmp.v.data() + base, out.v.data() + base, in.height, in.width, in.width, 1, kernel);
  }
  return out;
}

double cubic(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x < 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

struct Taps {
  int first;
  std::vector<double> weights;
};

// Per output index: the contributing input range and normalized weights.
std::vector<Taps> resize_taps(int in, int out) {
  const double scale = static_cast<double>(in) / out;
  const double filter_scale = std::max(scale, 1.0);
  const double support = 2.0 * filter_scale;
  std::vector<Taps> taps(static_cast<std::size_t>(out));
  for (int i = 0; i < out; ++i) {
    const double center = (i + 0.5) * scale;
    const int lo = std::max(0, static_cast<int>(std::floor(center - support + 0.5)));
    const int hi = std::min(in, static_cast<int>(std::floor(center + support + 0.5)));
    auto& t = taps[i];
    t.first = lo;
    double total = 0.0;
    for (int x = lo; x < hi; ++x) {
      const double w = cubic((x - center + 0.5) / filter_scale);
      t.weights.push_back(w);
      total += w;
    }
    if (total != 0.0)
      for (auto& w : t.weights) w /= total;
  }
  return taps;
}

Planes resize_planes(const Planes& in, int size) {
  const auto tx = resize_taps(in.width, size);
  const auto ty = resize_taps(in.height, size);
  Planes mid{in.height, size, std::vector<double>(static_cast<std::size_t>(3) * in.height * size)};
  Planes out{size, size, std::vector<double>(static_cast<std::size_t>(3) * size * size)};
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < in.height; ++y)
      for (int x = 0; x < size; ++x) {
        double acc = 0.0;
        for (std::size_t k = 0; k < tx[x].weights.size(); ++k)
          acc += tx[x].weights[k] * in.at(c, y, tx[x].first + static_cast<int>(k));
        mid.at(c, y, x) = acc;
      }
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        double acc = 0.0;
        for (std::size_t k = 0; k < ty[y].weights.size(); ++k)
          acc += ty[y].weights[k] * mid.at(c, ty[y].first + static_cast<int>(k), x);
        out.at(c, y, x) = std::clamp(acc, 0.0, 255.0);
      }
  }
  return out;
}

void check_square(int height, int width, const char* what) {
  if (height != width) throw DimensionError(std::string(what) + " expects a square image");
}

}  // namespace

std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ConfigurationError("blur sigma must be finite and >= 0");
  if (sigma == 0.0) return {1.0};
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
  double total = 0.0;
  for (int i = -r; i <= r; ++i) total += k[i + r] = std::exp(-(i * i) / (2.0 * sigma * sigma));
  for (auto& v : k) v /= total;
  return k;
}

ImageF gaussian_blur(const ImageF& img, double sigma) {
  gaussian_kernel(sigma);  // validates
  if (sigma == 0.0) return img;
  return from_planes(blur_planes(to_planes(img), sigma));
}

Image gaussian_blur(const Image& img, double sigma) {
  gaussian_kernel(sigma);
  if (sigma == 0.0) return img;
  return to_bytes(from_planes(blur_planes(to_planes(img), sigma)));
}

ImageF resize_bicubic(const ImageF& img, int size) {
  if (size < 1) throw ConfigurationError("resize target must be at least 1");
  if (img.height == size && img.width == size) return img;
  return from_planes(resize_planes(to_planes(img), size));
}

Image resize_bicubic(const Image& img, int size) {
  if (size < 1) throw ConfigurationError("resize target must be at least 1");
  if (img.height == size && img.width == size) return img;
  return to_bytes(from_planes(resize_planes(to_planes(img), size)));
}

std::string scheme_name(BlurScheme scheme) { return scheme == BlurScheme::pre ? "pre" : "post"; }

BlurScheme parse_scheme(const std::string& name) {
  if (name == "pre") return BlurScheme::pre;
  if (name == "post") return BlurScheme::post;
  throw ConfigurationError("unknown blur scheme '" + name + "' (expected pre or post)");
}

double pre_resize_sigma(double sigma, int native, int target) {
  if (target < 1 || native < target) throw ConfigurationError("native size must be >= target size >= 1");
  if (native == target) return sigma;
  return sigma * static_cast<double>(native) / static_cast<double>(target);
}

ImageF apply_blur_scheme(const Image& img, const BlurSpec& spec) {
  check_square(img.height, img.width, "apply_blur_scheme");
  gaussian_kernel(spec.sigma);
  const int native = img.width;
  if (spec.scheme == BlurScheme::pre) {
    const double s = pre_resize_sigma(spec.sigma, native, spec.target);
    return resize_bicubic(gaussian_blur(to_float(img), s), spec.target);
  }
  if (native < spec.target) throw ConfigurationError("native size must be >= target size");
  return gaussian_blur(resize_bicubic(to_float(img), spec.target), spec.sigma);
}

TensorF to_tensor(const ImageF& img) {
  TensorF t(Shape{3, img.height, img.width});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) t.at({c, y, x}) = img.at(y, x, c) / 255.0f;
  return t;
}

TensorF mean_image(std::span<const ImageF> images) {
  if (images.empty()) throw DataError("mean image of an empty set");
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(to_tensor(images.front()).size());
  for (const auto& img : images) {
    const auto t = to_tensor(img);
    if (t.size() != acc.size()) throw DimensionError("mean image over differently sized images");
    acc += t.vec().cast<double>();
  }
  acc /= static_cast<double>(images.size());
  TensorF out(Shape{3, images.front().height, images.front().width});
  out.vec() = acc.cast<float>();
  return out;
}

TensorF whiten(const TensorF& input, const TensorF& mean) {
  if (input.shape() != mean.shape())
    throw DimensionError("whiten: input " + shape_string(input.shape()) + " vs mean " + shape_string(mean.shape()));
  TensorF out(input.shape());
  out.vec() = input.vec() - mean.vec();
  return out;
}

TensorSet make_tensor_set(const Dataset& ds, const TensorF& mean, const BlurSpec& spec) {
  const Index n = static_cast<Index>(ds.size());
  TensorSet set;
  set.images = TensorF(Shape{n, 3, spec.target, spec.target});
  set.labels = ds.labels();
  set.num_classes = ds.num_classes();
  const Index per = 3 * spec.target * spec.target;
  for (Index i = 0; i < n; ++i) {
    const auto t = whiten(to_tensor(apply_blur_scheme(ds.patches[i].image, spec)), mean);
    std::copy_n(t.data(), per, set.images.data() + i * per);
  }
  return set;
}

TensorF dataset_mean(const Dataset& ds) {
  if (ds.empty()) throw DataError("mean image of an empty dataset");
  Eigen::VectorXd acc;
  for (const auto& p : ds.patches) {
    const auto t = to_tensor(apply_blur_scheme(p.image, {}));
    if (acc.size() == 0) acc = Eigen::VectorXd::Zero(t.size());
    acc += t.vec().cast<double>();
  }
  acc /= static_cast<double>(ds.size());
  TensorF out(Shape{3, kModelSize, kModelSize});
  out.vec() = acc.cast<float>();
  return out;
}

double drop_slope(std::span<const BlurPoint> points) {
  std::vector<double> sigmas;
  for (const auto& p : points) sigmas.push_back(p.sigma);
  std::sort(sigmas.begin(), sigmas.end());
  if (std::unique(sigmas.begin(), sigmas.end()) - sigmas.begin() < 2)
    throw StatisticsError("drop slope needs at least two distinct sigma values");
  // metrics are taken relative to the first point so a constant series gives exactly 0
  const double n = static_cast<double>(points.size());
  const double origin = points.front().metric;
  double mx = 0.0, my = 0.0;
  for (const auto& p : points) {
    mx += std::log2(1.0 + p.sigma);
    my += p.metric - origin;
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0;
  for (const auto& p : points) {
    const double dx = std::log2(1.0 + p.sigma) - mx;
    sxy += dx * ((p.metric - origin) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

const RobustnessRow& RobustnessReport::at(const std::string& scheme, double sigma) const {
  for (const auto& r : rows)
    if (r.scheme == scheme && std::abs(r.sigma - sigma) < 1e-12) return r;
  throw std::out_of_range("no robustness row for " + scheme + " at sigma " + std::to_string(sigma));
}

RobustnessReport robustness_sweep(ModelF& model, const Dataset& val, const TensorF& mean,
                                  std::span<const double> sigmas, std::span<const BlurScheme> schemes,
                                  const std::string& model_name) {
  for (double s : sigmas)
    if (!(s >= 0.0)) throw ConfigurationError("sigma grid values must be >= 0");
  RobustnessReport report;
  const auto clean = evaluate(model, make_tensor_set(val, mean));
  report.rows.push_back({model_name, "clean", 0.0, clean.accuracy, clean.macro_f1, 0.0, 0.0});

  for (const auto scheme : schemes) {
    const auto name = scheme_name(scheme);
    std::vector<BlurPoint> acc{{0.0, clean.accuracy}}, f1{{0.0, clean.macro_f1}};
    for (const double sigma : sigmas) {
      if (sigma == 0.0) continue;
      const auto m = evaluate(model, make_tensor_set(val, mean, {scheme, sigma, kModelSize}));
      report.rows.push_back({model_name, name, sigma, m.accuracy, m.macro_f1, m.accuracy - clean.accuracy,
                             m.macro_f1 - clean.macro_f1});
      acc.push_back({sigma, m.accuracy});
      f1.push_back({sigma, m.macro_f1});
    }
    SchemeSlopes slopes{name, 0.0, 0.0};
    if (acc.size() >= 2) {
      slopes.accuracy_slope = drop_slope(acc);
      slopes.macro_f1_slope = drop_slope(f1);
    }
    report.slopes.push_back(slopes);
  }
  return report;
}

void write_robustness_csv(const std::filesystem::path& path, std::span<const RobustnessReport> reports, bool append) {
  const bool header = !append || !std::filesystem::exists(path);
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  if (header) out << "model,scheme,sigma,accuracy,macro_f1,delta_accuracy,delta_macro_f1\n";
  out.precision(10);
  for (const auto& report : reports)
    for (const auto& r : report.rows)
      out << r.model << ',' << r.scheme << ',' << r.sigma << ',' << r.accuracy << ',' << r.macro_f1 << ','
          << r.delta_accuracy << ',' << r.delta_macro_f1 << '\n';
}

nlohmann::json robustness_json(const RobustnessReport& report) {
  nlohmann::json rows = nlohmann::json::array(), slopes = nlohmann::json::array();
  for (const auto& r : report.rows)
    rows.push_back({{"model", r.model},
                    {"scheme", r.scheme},
                    {"sigma", r.sigma},
                    {"accuracy", r.accuracy},
                    {"macro_f1", r.macro_f1},
                    {"delta_accuracy", r.delta_accuracy},
                    {"delta_macro_f1", r.delta_macro_f1}});
  for (const auto& s : report.slopes)
    slopes.push_back(
        {{"scheme", s.scheme}, {"accuracy_slope", s.accuracy_slope}, {"macro_f1_slope", s.macro_f1_slope}});
  return {{"rows", rows}, {"slopes", slopes}, {"slope_x", "log2(1+sigma)"}, {"includes_clean_point", true}};
}

}  // namespace micropatch
