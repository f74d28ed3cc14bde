#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "micropatch/archzoo.hpp"
#include "micropatch/datapipe.hpp"
#include "micropatch/image.hpp"
#include "micropatch/metrics.hpp"
#include "micropatch/trainer.hpp"

namespace micropatch {

inline constexpr int kModelSize = 40;
inline const std::vector<double> kSigmaGrid = {0.1, 0.2, 0.4, 0.8, 1.6};

/// Sampled 1-D Gaussian exp(-i^2 / 2 sigma^2) for |i| <= ceil(3 sigma),
/// normalized to sum 1. sigma = 0 gives the unit tap.
std::vector<double> gaussian_kernel(double sigma);

/// Separable blur, horizontal then vertical, replicate edges.
/// Throws ConfigurationError for sigma < 0.
ImageF gaussian_blur(const ImageF& img, double sigma);
Image gaussian_blur(const Image& img, double sigma);

/// Separable Catmull-Rom (a = -0.5) resize to size x size on a center-aligned
/// grid. When shrinking, the kernel support is widened by the scale factor
/// (antialiasing). Output is clamped to [0, 255].
ImageF resize_bicubic(const ImageF& img, int size);
Image resize_bicubic(const Image& img, int size);

enum class BlurScheme { pre, post };

std::string scheme_name(BlurScheme scheme);
BlurScheme parse_scheme(const std::string& name);

struct BlurSpec {
  BlurScheme scheme = BlurScheme::post;
  double sigma = 0.0;  // in model-resolution pixels
  int target = kModelSize;
};

/// sigma * S0 / S, the native-resolution blur equivalent to sigma at size S.
double pre_resize_sigma(double sigma, int native, int target);

/// pre: blur at native resolution with pre_resize_sigma, then resize.
/// post: resize, then blur with sigma.
ImageF apply_blur_scheme(const Image& img, const BlurSpec& spec);

// ---- model inputs -----------------------------------------------------------

/// [3, S, S] planar tensor scaled to [0, 1].
TensorF to_tensor(const ImageF& img);

/// Mean of to_tensor over images already at model resolution.
TensorF mean_image(std::span<const ImageF> images);

/// in - mean. Throws DimensionError on a shape mismatch.
TensorF whiten(const TensorF& input, const TensorF& mean);

/// Resizes every patch to 40x40, blurred as `spec` requests, scales to
/// [0, 1] and subtracts mean.
TensorSet make_tensor_set(const Dataset& ds, const TensorF& mean, const BlurSpec& spec = {});

/// Mean image of a dataset at model resolution (clean resize).
TensorF dataset_mean(const Dataset& ds);

// ---- drop slope and the sweep -----------------------------------------------

struct BlurPoint {
  double sigma;
  double metric;
};

/// Least-squares slope of metric against log2(1 + sigma).
/// Throws StatisticsError with fewer than two distinct sigmas.
double drop_slope(std::span<const BlurPoint> points);

struct RobustnessRow {
  std::string model;
  std::string scheme;  // "clean", "pre" or "post"
  double sigma = 0.0;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double delta_accuracy = 0.0;
  double delta_macro_f1 = 0.0;
};

struct SchemeSlopes {
  std::string scheme;
  double accuracy_slope = 0.0;
  double macro_f1_slope = 0.0;
};

struct RobustnessReport {
  std::vector<RobustnessRow> rows;
  std::vector<SchemeSlopes> slopes;

  const RobustnessRow& clean() const { return rows.front(); }
  /// Row for (scheme, sigma); throws std::out_of_range when absent.
  const RobustnessRow& at(const std::string& scheme, double sigma) const;
};

/// Evaluates the clean set and every (scheme, sigma) cell with the same
/// whitening mean. Sigma 0 in the grid is folded into the clean row.
RobustnessReport robustness_sweep(ModelF& model, const Dataset& val, const TensorF& mean,
                                  std::span<const double> sigmas, std::span<const BlurScheme> schemes,
                                  const std::string& model_name = "model");

/// Columns model,scheme,sigma,accuracy,macro_f1,delta_accuracy,delta_macro_f1.
void write_robustness_csv(const std::filesystem::path& path, std::span<const RobustnessReport> reports,
                          bool append = false);
nlohmann::json robustness_json(const RobustnessReport& report);

}  // namespace micropatch
