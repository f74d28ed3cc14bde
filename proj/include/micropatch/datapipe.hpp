#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "micropatch/image.hpp"

namespace micropatch {

struct LabeledPatch {
  Image image;                    // native resolution S0 x S0
  std::string flag;               // class label
  std::string source_id;          // specimen / provenance
  std::string id;                 // stable sample identifier (manifest path stem)
  std::vector<std::string> tags;  // applied augmentations, in application order
};

/// Ordered patches plus the flag -> class-index mapping. Class indices are
/// assigned to flags in lexicographic order.
struct Dataset {
  std::vector<LabeledPatch> patches;
  std::vector<std::string> classes;

  /// Builds the class list from the flags present.
  static Dataset from_patches(std::vector<LabeledPatch> patches);

  std::size_t size() const { return patches.size(); }
  bool empty() const { return patches.empty(); }
  int num_classes() const { return static_cast<int>(classes.size()); }

  /// Class index of a flag; throws DataError for an unknown flag.
  int class_of(const std::string& flag) const;
  std::vector<int> labels() const;
  std::map<std::string, std::int64_t> counts() const;
};

/// Reads root/manifest.csv (header `path,flag,source_id`) and its PNG files.
/// Errors name the manifest line.
Dataset load_dataset(const std::filesystem::path& root);

/// Writes each patch as `{id}__{tags}.png` plus manifest.csv into dir.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);

/// 64-bit content hash over flags, source ids, tags and pixels, in order.
std::uint64_t dataset_hash(const Dataset& ds);

// ---- sampling and splitting ------------------------------------------------

inline constexpr std::int64_t kFlagLimits[] = {256, 512, 1024, 2048, 4096, 8192, 16384};

struct SamplingConfig {
  std::int64_t flag_limit = 256;
  std::uint64_t seed = 42;

  /// ceil(0.05 * flag_limit)
  std::int64_t flag_min() const { return (flag_limit * 5 + 99) / 100; }
};

/// Drops classes with fewer than flag_min samples, caps the rest at
/// flag_limit (uniform without replacement). Output is grouped by class
/// index, original order within a class. Throws DataError if nothing remains.
Dataset class_balanced_sample(const Dataset& ds, const SamplingConfig& cfg);

/// Per-class counts that class_balanced_sample would keep.
std::map<std::string, std::int64_t> balanced_counts(const std::map<std::string, std::int64_t>& counts,
                                                    const SamplingConfig& cfg);

struct Split {
  Dataset train;
  Dataset val;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// The split rule over plain labels: per class (ascending), shuffled with a
/// class-derived seed, first floor(fraction * n) (at least 1) to train.
/// Indices are ascending within each class. Classes with no rows are skipped.
SplitIndices stratified_indices(std::span<const int> labels, int num_classes, double train_fraction = 0.8,
                                std::uint64_t seed = 42);

/// Per class: floor(fraction * n) (at least 1) samples to train, the rest to
/// validation. Both halves keep the parent's class list. Throws DataError for
/// a class with fewer than two samples.
Split stratified_split(const Dataset& ds, double train_fraction = 0.8, std::uint64_t seed = 42);

// ---- augmentation -----------------------------------------------------------

enum class Channel : unsigned { red = 1, green = 2, blue = 4, all = 7 };

/// out = round(255 * (in / 255)^gamma) on the selected channels.
Image gamma_correct(const Image& img, Channel channels, double gamma);

/// Hexcone HSV round trip with S' = min(1, alpha_s S), V' = min(1, alpha_v V).
Image hsv_transform(const Image& img, double alpha_s, double alpha_v);

Image flip_horizontal(const Image& img);
Image flip_vertical(const Image& img);
Image transpose(const Image& img);

/// One color-variant subset: share of the originals (percent) and its transform.
struct ColorVariant {
  int percent;
  std::vector<std::string> tags;
};

/// The five color subsets: 20% R-gamma 1.2, 30% B-gamma 1.2, 50% RGB-gamma 1.2,
/// 20% HSV(0.8, 1.1), 20% HSV(0.7, 1.1) followed by B-gamma 1.3.
const std::vector<ColorVariant>& color_variants();

/// Applies a color variant's transforms by tag.
Image apply_color_variant(const Image& img, const ColorVariant& variant);

/// Number of samples augment() produces for n originals:
/// 4 * (n + sum floor(n * percent / 100)).
std::int64_t augmented_count(std::int64_t n);

/// Originals plus independently drawn color subsets, each expanded by
/// {identity, horizontal flip, vertical flip, transpose}.
Dataset augment(const Dataset& train, std::uint64_t seed);

}  // namespace micropatch
