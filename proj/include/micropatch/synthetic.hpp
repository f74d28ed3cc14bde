#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "micropatch/datapipe.hpp"
#include "micropatch/rng.hpp"

namespace micropatch {

// Procedural stand-in for stained cell patches. A class is one of four nucleus
// colors crossed with one of four nucleus textures (smooth, checker, rings,
// speckle). The textures have a 4-pixel period at 40x40, so strong blur erases
// them while mild blur does not.
inline constexpr int kSyntheticMaxClasses = 16;

struct SyntheticConfig {
  int num_classes = 16;     // the first k classes in flag order of generation
  int size = 80;            // native resolution S0 (multiple of 40 recommended)
  double difficulty = 0.3;  // 0..1: color jitter, noise and texture-amplitude spread
  std::uint64_t seed = 1;
  std::vector<std::int64_t> per_class = {100};  // one count for all classes, or one per class
};

/// Flag name of synthetic class c (color = c % 4, texture = c / 4).
std::string synthetic_flag(int c);

Image synthetic_image(int c, int size, double difficulty, Rng& rng);

Dataset generate_synthetic(const SyntheticConfig& cfg);

}  // namespace micropatch
