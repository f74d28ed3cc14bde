#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace micropatch {

/// Interleaved RGB image, row-major, channel fastest ([H, W, 3]).
template <typename T>
struct BasicImage {
  int height = 0;
  int width = 0;
  std::vector<T> pixels;

  BasicImage() = default;
  BasicImage(int height, int width, T fill = T(0))
      : height(height), width(width), pixels(static_cast<std::size_t>(height) * width * 3, fill) {}

  T& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  const T& at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }

  bool square() const { return height == width; }

  friend bool operator==(const BasicImage&, const BasicImage&) = default;
};

using Image = BasicImage<std::uint8_t>;  // 8-bit storage format
using ImageF = BasicImage<float>;        // working format, values on the 0..255 scale

ImageF to_float(const Image& img);
/// Rounds half up and clamps to [0, 255].
Image to_bytes(const ImageF& img);

/// Reads an 8-bit RGB PNG. Alpha, 16-bit and grayscale files are rejected
/// with DataError.
Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& img);

}  // namespace micropatch
