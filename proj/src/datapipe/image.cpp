#include "micropatch/image.hpp"

#include <algorithm>
#include <cmath>
#include <png.h>

#include "micropatch/error.hpp"

namespace micropatch {

ImageF to_float(const Image& img) {
  ImageF out(img.height, img.width);
  std::copy(img.pixels.begin(), img.pixels.end(), out.pixels.begin());
  return out;
}

Image to_bytes(const ImageF& img) {
  Image out(img.height, img.width);
  std::transform(img.pixels.begin(), img.pixels.end(), out.pixels.begin(), [](float v) {
    return static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5f), 0.0f, 255.0f));
  });
  return out;
}

Image read_png(const std::filesystem::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str()))
    throw DataError("cannot read PNG '" + path.string() + "': " + png.message);
  const auto fail = [&](const std::string& why) {
    png_image_free(&png);
    throw DataError("PNG '" + path.string() + "' " + why);
  };
  if (png.format & PNG_FORMAT_FLAG_ALPHA) fail("has an alpha channel; only RGB is supported");
  if (!(png.format & PNG_FORMAT_FLAG_COLOR)) fail("is not an RGB image");
  if (png.format & PNG_FORMAT_FLAG_LINEAR) fail("is not 8-bit");
  png.format = PNG_FORMAT_RGB;
  Image img(static_cast<int>(png.height), static_cast<int>(png.width));
  if (!png_image_finish_read(&png, nullptr, img.pixels.data(), 0, nullptr))
    throw DataError("cannot decode PNG '" + path.string() + "': " + png.message);
  return img;
}

void write_png(const std::filesystem::path& path, const Image& img) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width);
  png.height = static_cast<png_uint_32>(img.height);
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.c_str(), 0, img.pixels.data(), 0, nullptr))
    throw DataError("cannot write PNG '" + path.string() + "': " + png.message);
}

}  // namespace micropatch
