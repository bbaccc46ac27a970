#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mito {

// 8-bit interleaved RGB raster, row-major.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0) {}

  static Image solid(int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b);

  std::uint8_t* px(int x, int y) {
    return rgb.data() + 3 * (static_cast<std::size_t>(y) * width + x);
  }
  const std::uint8_t* px(int x, int y) const {
    return rgb.data() + 3 * (static_cast<std::size_t>(y) * width + x);
  }
  bool empty() const { return rgb.empty(); }
};

// PNG or TIFF, 8-bit RGB. Throws std::runtime_error on failure.
Image read_image(const std::string& path);
void write_image(const Image& img, const std::string& path);

}  // namespace mito
