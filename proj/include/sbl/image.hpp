#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "sbl/nn.hpp"

namespace sbl {

/// RGB raster, interleaved HWC, values in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, 0.0F) {}

  bool empty() const { return pixels.empty(); }
  float& at(int x, int y, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + static_cast<std::size_t>(c)];
  }
  float at(int x, int y, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + static_cast<std::size_t>(c)];
  }
};

/// A fixed-size crop of a source image. Offset is in source coordinates.
struct ImageChip {
  Image image;
  std::string source_id;
  int offset_x = 0;
  int offset_y = 0;
};

nn::Tensor to_tensor(const Image& image);

/// Rounds every pixel to the nearest 8-bit level, matching what a
/// write/read cycle through an 8-bit file produces.
void quantize_8bit(Image& image);

/// Reads binary PPM (P6, maxval 255) and, when built with libpng, PNG.
Image read_image(const std::filesystem::path& path);
void write_ppm(const Image& image, const std::filesystem::path& path);

}  // namespace sbl
