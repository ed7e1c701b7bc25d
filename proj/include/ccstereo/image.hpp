#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ccstereo/rng.hpp"

namespace ccs {

// 8-bit RGB image, row-major, interleaved channels.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> pixels;  // height * width * 3

  static Image filled(int width, int height, uint8_t value);

  uint8_t& at(int y, int x, int c) { return pixels[(static_cast<size_t>(y) * width + x) * 3 + c]; }
  uint8_t at(int y, int x, int c) const {
    return pixels[(static_cast<size_t>(y) * width + x) * 3 + c];
  }
};

Image read_png(const std::string& path);
void write_png(const std::string& path, const Image& image);

// Single-channel 8-bit PNG; pixels are row-major, height * width bytes.
void write_png_gray(const std::string& path, int width, int height,
                    const std::vector<uint8_t>& pixels);

// Bilinear resampling with half-pixel-centre alignment: output pixel i samples
// the source at (i + 0.5) * src / dst - 0.5, clamped to the source edges.
Image resize_bilinear(const Image& image, int out_width, int out_height);

// Crop must lie fully inside the image.
Image crop(const Image& image, int top, int left, int height, int width);

struct JitterScales {
  double brightness = 1.0;
  double contrast = 1.0;
  double saturation = 1.0;
};

// Each scale drawn from U[0.9, 1.1]. Brightness multiplies all channels,
// contrast pulls towards the mean luma of the jittered image, saturation
// interpolates between per-pixel luma and colour. Luma weights 0.299/0.587/0.114.
JitterScales sample_jitter(Rng* rng);
Image apply_jitter(const Image& image, const JitterScales& scales);

// Float tensor layout for the network: [3][height][width], (p/255 - 0.5) / 0.25.
std::vector<float> normalize_image(const Image& image);

}  // namespace ccs
