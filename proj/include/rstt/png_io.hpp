#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rstt/tensor.hpp"

namespace rstt {

/// Interleaved 8-bit image (RGB or grayscale).
struct ImageU8 {
  Index height = 0, width = 0, channels = 0;  // channels: 1 or 3
  std::vector<std::uint8_t> pixels;           // height * width * channels
};

/// Reads a PNG as 8-bit RGB (palette/gray expanded, alpha stripped, 16-bit
/// depth reduced).  Throws config_error on unreadable files.
ImageU8 read_png(const std::string& path);

void write_png(const std::string& path, const ImageU8& img);

/// [3,H,W] float frame in [0,1] from 8-bit RGB (v = px / 255).
Tensorf image_to_tensor(const ImageU8& img);

/// Clamps to [0,1] and quantizes round-half-up to 8-bit RGB.
ImageU8 tensor_to_image(const Tensorf& frame);

inline std::uint8_t quantize_u8(float v) {
  float c = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
  int q = static_cast<int>(std::floor(c * 255.0f + 0.5f));
  return static_cast<std::uint8_t>(q < 0 ? 0 : (q > 255 ? 255 : q));
}

}  // namespace rstt
