#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace rap::io {

struct GrayImage {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> pixels;  // row-major
};

// 8-bit grayscale PNG. Output is deterministic for identical pixels.
void write_png(const std::filesystem::path& path, const GrayImage& image);
// Any PNG, converted to 8-bit grayscale.
GrayImage read_png(const std::filesystem::path& path);

// round(255 * v) clamped to [0, 255].
std::uint8_t quantize(double v);

}  // namespace rap::io
