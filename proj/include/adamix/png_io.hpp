#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace adamix {

/// 8-bit image, rows top to bottom, channels interleaved (1 gray or 3 RGB).
struct Image8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;
  std::vector<unsigned char> pixels;
};

/// Quantizes [C,H,W] planar values in [0, 1] (clamped) to 8 bits.
Image8 to_image8(const std::vector<double>& planar, std::size_t channels, std::size_t height,
                 std::size_t width);
/// Planar [C,H,W] values k / 255.
std::vector<double> from_image8(const Image8& image);

/// Throws IoError on failure.
void write_png(const std::string& path, const Image8& image);
Image8 read_png(const std::string& path);

}  // namespace adamix
