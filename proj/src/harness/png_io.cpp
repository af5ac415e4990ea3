#include "adamix/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>

#include "adamix/checkpoint.hpp"

namespace adamix {

Image8 to_image8(const std::vector<double>& planar, std::size_t channels, std::size_t height,
                 std::size_t width) {
  if (channels != 1 && channels != 3) throw Error("png: 1 or 3 channels supported");
  if (planar.size() != channels * height * width) throw Error("png: pixel count mismatch");
  Image8 img{width, height, channels, std::vector<unsigned char>(planar.size())};
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t i = 0; i < height * width; ++i) {
      const double v = std::clamp(planar[c * height * width + i], 0.0, 1.0);
      img.pixels[i * channels + c] = (unsigned char)std::lround(v * 255.0);
    }
  return img;
}

std::vector<double> from_image8(const Image8& image) {
  const std::size_t plane = image.height * image.width;
  std::vector<double> planar(image.channels * plane);
  for (std::size_t c = 0; c < image.channels; ++c)
    for (std::size_t i = 0; i < plane; ++i)
      planar[c * plane + i] = double(image.pixels[i * image.channels + c]) / 255.0;
  return planar;
}

void write_png(const std::string& path, const Image8& image) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = png_uint_32(image.width);
  png.height = png_uint_32(image.height);
  png.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&png, path.c_str(), 0, image.pixels.data(), 0, nullptr)) {
    throw IoError("png: cannot write " + path + ": " + png.message);
  }
}

Image8 read_png(const std::string& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    throw IoError("png: cannot read " + path + ": " + png.message);
  }
  const bool gray = (png.format & PNG_FORMAT_FLAG_COLOR) == 0;
  png.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  Image8 img{png.width, png.height, gray ? 1u : 3u, {}};
  img.pixels.resize(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, img.pixels.data(), 0, nullptr)) {
    throw IoError("png: cannot decode " + path + ": " + png.message);
  }
  return img;
}

}  // namespace adamix
