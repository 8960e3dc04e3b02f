#pragma once
// H x W x 3 float image, channel-interleaved, values in [0, 1].

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace ion::degrade {

enum class ColourSpace { kRGB, kHSV };

struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  ColourSpace space = ColourSpace::kRGB;
  std::vector<float> pixels;  // (y * width + x) * 3 + c

  Image() = default;
  Image(std::size_t h, std::size_t w, float fill = 0.0f, ColourSpace cs = ColourSpace::kRGB)
      : height(h), width(w), space(cs), pixels(h * w * 3, fill) {}

  float& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * 3 + c]; }
  float at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(y * width + x) * 3 + c];
  }
  std::size_t num_pixels() const { return height * width; }

  bool operator==(const Image&) const = default;
};

// Throws std::invalid_argument unless every value lies in [0, 1].
void check_unit_range(const Image& img, const std::string& who);

// 64-bit FNV-1a over dims, tag and pixel bytes.
std::uint64_t image_hash(const Image& img);

}  // namespace ion::degrade
