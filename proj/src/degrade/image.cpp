#include "ion/degrade/image.hpp"

#include <cstring>
#include <stdexcept>

namespace ion::degrade {

void check_unit_range(const Image& img, const std::string& who) {
  if (img.pixels.size() != img.height * img.width * 3)
    throw std::invalid_argument(who + ": pixel buffer does not match " +
                                std::to_string(img.height) + "x" + std::to_string(img.width));
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const float v = img.pixels[i];
    if (!(v >= 0.0f && v <= 1.0f))
      throw std::invalid_argument(who + ": value " + std::to_string(v) + " at index " +
                                  std::to_string(i) + " outside [0, 1]");
  }
}

std::uint64_t image_hash(const Image& img) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  const std::uint64_t dims[3] = {img.height, img.width, static_cast<std::uint64_t>(img.space)};
  mix(dims, sizeof dims);
  mix(img.pixels.data(), img.pixels.size() * sizeof(float));
  return h;
}

}  // namespace ion::degrade
