#pragma once
// Binary PPM (P6, maxval 255). Quantisation is round-half-up: floor(255 v + 0.5).

#include <cstdint>
#include <filesystem>
#include <string>

#include "ion/degrade/image.hpp"

namespace ion::degrade {

std::uint8_t quantise(float v);

std::string encode_ppm(const Image& rgb);
Image decode_ppm(const std::string& bytes);

void write_ppm(const std::filesystem::path& path, const Image& rgb);
Image read_ppm(const std::filesystem::path& path);

}  // namespace ion::degrade
