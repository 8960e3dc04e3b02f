#include "ion/degrade/ppm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ion::degrade {

std::uint8_t quantise(float v) {
  const double q = std::floor(std::clamp(static_cast<double>(v), 0.0, 1.0) * 255.0 + 0.5);
  return static_cast<std::uint8_t>(q);
}

std::string encode_ppm(const Image& rgb) {
  if (rgb.space != ColourSpace::kRGB) throw std::invalid_argument("encode_ppm: expected RGB");
  std::string out = "P6\n" + std::to_string(rgb.width) + " " + std::to_string(rgb.height) + "\n255\n";
  out.reserve(out.size() + rgb.pixels.size());
  for (float v : rgb.pixels) out.push_back(static_cast<char>(quantise(v)));
  return out;
}

Image decode_ppm(const std::string& bytes) {
  std::size_t pos = 0;
  auto fail = [](const std::string& why) { throw std::runtime_error("ppm: " + why); };
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&] {
    skip_space();
    std::size_t start = pos;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) fail("malformed header at byte " + std::to_string(start));
    return std::stoul(bytes.substr(start, pos - start));
  };
  if (bytes.compare(0, 2, "P6") != 0) fail("missing P6 magic");
  pos = 2;
  const std::size_t w = number(), h = number(), maxval = number();
  if (maxval != 255) fail("only maxval 255 is supported, got " + std::to_string(maxval));
  if (w == 0 || h == 0) fail("zero image dimension");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
    fail("missing whitespace after header");
  ++pos;
  if (bytes.size() - pos < w * h * 3)
    fail("truncated pixel data: need " + std::to_string(w * h * 3) + " bytes, have " +
         std::to_string(bytes.size() - pos));
  Image img(h, w);
  for (std::size_t i = 0; i < w * h * 3; ++i)
    img.pixels[i] = static_cast<float>(static_cast<unsigned char>(bytes[pos + i])) / 255.0f;
  return img;
}

void write_ppm(const std::filesystem::path& path, const Image& rgb) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  const std::string bytes = encode_ppm(rgb);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_ppm(ss.str());
}

}  // namespace ion::degrade
