#include "ion/degrade/colour.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ion::degrade {

std::array<double, 3> rgb_to_hsv(double r, double g, double b) {
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double delta = mx - mn;
  double h = 0;
  if (delta > 0) {
    if (mx == r)
      h = (g - b) / delta;
    else if (mx == g)
      h = 2.0 + (b - r) / delta;
    else
      h = 4.0 + (r - g) / delta;
    h /= 6.0;
    if (h < 0) h += 1.0;
    if (h >= 1.0) h -= 1.0;
  }
  const double s = mx > 0 ? delta / mx : 0.0;
  return {h, s, mx};
}

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  if (s <= 0) return {v, v, v};
  const double hh = 6.0 * (h - std::floor(h));
  const int sector = std::min(5, static_cast<int>(hh));
  const double f = hh - sector;
  const double p = v * (1 - s);
  const double q = v * (1 - s * f);
  const double t = v * (1 - s * (1 - f));
  switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

namespace {

template <typename Fn>
Image convert(const Image& in, ColourSpace from, ColourSpace to, const char* who, Fn fn) {
  if (in.space != from)
    throw std::invalid_argument(std::string(who) + ": input has the wrong colour-space tag");
  Image out = in;
  out.space = to;
  for (std::size_t i = 0; i < in.num_pixels(); ++i) {
    const float* p = &in.pixels[3 * i];
    const auto c = fn(p[0], p[1], p[2]);
    for (int k = 0; k < 3; ++k)
      out.pixels[3 * i + k] = static_cast<float>(std::clamp(c[k], 0.0, 1.0));
  }
  return out;
}

}  // namespace

Image rgb_to_hsv(const Image& rgb) {
  return convert(rgb, ColourSpace::kRGB, ColourSpace::kHSV, "rgb_to_hsv",
                 [](double r, double g, double b) {
                   auto c = rgb_to_hsv(r, g, b);
                   // Float rounding can push a hue just below 1 up to 1.0f.
                   if (static_cast<float>(c[0]) >= 1.0f) c[0] = 0.0;
                   return c;
                 });
}

Image hsv_to_rgb(const Image& hsv) {
  return convert(hsv, ColourSpace::kHSV, ColourSpace::kRGB, "hsv_to_rgb",
                 [](double h, double s, double v) { return hsv_to_rgb(h, s, v); });
}

}  // namespace ion::degrade
