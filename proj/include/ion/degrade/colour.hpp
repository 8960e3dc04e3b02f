#pragma once
// Hexcone RGB <-> HSV. Hue is stored as a fraction of a turn in [0, 1);
// achromatic pixels get hue 0.

#include <array>

#include "ion/degrade/image.hpp"

namespace ion::degrade {

std::array<double, 3> rgb_to_hsv(double r, double g, double b);
std::array<double, 3> hsv_to_rgb(double h, double s, double v);

// Throw std::invalid_argument when the input carries the wrong tag.
Image rgb_to_hsv(const Image& rgb);
Image hsv_to_rgb(const Image& hsv);

}  // namespace ion::degrade
