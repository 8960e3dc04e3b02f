#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <stdexcept>

#include "ion/data/datasets.hpp"
#include "ion/seed.hpp"

namespace ion::data {

namespace {

using Rgb = std::array<double, 3>;
constexpr double kPi = 3.14159265358979323846;

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// Smooth textured background: base colour, linear gradient, two sinusoids.
struct Background {
  Rgb base;
  double gx, gy, amp1, fx1, fy1, ph1, amp2, fx2, fy2, ph2;

  static Background random(std::mt19937_64& rng, double lo, double hi, double grad, double tex) {
    Background b;
    for (double& c : b.base) c = uniform(rng, lo, hi);
    const double ang = uniform(rng, 0, 2 * kPi);
    b.gx = grad * std::cos(ang);
    b.gy = grad * std::sin(ang);
    b.amp1 = uniform(rng, 0.3, 1.0) * tex;
    b.fx1 = uniform(rng, -0.6, 0.6);
    b.fy1 = uniform(rng, -0.6, 0.6);
    b.ph1 = uniform(rng, 0, 2 * kPi);
    b.amp2 = uniform(rng, 0.3, 1.0) * tex;
    b.fx2 = uniform(rng, -1.2, 1.2);
    b.fy2 = uniform(rng, -1.2, 1.2);
    b.ph2 = uniform(rng, 0, 2 * kPi);
    return b;
  }

  // u, v in [-1, 1] image coordinates, x, y in pixels.
  Rgb at(double u, double v, double x, double y) const {
    const double t = gx * u + gy * v + amp1 * std::sin(fx1 * x + fy1 * y + ph1) +
                     amp2 * std::sin(fx2 * x + fy2 * y + ph2);
    return {base[0] + t, base[1] + t, base[2] + t};
  }
};

float clip01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

// ---- classification shapes ------------------------------------------------

struct ShapePose {
  double cx, cy, s, cos_r, sin_r;
};

// Inside test in the shape's rotated frame (rx, ry scaled by s).
bool inside_shape(std::size_t cls, double px, double py, const ShapePose& p) {
  const double dx = px - p.cx, dy = py - p.cy;
  const double rx = (p.cos_r * dx + p.sin_r * dy) / p.s;
  const double ry = (-p.sin_r * dx + p.cos_r * dy) / p.s;
  const double r2 = rx * rx + ry * ry;
  switch (cls) {
    case 0: return r2 <= 1.0;                                    // circle
    case 1: return std::abs(rx) <= 0.8 && std::abs(ry) <= 0.8;  // square
    case 2: {                                                    // triangle, circumradius 1
      // Half-planes of an equilateral triangle with a vertex at (0, -1).
      const double h = 0.5;
      return ry <= h && (std::sqrt(3.0) * rx - ry) <= 1.0 && (-std::sqrt(3.0) * rx - ry) <= 1.0;
    }
    case 3:  // cross
      return (std::abs(rx) <= 1.0 && std::abs(ry) <= 0.3) ||
             (std::abs(ry) <= 1.0 && std::abs(rx) <= 0.3);
    case 4: return r2 <= 1.0 && r2 >= 0.55 * 0.55;                // ring
    default: return std::abs(rx) <= 1.0 && std::abs(ry) <= 0.28;  // bar
  }
}

Sample render_shape(std::size_t cls, std::size_t size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double n = static_cast<double>(size);
  const auto bg = Background::random(rng, 0.25, 0.75, 0.12, 0.05);
  ShapePose pose;
  pose.s = uniform(rng, 0.2, 0.32) * n;
  pose.cx = uniform(rng, 0.38, 0.62) * n;
  pose.cy = uniform(rng, 0.38, 0.62) * n;
  const double rot = uniform(rng, 0, 2 * kPi);
  pose.cos_r = std::cos(rot);
  pose.sin_r = std::sin(rot);
  // Foreground differs from the background mean by a moderate signed offset.
  Rgb fg;
  const double sign = uniform(rng, 0, 1) < 0.5 ? -1.0 : 1.0;
  const double delta = uniform(rng, 0.18, 0.3);
  for (int c = 0; c < 3; ++c)
    fg[c] = std::clamp(bg.base[c] + sign * delta + uniform(rng, -0.08, 0.08), 0.0, 1.0);

  Sample s;
  s.image = Image(size, size);
  s.target = {static_cast<std::int32_t>(cls)};
  s.seed = seed;
  constexpr int kSub = 4;
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      int hits = 0;
      for (int sy = 0; sy < kSub; ++sy)
        for (int sx = 0; sx < kSub; ++sx)
          hits += inside_shape(cls, x + (sx + 0.5) / kSub, y + (sy + 0.5) / kSub, pose);
      const double cov = hits / double(kSub * kSub);
      const auto b = bg.at(2 * x / n - 1, 2 * y / n - 1, double(x), double(y));
      for (int c = 0; c < 3; ++c) s.image.at(y, x, c) = clip01(b[c] * (1 - cov) + fg[c] * cov);
    }
  return s;
}

// ---- segmentation scenes ----------------------------------------------------

struct Circle {
  double cx, cy, r;
  Rgb col;
};
struct Rect {
  double x0, y0, x1, y1;
  Rgb col;
};

Rgb jitter(std::mt19937_64& rng, Rgb c, double amount) {
  for (double& v : c) v = std::clamp(v + uniform(rng, -amount, amount), 0.0, 1.0);
  return c;
}

Sample render_scene(std::size_t size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double n = static_cast<double>(size);
  const double horizon = uniform(rng, 0.45, 0.65) * n;
  auto sky = Background::random(rng, 0.0, 0.0, 0.1, 0.02);
  sky.base = jitter(rng, {0.62, 0.7, 0.82}, 0.08);
  auto ground = Background::random(rng, 0.0, 0.0, 0.05, 0.06);
  ground.base = jitter(rng, {0.42, 0.38, 0.33}, 0.07);

  std::vector<Rect> rects;
  const int n_rects = 1 + static_cast<int>(uniform(rng, 0, 2));
  for (int i = 0; i < n_rects; ++i) {
    const double w = uniform(rng, 0.12, 0.3) * n, h = uniform(rng, 0.15, 0.35) * n;
    const double x0 = uniform(rng, 0, n - w);
    const double y1 = horizon + uniform(rng, -0.05, 0.1) * n;
    rects.push_back({x0, y1 - h, x0 + w, y1, jitter(rng, {0.3, 0.45, 0.6}, 0.1)});
  }
  std::vector<Circle> circles;
  const int n_circles = 1 + static_cast<int>(uniform(rng, 0, 2));
  for (int i = 0; i < n_circles; ++i) {
    const double r = uniform(rng, 0.07, 0.14) * n;
    circles.push_back({uniform(rng, r, n - r), uniform(rng, horizon - 0.1 * n, n - r), r,
                       jitter(rng, {0.78, 0.3, 0.22}, 0.1)});
  }
  std::vector<Rect> poles;
  const int n_poles = 1 + static_cast<int>(uniform(rng, 0, 3));
  for (int i = 0; i < n_poles; ++i) {
    const double w = uniform(rng, 1.5, 3.0), h = uniform(rng, 0.25, 0.5) * n;
    const double x0 = uniform(rng, 0, n - w);
    const double y1 = horizon + uniform(rng, 0.0, 0.2) * n;
    poles.push_back({x0, y1 - h, x0 + w, y1, jitter(rng, {0.92, 0.85, 0.3}, 0.08)});
  }

  Sample s;
  s.image = Image(size, size);
  s.target.assign(size * size, 0);
  s.seed = seed;
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      const double u = 2 * x / n - 1, v = 2 * y / n - 1;
      std::int32_t label = py >= horizon ? 1 : 0;
      Rgb col = label == 1 ? ground.at(u, v, px, py) : sky.at(u, v, px, py);
      for (const auto& r : rects)
        if (px >= r.x0 && px < r.x1 && py >= r.y0 && py < r.y1) {
          label = 3;
          col = r.col;
        }
      for (const auto& c : circles)
        if ((px - c.cx) * (px - c.cx) + (py - c.cy) * (py - c.cy) <= c.r * c.r) {
          label = 2;
          col = c.col;
        }
      for (const auto& p : poles)
        if (px >= p.x0 && px < p.x1 && py >= p.y0 && py < p.y1) {
          label = 4;
          col = p.col;
        }
      // Fine texture so flat regions are not trivially uniform.
      const double tex = 0.03 * std::sin(0.9 * px + 1.7 * py + static_cast<double>(seed % 97));
      for (int c = 0; c < 3; ++c) s.image.at(y, x, c) = clip01(col[c] + tex);
      s.target[y * size + x] = label;
    }
  return s;
}

}  // namespace

const std::vector<std::string>& shape_class_names() {
  static const std::vector<std::string> names{"circle", "square", "triangle", "cross", "ring", "bar"};
  return names;
}

const std::vector<std::string>& scene_class_names() {
  static const std::vector<std::string> names{"background", "ground", "circle", "rectangle", "pole"};
  return names;
}

std::vector<Sample> gen_shapes_cls(std::size_t n, std::uint64_t seed, std::size_t size) {
  if (n < 1) throw std::invalid_argument("gen_shapes_cls: n must be >= 1");
  if (size < 8) throw std::invalid_argument("gen_shapes_cls: size must be >= 8");
  std::vector<Sample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(render_shape(i % kShapeClasses, size, split_seed(seed, {i})));
  return out;
}

std::vector<Sample> gen_shapes_seg(std::size_t n, std::uint64_t seed, std::size_t size) {
  if (n < 1) throw std::invalid_argument("gen_shapes_seg: n must be >= 1");
  if (size < 16) throw std::invalid_argument("gen_shapes_seg: size must be >= 16");
  std::vector<Sample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(render_scene(size, split_seed(seed, {i})));
  return out;
}

std::pair<std::vector<Sample>, std::vector<Sample>> split_at(std::vector<Sample> all,
                                                             std::size_t n_train) {
  if (n_train > all.size()) throw std::invalid_argument("split_at: n_train exceeds dataset size");
  std::vector<Sample> test(std::make_move_iterator(all.begin() + static_cast<std::ptrdiff_t>(n_train)),
                           std::make_move_iterator(all.end()));
  all.resize(n_train);
  return {std::move(all), std::move(test)};
}

}  // namespace ion::data
