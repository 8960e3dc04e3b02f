#include "ion/degrade/degrade.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "ion/degrade/colour.hpp"
#include "ion/seed.hpp"

namespace ion::degrade {

namespace {

float clip01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

void require_rgb(const Image& img, const char* who) {
  if (img.space != ColourSpace::kRGB)
    throw std::invalid_argument(std::string(who) + ": expected an RGB image");
}

}  // namespace

// ---- underexposure ----------------------------------------------------------

std::pair<double, double> value_moments(const Image& rgb) {
  require_rgb(rgb, "value_moments");
  const std::size_t n = rgb.num_pixels();
  if (n == 0) return {0.0, 0.0};
  double sum = 0, sq = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const float* p = &rgb.pixels[3 * i];
    const double v = std::max({p[0], p[1], p[2]});
    sum += v;
    sq += v * v;
  }
  const double mu = sum / static_cast<double>(n);
  const double var = std::max(0.0, sq / static_cast<double>(n) - mu * mu);
  return {mu, std::sqrt(var)};
}

UnderexposeParams sample_theta(const Image& rgb, std::mt19937_64& rng) {
  const auto [mu, sigma] = value_moments(rgb);
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double hi = std::min(mu, 1.0 - kThetaFloor);
  double lo = std::max(mu - sigma, kThetaFloor);
  if (hi < kThetaFloor) hi = kThetaFloor;
  if (lo > hi) lo = hi;
  UnderexposeParams p = UnderexposeParams::from_theta(lo + (hi - lo) * u);
  p.mu = mu;
  p.sigma = sigma;
  return p;
}

double underexpose_value(double v1, const UnderexposeParams& p) {
  if (!(p.theta1 > 0 && p.theta1 < 1))
    throw std::invalid_argument("underexpose: theta1 = " + std::to_string(p.theta1) +
                                " outside (0, 1)");
  double v2;
  if (v1 <= p.theta1) {
    // theta2 built as 0.1 * theta1 takes the factor directly, so the dark
    // branch is exactly 0.1 * V1 rather than V1 * theta2 / theta1 after rounding.
    v2 = p.theta2 == kDarkFactor * p.theta1 ? v1 * kDarkFactor : v1 * p.theta2 / p.theta1;
  } else {
    // Written from the top end so that V1 = 1 maps to exactly 1.
    v2 = 1.0 - (1.0 - p.theta2) * ((1.0 - v1) / (1.0 - p.theta1));
  }
  return std::clamp(v2, 0.0, 1.0);
}

Image underexpose_hsv(const Image& hsv, const UnderexposeParams& p) {
  if (hsv.space != ColourSpace::kHSV)
    throw std::invalid_argument("underexpose_hsv: expected an HSV image");
  Image out = hsv;
  for (std::size_t i = 0; i < out.num_pixels(); ++i)
    out.pixels[3 * i + 2] = static_cast<float>(underexpose_value(out.pixels[3 * i + 2], p));
  return out;
}

Image underexpose(const Image& rgb, const UnderexposeParams& p) {
  return hsv_to_rgb(underexpose_hsv(rgb_to_hsv(rgb), p));
}

// ---- other degradations -----------------------------------------------------

Image gaussian_noise(const Image& rgb, double sigma, std::mt19937_64& rng) {
  require_rgb(rgb, "gaussian_noise");
  if (sigma < 0) throw std::invalid_argument("gaussian_noise: sigma must be >= 0");
  Image out = rgb;
  if (sigma == 0) return out;
  std::normal_distribution<double> n(0.0, sigma);
  for (float& v : out.pixels) v = clip01(v + n(rng));
  return out;
}

std::vector<float> depth_ramp(std::size_t height, std::size_t width, double near, double far) {
  std::vector<float> d(height * width);
  for (std::size_t y = 0; y < height; ++y) {
    const double t = height > 1 ? static_cast<double>(y) / static_cast<double>(height - 1) : 1.0;
    const float depth = static_cast<float>(far + (near - far) * t);
    std::fill_n(d.begin() + static_cast<std::ptrdiff_t>(y * width), width, depth);
  }
  return d;
}

Image fog(const Image& rgb, double beta, const std::array<double, 3>& airlight,
          const std::vector<float>& depth) {
  require_rgb(rgb, "fog");
  if (beta < 0) throw std::invalid_argument("fog: beta must be >= 0");
  for (double a : airlight)
    if (!(a >= 0 && a <= 1)) throw std::invalid_argument("fog: airlight must lie in [0, 1]");
  if (depth.size() != rgb.num_pixels())
    throw std::invalid_argument("fog: depth map has " + std::to_string(depth.size()) +
                                " entries for " + std::to_string(rgb.num_pixels()) + " pixels");
  Image out = rgb;
  for (std::size_t i = 0; i < rgb.num_pixels(); ++i) {
    if (depth[i] < 0) throw std::invalid_argument("fog: negative depth");
    const double t = std::exp(-beta * static_cast<double>(depth[i]));
    for (int c = 0; c < 3; ++c)
      out.pixels[3 * i + c] = clip01(rgb.pixels[3 * i + c] * t + airlight[c] * (1 - t));
  }
  return out;
}

Image rain_overlay(const Image& rgb, const RainParams& p, std::mt19937_64& rng) {
  require_rgb(rgb, "rain_overlay");
  if (p.length < 0 || p.thickness <= 0 || p.alpha < 0 || p.alpha > 1)
    throw std::invalid_argument("rain_overlay: invalid streak parameters");
  Image out = rgb;
  const double kPi = std::acos(-1.0);
  std::uniform_real_distribution<double> ux(0.0, static_cast<double>(rgb.width));
  std::uniform_real_distribution<double> uy(0.0, static_cast<double>(rgb.height));
  std::uniform_real_distribution<double> jitter(-p.jitter_deg, p.jitter_deg);
  const double reach = p.thickness / 2 + 0.5;
  for (std::size_t s = 0; s < p.count; ++s) {
    const double cx = ux(rng), cy = uy(rng);
    const double a = (p.angle_deg + jitter(rng)) * kPi / 180.0;
    const double dx = std::sin(a) * p.length / 2, dy = std::cos(a) * p.length / 2;
    const double x0 = cx - dx, y0 = cy - dy, x1 = cx + dx, y1 = cy + dy;
    const double seg_len2 = (x1 - x0) * (x1 - x0) + (y1 - y0) * (y1 - y0);
    const auto lo_x = static_cast<long>(std::floor(std::min(x0, x1) - reach));
    const auto hi_x = static_cast<long>(std::ceil(std::max(x0, x1) + reach));
    const auto lo_y = static_cast<long>(std::floor(std::min(y0, y1) - reach));
    const auto hi_y = static_cast<long>(std::ceil(std::max(y0, y1) + reach));
    for (long y = std::max(0L, lo_y); y <= std::min<long>(hi_y, long(rgb.height) - 1); ++y)
      for (long x = std::max(0L, lo_x); x <= std::min<long>(hi_x, long(rgb.width) - 1); ++x) {
        const double px = x + 0.5, py = y + 0.5;
        double t = seg_len2 > 0 ? ((px - x0) * (x1 - x0) + (py - y0) * (y1 - y0)) / seg_len2 : 0;
        t = std::clamp(t, 0.0, 1.0);
        const double qx = x0 + t * (x1 - x0) - px, qy = y0 + t * (y1 - y0) - py;
        const double cov = std::clamp(reach - std::sqrt(qx * qx + qy * qy), 0.0, 1.0);
        if (cov <= 0) continue;
        const double w = p.alpha * cov;
        for (int c = 0; c < 3; ++c) {
          float& v = out.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c);
          v = clip01(v * (1 - w) + p.colour[c] * w);
        }
      }
  }
  return out;
}

Image domain_shift(const Image& rgb, const DomainShiftParams& p) {
  require_rgb(rgb, "domain_shift");
  for (double g : p.gains)
    if (!(g > 0)) throw std::invalid_argument("domain_shift: gains must be > 0");
  if (!(p.gamma > 0)) throw std::invalid_argument("domain_shift: gamma must be > 0");
  Image out = rgb;
  for (std::size_t i = 0; i < rgb.num_pixels(); ++i)
    for (int c = 0; c < 3; ++c) {
      const double lin = std::clamp(p.gains[c] * rgb.pixels[3 * i + c] + p.biases[c], 0.0, 1.0);
      out.pixels[3 * i + c] = clip01(p.gamma == 1.0 ? lin : std::pow(lin, p.gamma));
    }
  return out;
}

// ---- specs ------------------------------------------------------------------

std::string degrade_kind_name(DegradeKind kind) {
  switch (kind) {
    case DegradeKind::kNone: return "none";
    case DegradeKind::kNoise: return "noise";
    case DegradeKind::kUnderexpose: return "underexpose";
    case DegradeKind::kFog: return "fog";
    case DegradeKind::kRain: return "rain";
    case DegradeKind::kDomainShift: return "domainshift";
  }
  return "?";
}

DegradeKind parse_degrade_kind(const std::string& name) {
  for (auto k : {DegradeKind::kNone, DegradeKind::kNoise, DegradeKind::kUnderexpose,
                 DegradeKind::kFog, DegradeKind::kRain, DegradeKind::kDomainShift})
    if (degrade_kind_name(k) == name) return k;
  throw std::invalid_argument("unknown degradation kind '" + name + "'");
}

void DegradeSpec::validate() const {
  if (noise_sigma < 0) throw std::invalid_argument("degrade: sigma must be >= 0");
  if (fog_beta < 0) throw std::invalid_argument("degrade: beta must be >= 0");
  if (fog_depth_near < 0 || fog_depth_far < 0)
    throw std::invalid_argument("degrade: depths must be >= 0");
  for (double a : fog_airlight)
    if (!(a >= 0 && a <= 1)) throw std::invalid_argument("degrade: airlight must lie in [0, 1]");
  if (rain.length < 0 || rain.thickness <= 0 || rain.alpha < 0 || rain.alpha > 1)
    throw std::invalid_argument("degrade: invalid rain parameters");
  for (double g : shift.gains)
    if (!(g > 0)) throw std::invalid_argument("degrade: gains must be > 0");
  if (!(shift.gamma > 0)) throw std::invalid_argument("degrade: gamma must be > 0");
}

nlohmann::json DegradeSpec::to_json() const {
  nlohmann::json j{{"kind", degrade_kind_name(kind)}};
  switch (kind) {
    case DegradeKind::kNoise: j["sigma"] = noise_sigma; break;
    case DegradeKind::kFog:
      j["beta"] = fog_beta;
      j["airlight"] = fog_airlight;
      j["depth_near"] = fog_depth_near;
      j["depth_far"] = fog_depth_far;
      break;
    case DegradeKind::kRain:
      j["count"] = rain.count;
      j["length"] = rain.length;
      j["angle_deg"] = rain.angle_deg;
      j["jitter_deg"] = rain.jitter_deg;
      j["thickness"] = rain.thickness;
      j["alpha"] = rain.alpha;
      j["colour"] = rain.colour;
      break;
    case DegradeKind::kDomainShift:
      j["gains"] = shift.gains;
      j["biases"] = shift.biases;
      j["gamma"] = shift.gamma;
      break;
    case DegradeKind::kNone:
    case DegradeKind::kUnderexpose: break;
  }
  return j;
}

DegradeSpec DegradeSpec::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("degradation spec must be a JSON object");
  DegradeSpec s;
  s.kind = parse_degrade_kind(j.at("kind").get<std::string>());
  std::set<std::string> allowed{"kind"};
  switch (s.kind) {
    case DegradeKind::kNoise: allowed.insert("sigma"); break;
    case DegradeKind::kFog: allowed.insert({"beta", "airlight", "depth_near", "depth_far"}); break;
    case DegradeKind::kRain:
      allowed.insert({"count", "length", "angle_deg", "jitter_deg", "thickness", "alpha", "colour"});
      break;
    case DegradeKind::kDomainShift: allowed.insert({"gains", "biases", "gamma"}); break;
    case DegradeKind::kNone:
    case DegradeKind::kUnderexpose: break;
  }
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key))
      throw std::invalid_argument("unknown key '" + key + "' for degradation kind '" +
                                  degrade_kind_name(s.kind) + "'");
  s.noise_sigma = j.value("sigma", s.noise_sigma);
  s.fog_beta = j.value("beta", s.fog_beta);
  s.fog_airlight = j.value("airlight", s.fog_airlight);
  s.fog_depth_near = j.value("depth_near", s.fog_depth_near);
  s.fog_depth_far = j.value("depth_far", s.fog_depth_far);
  s.rain.count = j.value("count", s.rain.count);
  s.rain.length = j.value("length", s.rain.length);
  s.rain.angle_deg = j.value("angle_deg", s.rain.angle_deg);
  s.rain.jitter_deg = j.value("jitter_deg", s.rain.jitter_deg);
  s.rain.thickness = j.value("thickness", s.rain.thickness);
  s.rain.alpha = j.value("alpha", s.rain.alpha);
  s.rain.colour = j.value("colour", s.rain.colour);
  s.shift.gains = j.value("gains", s.shift.gains);
  s.shift.biases = j.value("biases", s.shift.biases);
  s.shift.gamma = j.value("gamma", s.shift.gamma);
  s.validate();
  return s;
}

Applied apply_degradation(const Image& rgb, const DegradeSpec& spec, std::uint64_t seed) {
  require_rgb(rgb, "apply_degradation");
  std::mt19937_64 rng(seed);
  switch (spec.kind) {
    case DegradeKind::kNone: return {rgb, std::nullopt};
    case DegradeKind::kNoise: return {gaussian_noise(rgb, spec.noise_sigma, rng), std::nullopt};
    case DegradeKind::kUnderexpose: {
      const auto p = sample_theta(rgb, rng);
      return {underexpose(rgb, p), p};
    }
    case DegradeKind::kFog:
      return {fog(rgb, spec.fog_beta, spec.fog_airlight,
                  depth_ramp(rgb.height, rgb.width, spec.fog_depth_near, spec.fog_depth_far)),
              std::nullopt};
    case DegradeKind::kRain: return {rain_overlay(rgb, spec.rain, rng), std::nullopt};
    case DegradeKind::kDomainShift: return {domain_shift(rgb, spec.shift), std::nullopt};
  }
  throw std::invalid_argument("unknown degradation kind");
}

std::uint64_t FixedEvalSet::fingerprint() const {
  std::uint64_t h = splitmix64(seed);
  for (const auto& img : images) h = splitmix64(h ^ image_hash(img));
  return h;
}

FixedEvalSet build_fixed_eval_set(const std::vector<Image>& images, const DegradeSpec& spec,
                                  std::uint64_t seed) {
  spec.validate();
  FixedEvalSet set;
  set.spec = spec;
  set.seed = seed;
  set.images.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    const std::uint64_t s = split_seed(seed, {i});
    auto applied = apply_degradation(images[i], spec, s);
    set.images.push_back(std::move(applied.image));
    set.image_seeds.push_back(s);
    set.thetas.push_back(applied.theta);
  }
  return set;
}

}  // namespace ion::degrade
