#pragma once
// Seeded image degradations. Every operator is a pure function of
// (image, parameters, seed) and keeps values in [0, 1].

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "ion/degrade/image.hpp"

namespace ion::degrade {

// ---- underexposure ----------------------------------------------------------

inline constexpr double kThetaFloor = 1e-3;
inline constexpr double kDarkFactor = 0.1;  // theta2 = 0.1 * theta1

struct UnderexposeParams {
  double theta1 = 0.5;
  double theta2 = 0.05;
  double mu = 0;     // V-channel mean the threshold was drawn from
  double sigma = 0;  // V-channel standard deviation

  static UnderexposeParams from_theta(double theta1) { return {theta1, kDarkFactor * theta1, 0, 0}; }
};

// Mean and population standard deviation of the V channel of an RGB image.
std::pair<double, double> value_moments(const Image& rgb);

// theta1 ~ U[max(mu - sigma, floor), mu] (clamped below 1 - floor), theta2 = 0.1 theta1.
UnderexposeParams sample_theta(const Image& rgb, std::mt19937_64& rng);

// The piecewise-linear value mapping: dark pixels are scaled by theta2/theta1,
// the rest stretched linearly so that 1 stays 1.
double underexpose_value(double v1, const UnderexposeParams& p);

// Applies the mapping to the V channel of an HSV image; H and S pass through.
Image underexpose_hsv(const Image& hsv, const UnderexposeParams& p);
Image underexpose(const Image& rgb, const UnderexposeParams& p);

// ---- other degradations -----------------------------------------------------

Image gaussian_noise(const Image& rgb, double sigma, std::mt19937_64& rng);

// Depth that increases linearly from `near` at the bottom row to `far` at the top.
std::vector<float> depth_ramp(std::size_t height, std::size_t width, double near, double far);

// I' = I t + A (1 - t), t = exp(-beta d); `depth` has one entry per pixel.
Image fog(const Image& rgb, double beta, const std::array<double, 3>& airlight,
          const std::vector<float>& depth);

struct RainParams {
  std::size_t count = 60;
  double length = 9;        // pixels
  double angle_deg = 12;    // from vertical
  double jitter_deg = 4;
  double thickness = 1;     // pixels
  double alpha = 0.6;
  std::array<double, 3> colour{0.85, 0.87, 0.92};
};

// Alpha-composites anti-aliased line segments; coverage of a pixel is
// clamp(thickness/2 + 0.5 - distance_to_segment, 0, 1).
Image rain_overlay(const Image& rgb, const RainParams& p, std::mt19937_64& rng);

struct DomainShiftParams {
  std::array<double, 3> gains{1.12, 0.96, 0.78};
  std::array<double, 3> biases{0.03, 0.0, 0.06};
  double gamma = 1.35;
};

// out_c = clip(gain_c in_c + bias_c, 0, 1) ^ gamma
Image domain_shift(const Image& rgb, const DomainShiftParams& p);

// ---- specs ------------------------------------------------------------------

enum class DegradeKind { kNone, kNoise, kUnderexpose, kFog, kRain, kDomainShift };

std::string degrade_kind_name(DegradeKind kind);
DegradeKind parse_degrade_kind(const std::string& name);

struct DegradeSpec {
  DegradeKind kind = DegradeKind::kNone;
  double noise_sigma = 0.1;
  double fog_beta = 1.2;
  std::array<double, 3> fog_airlight{0.82, 0.83, 0.85};
  double fog_depth_near = 0.1;
  double fog_depth_far = 1.6;
  RainParams rain;
  DomainShiftParams shift;

  void validate() const;
  // Only the kind plus the fields relevant to it.
  nlohmann::json to_json() const;
  // Unknown keys are rejected.
  static DegradeSpec from_json(const nlohmann::json& j);
  bool operator==(const DegradeSpec& o) const { return to_json() == o.to_json(); }
};

struct Applied {
  Image image;
  std::optional<UnderexposeParams> theta;  // set for underexposure
};

// Deterministic in (image, spec, seed).
Applied apply_degradation(const Image& rgb, const DegradeSpec& spec, std::uint64_t seed);

// A degraded copy of a dataset with per-image seeds split_seed(seed, {index}),
// built once so every evaluation sees identical pixels.
struct FixedEvalSet {
  DegradeSpec spec;
  std::uint64_t seed = 0;
  std::vector<Image> images;
  std::vector<std::uint64_t> image_seeds;
  std::vector<std::optional<UnderexposeParams>> thetas;

  std::uint64_t fingerprint() const;
};

FixedEvalSet build_fixed_eval_set(const std::vector<Image>& images, const DegradeSpec& spec,
                                  std::uint64_t seed);

}  // namespace ion::degrade
