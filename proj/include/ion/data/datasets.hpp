#pragma once
// Synthetic stand-in datasets and CIFAR-10 binary ingestion.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ion/degrade/image.hpp"

namespace ion::data {

using degrade::Image;

// One classification or segmentation sample. `target` holds one class id for
// classification and H*W row-major ids for segmentation.
struct Sample {
  Image image;
  std::vector<std::int32_t> target;
  std::string domain = "clean";
  std::uint64_t seed = 0;  // generator seed; 0 for ingested data

  std::int32_t label() const { return target.at(0); }
  bool operator==(const Sample&) const = default;
};

inline constexpr std::size_t kShapeClasses = 6;  // circle, square, triangle, cross, ring, bar
inline constexpr std::size_t kSceneClasses = 5;  // background, ground, circle, rectangle, pole

const std::vector<std::string>& shape_class_names();
const std::vector<std::string>& scene_class_names();

// Sample i has label i mod 6 and is rendered from split_seed(seed, {i}), so a
// prefix of the list is itself class-balanced and any index split is disjoint.
std::vector<Sample> gen_shapes_cls(std::size_t n, std::uint64_t seed, std::size_t size = 32);

// Street-like scenes: sky, ground band, circles, rectangles, thin poles. Labels
// come from the same per-pixel-centre geometry test that paints the colours.
std::vector<Sample> gen_shapes_seg(std::size_t n, std::uint64_t seed, std::size_t size = 64);

// Records of 1 label byte + 3072 bytes (1024 R, 1024 G, 1024 B, row-major).
std::vector<Sample> load_cifar10_binary(const std::filesystem::path& path);
std::vector<Sample> parse_cifar10_binary(const std::string& bytes);

// Index partition [0, n_train) / [n_train, n).
std::pair<std::vector<Sample>, std::vector<Sample>> split_at(std::vector<Sample> all,
                                                             std::size_t n_train);

// Writes images as PPM, segmentation labels as PGM (P5) and manifest.csv with
// columns index, domain, label (class id or label-map path), seed.
void write_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples,
                   bool segmentation);

}  // namespace ion::data
