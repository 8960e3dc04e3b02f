#pragma once
// Per-epoch shuffling, per-sample domain draws with on-the-fly degradation, and
// stacking into [-1, 1] tensors.

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "ion/data/datasets.hpp"
#include "ion/degrade/degrade.hpp"
#include "ion/tensor.hpp"

namespace ion::data {

struct DomainMix {
  std::string name;
  double weight = 1.0;
  degrade::DegradeSpec spec;
};

struct MixSpec {
  std::vector<DomainMix> domains;

  void validate() const;
  nlohmann::json to_json() const;
  static MixSpec from_json(const nlohmann::json& j);

  static MixSpec clean_only();
};

// Independent categorical draws proportional to the mix weights.
std::vector<std::size_t> draw_domains(std::size_t n, const MixSpec& mix, std::mt19937_64& rng);

struct Batch {
  Tensor<float> x;      // (B, 3, H, W), degraded, in [-1, 1]
  Tensor<float> clean;  // same layout, undegraded; set when requested
  std::vector<std::int32_t> targets;
  std::vector<std::size_t> indices;  // into the dataset
  std::vector<std::size_t> domains;  // into mix.domains
};

// [0, 1] -> [-1, 1]
Tensor<float> images_to_tensor(const std::vector<const Image*>& images);
// [-1, 1] -> [0, 1], clipped; one image of a (B, 3, H, W) tensor.
Image tensor_to_image(const Tensor<float>& t, std::size_t index);

struct BatchOptions {
  std::size_t batch_size = 4;
  bool regenerate = true;   // fresh degradation seed each epoch
  bool with_clean = false;  // also stack the undegraded images
  bool shuffle = true;
};

// One epoch over `dataset`. The visiting order comes from split_seed(seed, {epoch}).
// When regenerating, each sample's domain is redrawn per epoch and its
// degradation seed is split_seed(seed, {i, d, epoch}); otherwise both are fixed
// per sample, so every epoch sees identical pixels in a new order.
class EpochBatches {
 public:
  EpochBatches(const std::vector<Sample>& dataset, const MixSpec& mix, BatchOptions options,
               std::uint64_t seed, std::size_t epoch);

  std::optional<Batch> next();
  std::size_t num_batches() const;
  const std::vector<std::size_t>& order() const { return order_; }
  const std::vector<std::size_t>& domains() const { return domains_; }

 private:
  const std::vector<Sample>& dataset_;
  MixSpec mix_;
  BatchOptions options_;
  std::uint64_t seed_;
  std::size_t epoch_;
  std::vector<std::size_t> order_;
  std::vector<std::size_t> domains_;  // per dataset index
  std::size_t cursor_ = 0;
};

}  // namespace ion::data
