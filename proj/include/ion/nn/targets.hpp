#pragma once
// Small stand-in target networks and the GAN discriminator.

#include <cstdint>
#include <string>

#include "ion/nn/model.hpp"

namespace ion::nn {

enum class TargetKind { kClassifier, kSegmenter, kDiscriminator };

std::string target_kind_name(TargetKind kind);
TargetKind parse_target_kind(const std::string& name);

struct TargetNetConfig {
  TargetKind kind = TargetKind::kClassifier;
  std::size_t width = 16;
  std::size_t depth = 2;
  std::size_t num_classes = 6;  // ignored by the discriminator
  std::size_t in_channels = 3;
  double leaky_slope = 0.01;

  void validate() const;
  nlohmann::json to_json() const;
  static TargetNetConfig from_json(const nlohmann::json& j);
};

// Stem conv, then `depth` stages of (widening conv, residual block), pooling
// between stages; global average pool; linear to K logits.
template <typename T>
class Classifier final : public Model<T> {
 public:
  Classifier(const TargetNetConfig& config, std::uint64_t seed);
  Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x) override;
  nlohmann::json config() const override { return config_.to_json(); }

 private:
  struct Stage {
    Conv<T> widen;
    BatchNorm<T>* widen_bn;
    Conv<T> res1;
    BatchNorm<T>* res1_bn;
    Conv<T> res2;
    BatchNorm<T>* res2_bn;
  };
  TargetNetConfig config_;
  Conv<T> stem_;
  BatchNorm<T>* stem_bn_;
  std::vector<Stage> stages_;
  Tensor<T> fc_w_, fc_b_;
};

// A compact u-net (one conv per level, bicubic upsampling) with a 1x1 head
// producing K channels at input resolution.
template <typename T>
class Segmenter final : public Model<T> {
 public:
  Segmenter(const TargetNetConfig& config, std::uint64_t seed);
  Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x) override;
  nlohmann::json config() const override { return config_.to_json(); }

 private:
  struct Level {
    Conv<T> conv;
    BatchNorm<T>* bn;
  };
  TargetNetConfig config_;
  std::vector<Level> down_;
  Level bottom_;
  std::vector<Level> up_;  // up_[l] mirrors down_[l]
  Conv<T> head_;
};

// Stride-2 4x4 conv stack with leaky ReLU, global average pool, linear to one
// real/fake logit per image.
template <typename T>
class Discriminator final : public Model<T> {
 public:
  Discriminator(const TargetNetConfig& config, std::uint64_t seed);
  Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x) override;
  nlohmann::json config() const override { return config_.to_json(); }

 private:
  TargetNetConfig config_;
  std::vector<Conv<T>> convs_;
  Tensor<T> fc_w_, fc_b_;
};

template <typename T>
std::unique_ptr<Model<T>> build_target(const TargetNetConfig& config, std::uint64_t seed);

}  // namespace ion::nn
