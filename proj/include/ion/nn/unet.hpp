#pragma once
// The input optimisation network: a symmetric u-net with N encoder and N
// decoder blocks, bicubic upsampling, pre-pool skip connections and a tanh
// output in (-1, 1).

#include <cstdint>
#include <vector>

#include "ion/nn/model.hpp"

namespace ion::nn {

struct UNetConfig {
  std::size_t n_blocks = 4;
  std::size_t base_channels = 64;
  std::size_t in_channels = 3;
  std::size_t out_channels = 3;  // 3 for RGB, 1 for the V-channel GAN generator
  double leaky_slope = 0.01;

  void validate() const;
  nlohmann::json to_json() const;
  static UNetConfig from_json(const nlohmann::json& j);
};

// c1 = base, c2 = round(1.5 * base), then c[k+2] = 2 * c[k]: 64, 96, 128, 192, 256, ...
std::vector<std::size_t> channel_schedule(std::size_t base_channels, std::size_t n_blocks);

// Feature shapes seen during one forward pass.
struct UNetTrace {
  Shape deepest;                     // after the last encoder pool
  std::vector<Shape> concat_shapes;  // per decoder block, deepest first
};

template <typename T>
class UNet final : public Model<T> {
 public:
  UNet(const UNetConfig& config, std::uint64_t seed);

  Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x) override { return forward(tape, x, nullptr); }
  Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x, UNetTrace* trace);
  nlohmann::json config() const override;
  const UNetConfig& unet_config() const { return config_; }

 private:
  struct Block {
    Conv<T> conv1;
    BatchNorm<T>* bn1;
    Conv<T> conv2;
    BatchNorm<T>* bn2;
  };
  UNetConfig config_;
  std::vector<Block> encoder_;
  std::vector<Block> decoder_;  // decoder_[k] mirrors encoder_[k]
  Conv<T> head_;
};

template <typename T>
std::unique_ptr<UNet<T>> build_ion(const UNetConfig& config, std::uint64_t seed);

// Finite-difference check of a whole double-precision ION (N=2, C1=2, 8x8
// input, batch 2, training-mode batch norm) against the tape. Checks the input
// and every parameter except conv biases that feed a batch norm, whose exact
// gradient is identically zero. Elements failing at eps are re-measured at
// eps/10 (see GradCheckOptions::refine_above). Returns the max relative error.
double tiny_ion_gradcheck(std::uint64_t seed);

extern template class UNet<float>;
extern template class UNet<double>;

}  // namespace ion::nn
