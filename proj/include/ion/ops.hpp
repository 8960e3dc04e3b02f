#pragma once
// Differentiable operators over Tensor<T>, 4-D tensors are (B, C, H, W).
//
// Every operator takes a nullable tape. With a tape, and when any input
// requires gradients, the output requires gradients and a backward rule is
// recorded; with nullptr the call is a pure forward evaluation.

#include <cstdint>
#include <optional>
#include <span>

#include "ion/tensor.hpp"

namespace ion::ops {

template <typename T>
Tensor<T> conv2d(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride = 1, std::size_t pad = 0);

// Running statistics owned by a batch-norm layer.
template <typename T>
struct BatchNormStats {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  std::uint64_t updates = 0;

  explicit BatchNormStats(std::size_t channels = 1)
      : running_mean(Shape{channels}, T(0)), running_var(Shape{channels}, T(1)) {}
};

struct BatchNormOptions {
  bool train = true;
  double momentum = 0.1;
  double eps = 1e-5;
};

// Train mode normalises with biased batch variance and folds the batch
// statistics into `stats` (running_var takes the unbiased estimate). Eval mode
// uses the running statistics and throws if none were ever collected.
template <typename T>
Tensor<T> batchnorm2d(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& gamma,
                      const Tensor<T>& beta, BatchNormStats<T>& stats, BatchNormOptions options);

template <typename T>
Tensor<T> leaky_relu(Tape<T>* tape, const Tensor<T>& x, T slope = T(0.01));

// 2x2 window, stride 2. Gradient goes to the first maximal element in
// row-major order.
template <typename T>
Tensor<T> maxpool2d(Tape<T>* tape, const Tensor<T>& x);

// 2x2 mean, stride 2.
template <typename T>
Tensor<T> avgpool2d(Tape<T>* tape, const Tensor<T>& x);

// Separable cubic convolution (a = -0.5), half-pixel centres, clamped edges.
template <typename T>
Tensor<T> upsample_bicubic(Tape<T>* tape, const Tensor<T>& x);

template <typename T>
Tensor<T> concat_channels(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> slice_channels(Tape<T>* tape, const Tensor<T>& x, std::size_t begin, std::size_t count);

template <typename T>
Tensor<T> tanh(Tape<T>* tape, const Tensor<T>& x);

template <typename T>
Tensor<T> add(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b);

// scale * x + shift
template <typename T>
Tensor<T> affine(Tape<T>* tape, const Tensor<T>& x, T scale, T shift);

template <typename T>
Tensor<T> sum(Tape<T>* tape, const Tensor<T>& x);

// (B, C, H, W) -> (B, C)
template <typename T>
Tensor<T> global_avg_pool(Tape<T>* tape, const Tensor<T>& x);

// x (B, In), weight (Out, In), bias (Out) -> (B, Out)
template <typename T>
Tensor<T> linear(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

// Mean over non-ignored positions of -log softmax(logits)[target]. Logits are
// (B, K) with B targets, or (B, K, H, W) with B*H*W targets in (b, y, x) order.
template <typename T>
Tensor<T> softmax_cross_entropy(Tape<T>* tape, const Tensor<T>& logits,
                                std::span<const std::int32_t> targets,
                                std::optional<std::int32_t> ignore_id = std::nullopt);

template <typename T>
Tensor<T> l1_loss(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b);

// Mean logistic loss of every logit against a constant label in {0, 1}.
template <typename T>
Tensor<T> bce_with_logits(Tape<T>* tape, const Tensor<T>& logits, T label);

// Non-differentiable helpers.
template <typename T>
std::vector<std::int32_t> argmax_channels(const Tensor<T>& logits);

}  // namespace ion::ops
