#pragma once
// Adam with a coupled L2 penalty: the penalty gradient lambda * p is added to
// the loss gradient before the moment estimates are updated.

#include <cstddef>
#include <vector>

#include "ion/tensor.hpp"

namespace ion {

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double l2 = 1e-6;
};

template <typename T>
class Adam {
 public:
  // Only parameters that require gradients are tracked; frozen tensors never
  // enter the optimiser state.
  Adam(const std::vector<Tensor<T>>& params, AdamOptions options);

  // Throws std::runtime_error, leaving every parameter untouched, if any
  // gradient is non-finite.
  void step();
  void zero_grad();

  std::size_t steps() const { return t_; }
  std::size_t num_tracked() const { return params_.size(); }
  const AdamOptions& options() const { return options_; }

 private:
  AdamOptions options_;
  std::vector<Tensor<T>> params_;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
  std::size_t t_ = 0;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace ion
