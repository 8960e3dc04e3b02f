#pragma once
// Parameter container shared by the ION and the stand-in target networks.

#include <cstdint>
#include <deque>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "ion/ops.hpp"
#include "ion/tensor.hpp"

namespace ion::nn {

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
struct Conv {
  Tensor<T> weight;
  Tensor<T> bias;
  std::size_t stride = 1;
  std::size_t pad = 1;

  Tensor<T> operator()(Tape<T>* tape, const Tensor<T>& x) const {
    return ops::conv2d(tape, x, weight, bias, stride, pad);
  }
};

template <typename T>
struct BatchNorm {
  Tensor<T> gamma;
  Tensor<T> beta;
  ops::BatchNormStats<T> stats;
};

template <typename T>
class Model {
 public:
  virtual ~Model() = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  virtual Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x) = 0;
  // Architecture description, written into checkpoints.
  virtual nlohmann::json config() const = 0;

  const std::vector<NamedTensor<T>>& parameters() const { return params_; }
  std::vector<Tensor<T>> parameter_tensors() const;
  // Batch-norm running statistics, named "<layer>.running_mean" etc.
  std::vector<NamedTensor<T>> buffers() const;
  std::vector<std::pair<std::string, std::uint64_t*>> counters();

  void freeze();
  void unfreeze();
  bool frozen() const { return frozen_; }

  // Batch-norm mode: training uses batch statistics and updates the running
  // ones; evaluation reads the running statistics only.
  void set_training(bool on) { training_ = on; }
  bool training() const { return training_; }

  void zero_grad();

 protected:
  Model() = default;

  Tensor<T> add_param(const std::string& name, Shape shape);
  Conv<T> make_conv(const std::string& name, std::size_t in, std::size_t out, std::size_t k,
                    std::size_t stride, std::mt19937_64& rng, bool bias = true);
  BatchNorm<T>& make_batchnorm(const std::string& name, std::size_t channels);
  Tensor<T> make_linear_weight(const std::string& name, std::size_t in, std::size_t out,
                               std::mt19937_64& rng);

  // conv -> batch norm -> leaky ReLU
  Tensor<T> conv_bn_act(Tape<T>* tape, const Conv<T>& conv, BatchNorm<T>& bn, const Tensor<T>& x,
                        T slope);

 private:
  std::vector<NamedTensor<T>> params_;
  std::deque<std::pair<std::string, BatchNorm<T>>> norms_;
  bool frozen_ = false;
  bool training_ = true;
};

// Sum of element counts over the named parameter list.
template <typename T>
std::size_t param_count(const Model<T>& model);

// FNV-1a over the raw bytes of every parameter and buffer, in order.
template <typename T>
std::uint64_t parameter_checksum(const Model<T>& model);

extern template class Model<float>;
extern template class Model<double>;

}  // namespace ion::nn
