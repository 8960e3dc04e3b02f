#include "ion/nn/model.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace ion::nn {

template <typename T>
std::vector<Tensor<T>> Model<T>::parameter_tensors() const {
  std::vector<Tensor<T>> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.tensor);
  return out;
}

template <typename T>
std::vector<NamedTensor<T>> Model<T>::buffers() const {
  std::vector<NamedTensor<T>> out;
  for (const auto& [name, bn] : norms_) {
    out.push_back({name + ".running_mean", bn.stats.running_mean});
    out.push_back({name + ".running_var", bn.stats.running_var});
  }
  return out;
}

template <typename T>
std::vector<std::pair<std::string, std::uint64_t*>> Model<T>::counters() {
  std::vector<std::pair<std::string, std::uint64_t*>> out;
  for (auto& [name, bn] : norms_) out.emplace_back(name + ".updates", &bn.stats.updates);
  return out;
}

template <typename T>
void Model<T>::freeze() {
  for (auto& p : params_) p.tensor.set_requires_grad(false);
  frozen_ = true;
}

template <typename T>
void Model<T>::unfreeze() {
  for (auto& p : params_) p.tensor.set_requires_grad(true);
  frozen_ = false;
}

template <typename T>
void Model<T>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

template <typename T>
Tensor<T> Model<T>::add_param(const std::string& name, Shape shape) {
  for (const auto& p : params_)
    if (p.name == name) throw std::logic_error("duplicate parameter name '" + name + "'");
  Tensor<T> t(std::move(shape));
  t.set_requires_grad(!frozen_);
  params_.push_back({name, t});
  return t;
}

template <typename T>
Conv<T> Model<T>::make_conv(const std::string& name, std::size_t in, std::size_t out,
                            std::size_t k, std::size_t stride, std::mt19937_64& rng, bool bias) {
  Conv<T> c;
  c.weight = add_param(name + ".weight", Shape{out, in, k, k});
  // He-uniform for leaky-ReLU networks.
  const double bound = std::sqrt(6.0 / static_cast<double>(in * k * k));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (T& v : c.weight.data()) v = static_cast<T>(u(rng));
  if (bias) c.bias = add_param(name + ".bias", Shape{out});
  c.stride = stride;
  c.pad = (k - 1) / 2;
  return c;
}

template <typename T>
BatchNorm<T>& Model<T>::make_batchnorm(const std::string& name, std::size_t channels) {
  BatchNorm<T> bn{add_param(name + ".gamma", Shape{channels}),
                  add_param(name + ".beta", Shape{channels}),
                  ops::BatchNormStats<T>(channels)};
  for (T& v : bn.gamma.data()) v = T(1);
  norms_.emplace_back(name, std::move(bn));
  return norms_.back().second;
}

template <typename T>
Tensor<T> Model<T>::make_linear_weight(const std::string& name, std::size_t in, std::size_t out,
                                       std::mt19937_64& rng) {
  Tensor<T> w = add_param(name, Shape{out, in});
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (T& v : w.data()) v = static_cast<T>(u(rng));
  return w;
}

template <typename T>
Tensor<T> Model<T>::conv_bn_act(Tape<T>* tape, const Conv<T>& conv, BatchNorm<T>& bn,
                                const Tensor<T>& x, T slope) {
  auto y = conv(tape, x);
  y = ops::batchnorm2d(tape, y, bn.gamma, bn.beta, bn.stats, {.train = training_});
  return ops::leaky_relu(tape, y, slope);
}

template <typename T>
std::size_t param_count(const Model<T>& model) {
  std::size_t n = 0;
  for (const auto& p : model.parameters()) n += p.tensor.numel();
  return n;
}

template <typename T>
std::uint64_t parameter_checksum(const Model<T>& model) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const Tensor<T>& t) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(t.ptr());
    for (std::size_t i = 0; i < t.numel() * sizeof(T); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& p : model.parameters()) mix(p.tensor);
  for (const auto& b : model.buffers()) mix(b.tensor);
  return h;
}

template class Model<float>;
template class Model<double>;
template std::size_t param_count(const Model<float>&);
template std::size_t param_count(const Model<double>&);
template std::uint64_t parameter_checksum(const Model<float>&);
template std::uint64_t parameter_checksum(const Model<double>&);

}  // namespace ion::nn
