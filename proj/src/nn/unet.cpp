#include "ion/nn/unet.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "ion/gradcheck.hpp"

namespace ion::nn {

void UNetConfig::validate() const {
  if (n_blocks < 1) throw std::invalid_argument("unet: n_blocks must be >= 1");
  if (base_channels < 1) throw std::invalid_argument("unet: base_channels must be >= 1");
  if (in_channels < 1) throw std::invalid_argument("unet: in_channels must be >= 1");
  if (out_channels != 1 && out_channels != 3)
    throw std::invalid_argument("unet: out_channels must be 1 or 3");
  if (!(leaky_slope > 0 && leaky_slope < 1))
    throw std::invalid_argument("unet: leaky_slope must lie in (0, 1)");
}

nlohmann::json UNetConfig::to_json() const {
  return {{"n_blocks", n_blocks},
          {"base_channels", base_channels},
          {"in_channels", in_channels},
          {"out_channels", out_channels},
          {"leaky_slope", leaky_slope}};
}

UNetConfig UNetConfig::from_json(const nlohmann::json& j) {
  UNetConfig c;
  c.n_blocks = j.at("n_blocks").get<std::size_t>();
  c.base_channels = j.at("base_channels").get<std::size_t>();
  c.in_channels = j.value("in_channels", c.in_channels);
  c.out_channels = j.value("out_channels", c.out_channels);
  c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
  c.validate();
  return c;
}

std::vector<std::size_t> channel_schedule(std::size_t base_channels, std::size_t n_blocks) {
  std::vector<std::size_t> c;
  c.reserve(n_blocks);
  for (std::size_t k = 0; k < n_blocks; ++k) {
    if (k == 0)
      c.push_back(base_channels);
    else if (k == 1)
      c.push_back(static_cast<std::size_t>(std::lround(1.5 * static_cast<double>(base_channels))));
    else
      c.push_back(2 * c[k - 2]);
  }
  return c;
}

template <typename T>
UNet<T>::UNet(const UNetConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const auto widths = channel_schedule(config_.base_channels, config_.n_blocks);
  std::size_t prev = config_.in_channels;
  for (std::size_t k = 0; k < config_.n_blocks; ++k) {
    const std::string name = "enc" + std::to_string(k);
    Block b;
    b.conv1 = this->make_conv(name + ".conv1", prev, widths[k], 3, 1, rng);
    b.bn1 = &this->make_batchnorm(name + ".bn1", widths[k]);
    b.conv2 = this->make_conv(name + ".conv2", widths[k], widths[k], 3, 1, rng);
    b.bn2 = &this->make_batchnorm(name + ".bn2", widths[k]);
    encoder_.push_back(b);
    prev = widths[k];
  }
  // Decoder block k sees concat(upsampled path, skip k) = 2 * c_k channels and
  // reduces to the mirrored width c_{k-1} (c_1 for the outermost block).
  decoder_.resize(config_.n_blocks);
  for (std::size_t kk = config_.n_blocks; kk-- > 0;) {
    const std::string name = "dec" + std::to_string(kk);
    const std::size_t out = kk > 0 ? widths[kk - 1] : widths[0];
    Block b;
    b.conv1 = this->make_conv(name + ".conv1", 2 * widths[kk], out, 3, 1, rng);
    b.bn1 = &this->make_batchnorm(name + ".bn1", out);
    b.conv2 = this->make_conv(name + ".conv2", out, out, 3, 1, rng);
    b.bn2 = &this->make_batchnorm(name + ".bn2", out);
    decoder_[kk] = b;
  }
  head_ = this->make_conv("head", widths[0], config_.out_channels, 3, 1, rng);
}

template <typename T>
Tensor<T> UNet<T>::forward(Tape<T>* tape, const Tensor<T>& x, UNetTrace* trace) {
  if (x.rank() != 4 || x.dim(1) != config_.in_channels)
    throw std::invalid_argument("ion forward: expected (B," + std::to_string(config_.in_channels) +
                                ",H,W) input, got " + shape_str(x.shape()));
  const std::size_t factor = std::size_t{1} << config_.n_blocks;
  if (x.dim(2) % factor || x.dim(3) % factor)
    throw std::invalid_argument("ion forward: H and W must be divisible by 2^N = " +
                                std::to_string(factor) + ", got " + shape_str(x.shape()));
  const T slope = static_cast<T>(config_.leaky_slope);
  std::vector<Tensor<T>> skips;
  Tensor<T> h = x;
  for (auto& b : encoder_) {
    h = this->conv_bn_act(tape, b.conv1, *b.bn1, h, slope);
    h = this->conv_bn_act(tape, b.conv2, *b.bn2, h, slope);
    skips.push_back(h);
    h = ops::maxpool2d(tape, h);
  }
  if (trace) {
    trace->deepest = h.shape();
    trace->concat_shapes.clear();
  }
  for (std::size_t kk = config_.n_blocks; kk-- > 0;) {
    auto& b = decoder_[kk];
    h = ops::concat_channels(tape, ops::upsample_bicubic(tape, h), skips[kk]);
    if (trace) trace->concat_shapes.push_back(h.shape());
    h = this->conv_bn_act(tape, b.conv1, *b.bn1, h, slope);
    h = this->conv_bn_act(tape, b.conv2, *b.bn2, h, slope);
  }
  return ops::tanh(tape, head_(tape, h));
}

template <typename T>
nlohmann::json UNet<T>::config() const {
  auto j = config_.to_json();
  j["kind"] = "ion";
  return j;
}

template <typename T>
std::unique_ptr<UNet<T>> build_ion(const UNetConfig& config, std::uint64_t seed) {
  return std::make_unique<UNet<T>>(config, seed);
}

double tiny_ion_gradcheck(std::uint64_t seed) {
  UNetConfig cfg;
  cfg.n_blocks = 2;
  cfg.base_channels = 2;
  UNet<double> g(cfg, seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> u(-1, 1);
  // Non-zero head bias so that parameter is exercised too.
  for (const auto& p : g.parameters())
    if (p.name == "head.bias") {
      Tensor<double> b = p.tensor;
      for (double& v : b.data()) v = u(rng);
    }

  Tensor<double> x(Shape{2, 3, 8, 8});
  for (double& v : x.data()) v = u(rng);
  Tensor<double> r(Shape{2, 3, 8, 8});
  for (double& v : r.data()) v = u(rng);

  std::vector<Tensor<double>> inputs{x};
  for (const auto& p : g.parameters()) {
    const bool feeds_bn = p.name.size() > 5 && p.name.compare(p.name.size() - 5, 5, ".bias") == 0 &&
                          p.name.rfind("head", 0) != 0;
    if (!feeds_bn) inputs.push_back(p.tensor);
  }
  ScalarFn f = [&g, r](Tape<double>* tape, std::vector<Tensor<double>>& in) {
    return ops::sum(tape, ops::mul(tape, g.forward(tape, in[0]), r));
  };
  GradCheckOptions opts;
  opts.refine_above = 1e-3;
  return grad_check(f, inputs, opts);
}

template class UNet<float>;
template class UNet<double>;
template std::unique_ptr<UNet<float>> build_ion(const UNetConfig&, std::uint64_t);
template std::unique_ptr<UNet<double>> build_ion(const UNetConfig&, std::uint64_t);

}  // namespace ion::nn
