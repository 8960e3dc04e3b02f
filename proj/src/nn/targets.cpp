#include "ion/nn/targets.hpp"

#include <stdexcept>

namespace ion::nn {

std::string target_kind_name(TargetKind kind) {
  switch (kind) {
    case TargetKind::kClassifier: return "classifier";
    case TargetKind::kSegmenter: return "segmenter";
    case TargetKind::kDiscriminator: return "discriminator";
  }
  return "?";
}

TargetKind parse_target_kind(const std::string& name) {
  if (name == "classifier") return TargetKind::kClassifier;
  if (name == "segmenter") return TargetKind::kSegmenter;
  if (name == "discriminator") return TargetKind::kDiscriminator;
  throw std::invalid_argument("unknown target kind '" + name + "'");
}

void TargetNetConfig::validate() const {
  if (width < 1) throw std::invalid_argument("target: width must be >= 1");
  if (depth < 1) throw std::invalid_argument("target: depth must be >= 1");
  if (kind != TargetKind::kDiscriminator && num_classes < 2)
    throw std::invalid_argument("target: num_classes must be >= 2");
  if (in_channels < 1) throw std::invalid_argument("target: in_channels must be >= 1");
  if (!(leaky_slope > 0 && leaky_slope < 1))
    throw std::invalid_argument("target: leaky_slope must lie in (0, 1)");
}

nlohmann::json TargetNetConfig::to_json() const {
  return {{"kind", target_kind_name(kind)},   {"width", width},
          {"depth", depth},                   {"num_classes", num_classes},
          {"in_channels", in_channels},       {"leaky_slope", leaky_slope}};
}

TargetNetConfig TargetNetConfig::from_json(const nlohmann::json& j) {
  TargetNetConfig c;
  c.kind = parse_target_kind(j.at("kind").get<std::string>());
  c.width = j.value("width", c.width);
  c.depth = j.value("depth", c.depth);
  c.num_classes = j.value("num_classes", c.num_classes);
  c.in_channels = j.value("in_channels", c.in_channels);
  c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
  c.validate();
  return c;
}

namespace {

template <typename T>
void require_4d(const Tensor<T>& x, std::size_t channels, const char* who) {
  if (x.rank() != 4 || x.dim(1) != channels)
    throw std::invalid_argument(std::string(who) + ": expected (B," + std::to_string(channels) +
                                ",H,W) input, got " + shape_str(x.shape()));
}

}  // namespace

// ---- classifier -----------------------------------------------------------

template <typename T>
Classifier<T>::Classifier(const TargetNetConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const std::size_t w = config_.width;
  stem_ = this->make_conv("stem", config_.in_channels, w, 3, 1, rng);
  stem_bn_ = &this->make_batchnorm("stem.bn", w);
  std::size_t c = w;
  for (std::size_t s = 0; s < config_.depth; ++s) {
    const std::string name = "stage" + std::to_string(s);
    const std::size_t out = s == 0 ? w : 2 * c;
    Stage st;
    st.widen = this->make_conv(name + ".widen", c, out, 3, 1, rng);
    st.widen_bn = &this->make_batchnorm(name + ".widen_bn", out);
    st.res1 = this->make_conv(name + ".res1", out, out, 3, 1, rng);
    st.res1_bn = &this->make_batchnorm(name + ".res1_bn", out);
    st.res2 = this->make_conv(name + ".res2", out, out, 3, 1, rng);
    st.res2_bn = &this->make_batchnorm(name + ".res2_bn", out);
    stages_.push_back(st);
    c = out;
  }
  fc_w_ = this->make_linear_weight("fc.weight", c, config_.num_classes, rng);
  fc_b_ = this->add_param("fc.bias", Shape{config_.num_classes});
}

template <typename T>
Tensor<T> Classifier<T>::forward(Tape<T>* tape, const Tensor<T>& x) {
  require_4d(x, config_.in_channels, "classifier");
  const T slope = static_cast<T>(config_.leaky_slope);
  const ops::BatchNormOptions bn_opts{.train = this->training()};
  auto h = this->conv_bn_act(tape, stem_, *stem_bn_, x, slope);
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    auto& st = stages_[s];
    if (s > 0 && h.dim(2) % 2 == 0 && h.dim(3) % 2 == 0) h = ops::maxpool2d(tape, h);
    h = this->conv_bn_act(tape, st.widen, *st.widen_bn, h, slope);
    auto r = this->conv_bn_act(tape, st.res1, *st.res1_bn, h, slope);
    r = ops::batchnorm2d(tape, st.res2(tape, r), st.res2_bn->gamma, st.res2_bn->beta,
                         st.res2_bn->stats, bn_opts);
    h = ops::leaky_relu(tape, ops::add(tape, h, r), slope);
  }
  return ops::linear(tape, ops::global_avg_pool(tape, h), fc_w_, fc_b_);
}

// ---- segmenter ------------------------------------------------------------

template <typename T>
Segmenter<T>::Segmenter(const TargetNetConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  std::size_t prev = config_.in_channels;
  std::vector<std::size_t> widths;
  for (std::size_t l = 0; l < config_.depth; ++l) {
    const std::size_t c = config_.width << l;
    widths.push_back(c);
    const std::string name = "down" + std::to_string(l);
    down_.push_back({this->make_conv(name + ".conv", prev, c, 3, 1, rng),
                     &this->make_batchnorm(name + ".bn", c)});
    prev = c;
  }
  const std::size_t cb = config_.width << config_.depth;
  bottom_ = {this->make_conv("bottom.conv", prev, cb, 3, 1, rng),
             &this->make_batchnorm("bottom.bn", cb)};
  prev = cb;
  up_.resize(config_.depth);
  for (std::size_t l = config_.depth; l-- > 0;) {
    const std::string name = "up" + std::to_string(l);
    up_[l] = {this->make_conv(name + ".conv", prev + widths[l], widths[l], 3, 1, rng),
              &this->make_batchnorm(name + ".bn", widths[l])};
    prev = widths[l];
  }
  head_ = this->make_conv("head", prev, config_.num_classes, 1, 1, rng);
}

template <typename T>
Tensor<T> Segmenter<T>::forward(Tape<T>* tape, const Tensor<T>& x) {
  require_4d(x, config_.in_channels, "segmenter");
  const std::size_t factor = std::size_t{1} << config_.depth;
  if (x.dim(2) % factor || x.dim(3) % factor)
    throw std::invalid_argument("segmenter: H and W must be divisible by " +
                                std::to_string(factor) + ", got " + shape_str(x.shape()));
  const T slope = static_cast<T>(config_.leaky_slope);
  std::vector<Tensor<T>> skips;
  Tensor<T> h = x;
  for (auto& lv : down_) {
    h = this->conv_bn_act(tape, lv.conv, *lv.bn, h, slope);
    skips.push_back(h);
    h = ops::maxpool2d(tape, h);
  }
  h = this->conv_bn_act(tape, bottom_.conv, *bottom_.bn, h, slope);
  for (std::size_t l = up_.size(); l-- > 0;) {
    h = ops::concat_channels(tape, ops::upsample_bicubic(tape, h), skips[l]);
    h = this->conv_bn_act(tape, up_[l].conv, *up_[l].bn, h, slope);
  }
  return head_(tape, h);
}

// ---- discriminator --------------------------------------------------------

template <typename T>
Discriminator<T>::Discriminator(const TargetNetConfig& config, std::uint64_t seed)
    : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  std::size_t prev = config_.in_channels;
  for (std::size_t l = 0; l < config_.depth; ++l) {
    const std::size_t c = config_.width << l;
    convs_.push_back(this->make_conv("conv" + std::to_string(l), prev, c, 4, 2, rng));
    prev = c;
  }
  fc_w_ = this->make_linear_weight("fc.weight", prev, 1, rng);
  fc_b_ = this->add_param("fc.bias", Shape{1});
}

template <typename T>
Tensor<T> Discriminator<T>::forward(Tape<T>* tape, const Tensor<T>& x) {
  require_4d(x, config_.in_channels, "discriminator");
  const T slope = static_cast<T>(config_.leaky_slope);
  Tensor<T> h = x;
  for (const auto& c : convs_) {
    if (h.dim(2) < 2 || h.dim(3) < 2)
      throw std::invalid_argument("discriminator: input too small for depth " +
                                  std::to_string(config_.depth));
    h = ops::leaky_relu(tape, c(tape, h), slope);
  }
  return ops::linear(tape, ops::global_avg_pool(tape, h), fc_w_, fc_b_);
}

template <typename T>
std::unique_ptr<Model<T>> build_target(const TargetNetConfig& config, std::uint64_t seed) {
  switch (config.kind) {
    case TargetKind::kClassifier: return std::make_unique<Classifier<T>>(config, seed);
    case TargetKind::kSegmenter: return std::make_unique<Segmenter<T>>(config, seed);
    case TargetKind::kDiscriminator: return std::make_unique<Discriminator<T>>(config, seed);
  }
  throw std::invalid_argument("unknown target kind");
}

template class Classifier<float>;
template class Classifier<double>;
template class Segmenter<float>;
template class Segmenter<double>;
template class Discriminator<float>;
template class Discriminator<double>;
template std::unique_ptr<Model<float>> build_target(const TargetNetConfig&, std::uint64_t);
template std::unique_ptr<Model<double>> build_target(const TargetNetConfig&, std::uint64_t);

}  // namespace ion::nn
