#include "ion/data/batches.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <stdexcept>

#include "ion/seed.hpp"

namespace ion::data {

void MixSpec::validate() const {
  if (domains.empty()) throw std::invalid_argument("mix: at least one domain is required");
  double total = 0;
  std::set<std::string> names;
  for (const auto& d : domains) {
    if (!(d.weight >= 0)) throw std::invalid_argument("mix: weight of '" + d.name + "' is negative");
    if (!names.insert(d.name).second)
      throw std::invalid_argument("mix: duplicate domain '" + d.name + "'");
    d.spec.validate();
    total += d.weight;
  }
  if (!(total > 0)) throw std::invalid_argument("mix: weights must sum to > 0");
}

nlohmann::json MixSpec::to_json() const {
  auto arr = nlohmann::json::array();
  for (const auto& d : domains)
    arr.push_back({{"name", d.name}, {"weight", d.weight}, {"degrade", d.spec.to_json()}});
  return arr;
}

MixSpec MixSpec::from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw std::invalid_argument("mix must be a JSON array of domains");
  MixSpec m;
  for (const auto& e : j) {
    for (const auto& [key, _] : e.items())
      if (key != "name" && key != "weight" && key != "degrade")
        throw std::invalid_argument("unknown key '" + key + "' in mix domain");
    DomainMix d;
    d.name = e.at("name").get<std::string>();
    d.weight = e.value("weight", 1.0);
    if (e.contains("degrade")) d.spec = degrade::DegradeSpec::from_json(e.at("degrade"));
    m.domains.push_back(std::move(d));
  }
  m.validate();
  return m;
}

MixSpec MixSpec::clean_only() { return MixSpec{{DomainMix{"clean", 1.0, {}}}}; }

std::vector<std::size_t> draw_domains(std::size_t n, const MixSpec& mix, std::mt19937_64& rng) {
  mix.validate();
  std::vector<double> cum;
  double total = 0;
  for (const auto& d : mix.domains) cum.push_back(total += d.weight);
  std::uniform_real_distribution<double> u(0.0, total);
  std::vector<std::size_t> out(n);
  for (auto& d : out) {
    const double r = u(rng);
    d = static_cast<std::size_t>(std::upper_bound(cum.begin(), cum.end(), r) - cum.begin());
    d = std::min(d, cum.size() - 1);
    // Never land on a zero-weight domain through rounding at a boundary.
    while (mix.domains[d].weight == 0) d = (d + 1) % cum.size();
  }
  return out;
}

Tensor<float> images_to_tensor(const std::vector<const Image*>& images) {
  if (images.empty()) throw std::invalid_argument("images_to_tensor: no images");
  const std::size_t h = images[0]->height, w = images[0]->width;
  Tensor<float> t(Shape{images.size(), 3, h, w});
  float* out = t.ptr();
  for (std::size_t b = 0; b < images.size(); ++b) {
    const Image& img = *images[b];
    if (img.height != h || img.width != w)
      throw std::invalid_argument("images_to_tensor: mixed image sizes in one batch");
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < h * w; ++i)
        out[((b * 3 + c) * h * w) + i] = 2.0f * img.pixels[i * 3 + c] - 1.0f;
  }
  return t;
}

Image tensor_to_image(const Tensor<float>& t, std::size_t index) {
  if (t.rank() != 4 || t.dim(1) != 3 || index >= t.dim(0))
    throw std::invalid_argument("tensor_to_image: expected (B,3,H,W), got " + shape_str(t.shape()));
  const std::size_t h = t.dim(2), w = t.dim(3);
  Image img(h, w);
  const float* in = t.ptr() + index * 3 * h * w;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < h * w; ++i)
      img.pixels[i * 3 + c] = std::clamp((in[c * h * w + i] + 1.0f) * 0.5f, 0.0f, 1.0f);
  return img;
}

EpochBatches::EpochBatches(const std::vector<Sample>& dataset, const MixSpec& mix,
                           BatchOptions options, std::uint64_t seed, std::size_t epoch)
    : dataset_(dataset), mix_(mix), options_(options), seed_(seed), epoch_(epoch) {
  if (dataset.empty()) throw std::invalid_argument("epoch_batches: empty dataset");
  if (options.batch_size < 1) throw std::invalid_argument("epoch_batches: batch size must be >= 1");
  mix_.validate();
  std::mt19937_64 order_rng(split_seed(seed, {epoch}));
  order_.resize(dataset.size());
  std::iota(order_.begin(), order_.end(), 0);
  if (options_.shuffle) std::shuffle(order_.begin(), order_.end(), order_rng);
  std::mt19937_64 domain_rng(options_.regenerate ? split_seed(seed, {epoch, name_key("domains")})
                                                 : split_seed(seed, {name_key("domains")}));
  domains_ = draw_domains(dataset.size(), mix_, domain_rng);
}

std::size_t EpochBatches::num_batches() const {
  return (dataset_.size() + options_.batch_size - 1) / options_.batch_size;
}

std::optional<Batch> EpochBatches::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  const std::size_t end = std::min(order_.size(), cursor_ + options_.batch_size);
  Batch batch;
  std::vector<Image> degraded;
  degraded.reserve(end - cursor_);
  std::vector<const Image*> clean;
  for (std::size_t k = cursor_; k < end; ++k) {
    const std::size_t i = order_[k], d = domains_[i];
    const Sample& s = dataset_[i];
    const std::uint64_t dseed =
        options_.regenerate ? split_seed(seed_, {i, d, epoch_}) : split_seed(seed_, {i, d});
    degraded.push_back(degrade::apply_degradation(s.image, mix_.domains[d].spec, dseed).image);
    clean.push_back(&s.image);
    batch.targets.insert(batch.targets.end(), s.target.begin(), s.target.end());
    batch.indices.push_back(i);
    batch.domains.push_back(d);
  }
  std::vector<const Image*> ptrs;
  for (const auto& img : degraded) ptrs.push_back(&img);
  batch.x = images_to_tensor(ptrs);
  if (options_.with_clean) batch.clean = images_to_tensor(clean);
  cursor_ = end;
  return batch;
}

}  // namespace ion::data
