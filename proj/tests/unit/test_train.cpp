#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "ion/degrade/colour.hpp"
#include "ion/nn/targets.hpp"
#include "ion/nn/unet.hpp"
#include "ion/seed.hpp"
#include "ion/train/train.hpp"

using namespace ion;
using namespace ion::train;

namespace {

struct Fixture {
  std::vector<data::Sample> train, val;
  TrainData data() const { return {&train, &val, Task::kClassification, 6}; }
};

Fixture small_cls(std::size_t n_train = 24, std::size_t n_val = 12) {
  auto all = data::gen_shapes_cls(n_train + n_val, 5, 16);
  auto [tr, va] = data::split_at(std::move(all), n_train);
  return {std::move(tr), std::move(va)};
}

nn::TargetNetConfig tiny_classifier() {
  nn::TargetNetConfig c;
  c.width = 4;
  c.depth = 2;
  return c;
}

nn::UNetConfig tiny_ion(std::size_t out = 3) {
  nn::UNetConfig c;
  c.n_blocks = 2;
  c.base_channels = 4;
  c.out_channels = out;
  return c;
}

data::MixSpec noisy_mix() {
  data::MixSpec m{{data::DomainMix{"clean", 1.0, {}}, data::DomainMix{"noise", 1.0, {}}}};
  m.domains[1].spec.kind = degrade::DegradeKind::kNoise;
  return m;
}

TrainConfig quick(Scheme s, std::size_t epochs = 2) {
  TrainConfig c;
  c.scheme = s;
  c.lr = 1e-3;
  c.max_epochs = epochs;
  c.seed = 11;
  if (s != Scheme::kBaseline) c.mix = noisy_mix();
  if (s == Scheme::kJoint) c.joint_init = JointInit::kPretrained;
  return c;
}

std::vector<std::vector<float>> params_of(const nn::Model<float>& m) {
  std::vector<std::vector<float>> out;
  for (const auto& p : m.parameters()) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

}  // namespace

TEST_CASE("early_stop rule traces") {
  const std::vector<double> decreasing{5, 4, 3, 2, 1, 0.5, 0.25};
  for (std::size_t n = 1; n <= decreasing.size(); ++n)
    CHECK_FALSE(early_stop(std::span(decreasing).first(n), 1));

  const std::vector<double> constant{1, 1, 1, 1, 1};
  CHECK_FALSE(early_stop(std::span(constant).first(3), 3));
  CHECK(early_stop(std::span(constant).first(4), 3));

  const std::vector<double> reset{1, 1, 1, 0.5};
  CHECK_FALSE(early_stop(reset, 3));
  CHECK_FALSE(early_stop(std::vector<double>{1, 1, 1, 0.5, 0.5, 0.5}, 3));
  CHECK(early_stop(std::vector<double>{1, 1, 1, 0.5, 0.5, 0.5, 0.5}, 3));

  // Improvements within the relative threshold do not count.
  CHECK(early_stop(std::vector<double>{1.0, 1.0 - 5e-6, 1.0 - 9e-6}, 2));
  CHECK_FALSE(early_stop(std::vector<double>{1.0, 1.0 - 5e-6, 1.0 - 2e-5}, 2));
  CHECK_FALSE(early_stop(std::vector<double>{}, 1));
  CHECK_THROWS_AS(early_stop(constant, 0), std::invalid_argument);
}

TEST_CASE("train config json round trip and validation") {
  TrainConfig c = quick(Scheme::kJoint);
  c.l2 = 0;
  c.gan.adversarial = 0.5;
  const auto j = c.to_json();
  CHECK(TrainConfig::from_json(j).to_json() == j);

  auto bad = j;
  bad["lr_decay"] = 0.1;
  CHECK_THROWS_WITH_AS(TrainConfig::from_json(bad), doctest::Contains("lr_decay"), std::invalid_argument);
  auto no_init = j;
  no_init.erase("joint_init");
  CHECK_THROWS_AS(TrainConfig::from_json(no_init), std::invalid_argument);
  auto stray_init = quick(Scheme::kFinetune).to_json();
  stray_init["joint_init"] = "random";
  CHECK_THROWS_AS(TrainConfig::from_json(stray_init), std::invalid_argument);
  auto zero_batch = j;
  zero_batch["batch_size"] = 0;
  CHECK_THROWS_AS(TrainConfig::from_json(zero_batch), std::invalid_argument);

  for (auto s : {Scheme::kBaseline, Scheme::kIonFixed, Scheme::kFinetune, Scheme::kIonOnFinetuned,
                 Scheme::kJoint, Scheme::kGan})
    CHECK(parse_scheme(scheme_name(s)) == s);
  CHECK_THROWS_AS(parse_scheme("ion"), std::invalid_argument);
}

TEST_CASE("pretraining is bit-for-bit reproducible and records contiguous epochs") {
  const Fixture fx = small_cls();
  const auto cfg = quick(Scheme::kBaseline, 3);
  auto a = nn::build_target<float>(tiny_classifier(), 3);
  auto b = nn::build_target<float>(tiny_classifier(), 3);
  const RunRecord ra = pretrain_target(*a, fx.data(), cfg);
  const RunRecord rb = pretrain_target(*b, fx.data(), cfg);
  CHECK(ra.csv() == rb.csv());
  CHECK(nn::parameter_checksum(*a) == nn::parameter_checksum(*b));
  REQUIRE(ra.epochs.size() == 3);
  for (std::size_t i = 0; i < ra.epochs.size(); ++i) {
    CHECK(ra.epochs[i].epoch == i + 1);
    CHECK(std::isfinite(ra.epochs[i].train_loss));
    CHECK(ra.epochs[i].val_loss.has_value());
  }
  CHECK(TrainConfig::from_json(ra.config).to_json() == ra.config);
  CHECK(ra.csv().rfind("epoch,train_loss,val_loss,val_metric\r\n", 0) == 0);
  CHECK(ra.steps == 3 * 6);
}

TEST_CASE("zero epochs leave the target unchanged") {
  const Fixture fx = small_cls();
  auto f = nn::build_target<float>(tiny_classifier(), 3);
  const auto before = nn::parameter_checksum(*f);
  const RunRecord r = pretrain_target(*f, fx.data(), quick(Scheme::kBaseline, 0));
  CHECK(r.epochs.empty());
  CHECK(nn::parameter_checksum(*f) == before);
}

TEST_CASE("pretraining preconditions") {
  const Fixture fx = small_cls();
  auto f = nn::build_target<float>(tiny_classifier(), 3);
  CHECK_THROWS_AS(pretrain_target(*f, fx.data(), quick(Scheme::kFinetune)), std::invalid_argument);
  f->freeze();
  CHECK_THROWS_AS(pretrain_target(*f, fx.data(), quick(Scheme::kBaseline)), std::invalid_argument);
  CHECK_THROWS_AS(finetune_target(*f, fx.data(), quick(Scheme::kFinetune)), std::invalid_argument);
}

TEST_CASE("ion against a frozen target never mutates it") {
  const Fixture fx = small_cls();
  auto f = nn::build_target<float>(tiny_classifier(), 3);
  pretrain_target(*f, fx.data(), quick(Scheme::kBaseline, 1));
  auto g = nn::build_ion<float>(tiny_ion(), 4);

  CHECK_THROWS_WITH_AS(train_ion_fixed(*g, *f, fx.data(), quick(Scheme::kIonFixed)),
                       doctest::Contains("frozen"), std::invalid_argument);

  f->freeze();
  const auto before = nn::parameter_checksum(*f);
  const auto g_before = nn::parameter_checksum(*g);
  for (auto s : {Scheme::kIonFixed, Scheme::kIonOnFinetuned}) {
    const RunRecord r = train_ion_fixed(*g, *f, fx.data(), quick(s));
    CHECK(r.scheme == scheme_name(s));
    REQUIRE(r.target_checksum_before.has_value());
    CHECK(*r.target_checksum_before == before);
    CHECK(*r.target_checksum_after == before);
  }
  CHECK(nn::parameter_checksum(*f) == before);
  CHECK(nn::parameter_checksum(*g) != g_before);
}

TEST_CASE("finetuning on a clean-only mix is continued pretraining") {
  const Fixture fx = small_cls();
  auto base = nn::build_target<float>(tiny_classifier(), 3);
  pretrain_target(*base, fx.data(), quick(Scheme::kBaseline, 1));
  auto a = nn::build_target<float>(tiny_classifier(), 9);
  auto b = nn::build_target<float>(tiny_classifier(), 9);
  restore(*a, capture(*base));
  restore(*b, capture(*base));
  TrainConfig ft = quick(Scheme::kFinetune);
  ft.mix = data::MixSpec::clean_only();
  const RunRecord ra = finetune_target(*a, fx.data(), ft);
  const RunRecord rb = pretrain_target(*b, fx.data(), quick(Scheme::kBaseline));
  CHECK(ra.csv() == rb.csv());
  CHECK(nn::parameter_checksum(*a) == nn::parameter_checksum(*b));
}

TEST_CASE("joint training: one backward per batch, both models move") {
  const Fixture fx = small_cls();
  auto f = nn::build_target<float>(tiny_classifier(), 3);
  auto g = nn::build_ion<float>(tiny_ion(), 4);
  const auto f0 = params_of(*f);
  const auto g0 = params_of(*g);
  const RunRecord r = train_joint(*g, *f, fx.data(), quick(Scheme::kJoint));
  CHECK(r.steps == 2 * 6);
  CHECK(r.backward_passes == r.steps);
  CHECK(params_of(*f) != f0);
  CHECK(params_of(*g) != g0);

  f->freeze();
  CHECK_THROWS_AS(train_joint(*g, *f, fx.data(), quick(Scheme::kJoint)), std::invalid_argument);
}

TEST_CASE("joint training with lr 0 leaves both models' parameters unchanged") {
  const Fixture fx = small_cls();
  auto f = nn::build_target<float>(tiny_classifier(), 3);
  auto g = nn::build_ion<float>(tiny_ion(), 4);
  const auto f0 = params_of(*f);
  const auto g0 = params_of(*g);
  TrainConfig c = quick(Scheme::kJoint);
  c.lr = 0;
  train_joint(*g, *f, fx.data(), c);
  CHECK(params_of(*f) == f0);
  CHECK(params_of(*g) == g0);
}

TEST_CASE("divergence aborts with a record") {
  const Fixture fx = small_cls();
  auto f = nn::build_target<float>(tiny_classifier(), 3);
  TrainConfig c = quick(Scheme::kBaseline, 3);
  c.lr = 1e30;
  const RunRecord r = pretrain_target(*f, fx.data(), c);
  REQUIRE(r.aborted.has_value());
  CHECK(r.manifest()["aborted"].is_string());
  for (const auto& e : r.epochs) CHECK(std::isfinite(e.train_loss));
}

TEST_CASE("value channel is the per-pixel channel maximum") {
  const Fixture fx = small_cls(2, 0);
  const auto x = data::images_to_tensor({&fx.train[0].image, &fx.train[1].image});
  const auto v = value_channel(x);
  REQUIRE(v.shape() == Shape{2, 1, 16, 16});
  for (std::size_t n = 0; n < 2; ++n) {
    const auto hsv = degrade::rgb_to_hsv(fx.train[n].image);
    for (std::size_t i = 0; i < 256; ++i)
      CHECK(v.data()[n * 256 + i] == doctest::Approx(hsv.pixels[i * 3 + 2] * 2 - 1).epsilon(1e-6));
  }
}

TEST_CASE("gan: assembled output keeps the input hue and saturation exactly") {
  const Fixture fx = small_cls(3, 0);
  auto g = nn::build_ion<float>(tiny_ion(1), 8);
  std::vector<const degrade::Image*> ptrs;
  for (const auto& s : fx.train) ptrs.push_back(&s.image);
  const auto v_out = g->forward(nullptr, data::images_to_tensor(ptrs));
  for (std::size_t n = 0; n < fx.train.size(); ++n) {
    const auto out = assemble_gan_output(fx.train[n].image, v_out, n);
    const auto in = degrade::rgb_to_hsv(fx.train[n].image);
    CHECK(out.space == degrade::ColourSpace::kHSV);
    for (std::size_t i = 0; i < in.num_pixels(); ++i) {
      CHECK(out.pixels[i * 3] == in.pixels[i * 3]);
      CHECK(out.pixels[i * 3 + 1] == in.pixels[i * 3 + 1]);
      CHECK(out.pixels[i * 3 + 2] == doctest::Approx((v_out.data()[n * 256 + i] + 1) / 2));
    }
  }
  CHECK_THROWS_AS(assemble_gan_output(fx.train[0].image, v_out, 3), std::invalid_argument);
}

TEST_CASE("gan: untrained discriminator scores real and generated V near chance") {
  const Fixture fx = small_cls(64, 0);
  std::vector<const degrade::Image*> ptrs;
  for (const auto& s : fx.train) ptrs.push_back(&s.image);
  const auto x = data::images_to_tensor(ptrs);
  auto g = nn::build_ion<float>(tiny_ion(1), 21);
  nn::TargetNetConfig dc;
  dc.kind = nn::TargetKind::kDiscriminator;
  dc.in_channels = 1;
  dc.width = 8;
  dc.depth = 3;
  double auc_sum = 0;
  const int trials = 5;
  for (int t = 0; t < trials; ++t) {
    auto d = nn::build_target<float>(dc, 100 + t);
    d->set_training(false);
    // Untrained batch norm has no running statistics; the discriminator has none.
    const auto real = d->forward(nullptr, value_channel(x));
    const auto fake = d->forward(nullptr, g->forward(nullptr, x));
    std::size_t wins = 0, ties = 0;
    for (float r : real.data())
      for (float f : fake.data()) {
        wins += r > f;
        ties += r == f;
      }
    auc_sum += (wins + 0.5 * ties) / static_cast<double>(real.numel() * fake.numel());
  }
  CHECK(std::abs(auc_sum / trials - 0.5) <= 0.15);
}

TEST_CASE("gan training logs a finite L1 curve and rejects a 3-channel generator") {
  const Fixture fx = small_cls(16, 8);
  auto g = nn::build_ion<float>(tiny_ion(1), 8);
  nn::TargetNetConfig dc;
  dc.kind = nn::TargetKind::kDiscriminator;
  dc.in_channels = 1;
  dc.width = 4;
  dc.depth = 2;
  auto d = nn::build_target<float>(dc, 9);
  TrainConfig c = quick(Scheme::kGan, 2);
  c.mix = data::MixSpec{{data::DomainMix{"dark", 1.0, {}}}};
  c.mix.domains[0].spec.kind = degrade::DegradeKind::kUnderexpose;
  const RunRecord r = train_gan(*g, *d, fx.data(), c);
  REQUIRE(r.epochs.size() == 2);
  for (const auto& e : r.epochs) {
    CHECK(std::isfinite(e.train_loss));
    CHECK(e.val_metric.has_value());
  }
  CHECK(r.backward_passes == 2 * r.steps);

  auto g3 = nn::build_ion<float>(tiny_ion(3), 8);
  auto d2 = nn::build_target<float>(dc, 9);
  CHECK_THROWS_AS(train_gan(*g3, *d2, fx.data(), c), std::invalid_argument);
}

TEST_CASE("capture and restore round trip parameters, buffers and counters") {
  const Fixture fx = small_cls();
  auto a = nn::build_target<float>(tiny_classifier(), 3);
  pretrain_target(*a, fx.data(), quick(Scheme::kBaseline, 1));
  auto b = nn::build_target<float>(tiny_classifier(), 99);
  CHECK(nn::parameter_checksum(*a) != nn::parameter_checksum(*b));
  restore(*b, capture(*a));
  CHECK(nn::parameter_checksum(*a) == nn::parameter_checksum(*b));
  auto other = nn::build_ion<float>(tiny_ion(), 1);
  CHECK_THROWS_AS(restore(*other, capture(*a)), std::invalid_argument);
}
