#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>

#include "ion/adam.hpp"
#include "ion/degrade/colour.hpp"
#include "ion/ops.hpp"
#include "ion/seed.hpp"
#include "ion/train/train.hpp"

namespace ion::train {

ModelState capture(nn::Model<float>& model) {
  ModelState s;
  for (const auto& p : model.parameters())
    s.tensors.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  for (const auto& b : model.buffers())
    s.tensors.emplace_back(b.tensor.data().begin(), b.tensor.data().end());
  for (const auto& [name, value] : model.counters()) s.counters.push_back(*value);
  return s;
}

void restore(nn::Model<float>& model, const ModelState& state) {
  std::vector<Tensor<float>> targets = model.parameter_tensors();
  for (const auto& b : model.buffers()) targets.push_back(b.tensor);
  auto counters = model.counters();
  if (targets.size() != state.tensors.size() || counters.size() != state.counters.size())
    throw std::invalid_argument("restore: state does not match the model");
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i].numel() != state.tensors[i].size())
      throw std::invalid_argument("restore: tensor size mismatch");
    std::copy(state.tensors[i].begin(), state.tensors[i].end(), targets[i].data().begin());
  }
  for (std::size_t i = 0; i < counters.size(); ++i) *counters[i].second = state.counters[i];
}

Tensor<float> value_channel(const Tensor<float>& rgb) {
  if (rgb.rank() != 4 || rgb.dim(1) != 3)
    throw std::invalid_argument("value_channel: expected (B,3,H,W), got " + shape_str(rgb.shape()));
  const std::size_t b = rgb.dim(0), hw = rgb.dim(2) * rgb.dim(3);
  Tensor<float> v(Shape{b, 1, rgb.dim(2), rgb.dim(3)});
  const float* in = rgb.ptr();
  float* out = v.ptr();
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t i = 0; i < hw; ++i) {
      const float* px = in + n * 3 * hw + i;
      out[n * hw + i] = std::max({px[0], px[hw], px[2 * hw]});
    }
  return v;
}

degrade::Image assemble_gan_output(const degrade::Image& input_rgb, const Tensor<float>& v_out,
                                   std::size_t index) {
  if (v_out.rank() != 4 || v_out.dim(1) != 1 || index >= v_out.dim(0) ||
      v_out.dim(2) != input_rgb.height || v_out.dim(3) != input_rgb.width)
    throw std::invalid_argument("assemble_gan_output: value tensor " + shape_str(v_out.shape()) +
                                " does not match the input image");
  degrade::Image hsv = degrade::rgb_to_hsv(input_rgb);
  const std::size_t hw = hsv.num_pixels();
  const float* v = v_out.ptr() + index * hw;
  for (std::size_t i = 0; i < hw; ++i)
    hsv.pixels[i * 3 + 2] = std::clamp((v[i] + 1.0f) * 0.5f, 0.0f, 1.0f);
  return hsv;
}

namespace {

using Clock = std::chrono::steady_clock;

struct ValSet {
  std::vector<Tensor<float>> xs;
  std::vector<Tensor<float>> clean;
  std::vector<std::vector<std::int32_t>> targets;
};

// Fixed validation stream: same degradations every epoch, dataset order.
ValSet build_val(const TrainData& data, const TrainConfig& cfg, bool with_clean) {
  ValSet v;
  if (!data.val || data.val->empty()) return v;
  data::BatchOptions o{cfg.batch_size, false, with_clean, false};
  data::EpochBatches batches(*data.val, cfg.mix, o, split_seed(cfg.seed, {name_key("val")}), 0);
  while (auto b = batches.next()) {
    v.xs.push_back(b->x);
    v.clean.push_back(b->clean);
    v.targets.push_back(std::move(b->targets));
  }
  return v;
}

void check_data(const TrainData& data) {
  if (!data.train || data.train->empty()) throw std::invalid_argument("training set is empty");
  if (data.num_classes < 1) throw std::invalid_argument("num_classes must be >= 1");
}

struct Loop {
  // Returns the batch loss; a non-finite value aborts the run.
  std::function<double(const data::Batch&)> step;
  // Returns (val_loss, val_metric).
  std::function<std::pair<double, double>()> validate;
  std::function<void(bool)> set_training;
  std::vector<nn::Model<float>*> snapshot;
  bool with_clean = false;
};

RunRecord run_loop(const TrainData& data, const TrainConfig& cfg, Loop& loop) {
  const auto start = Clock::now();
  RunRecord rec;
  rec.scheme = scheme_name(cfg.scheme);
  rec.seed = cfg.seed;
  rec.config = cfg.to_json();

  std::vector<double> history;
  double best = std::numeric_limits<double>::infinity();
  std::vector<ModelState> best_state;
  const std::uint64_t stream_seed = split_seed(cfg.seed, {name_key("train")});

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs && !rec.aborted; ++epoch) {
    loop.set_training(true);
    data::BatchOptions o{cfg.batch_size, cfg.regenerate, loop.with_clean, true};
    data::EpochBatches batches(*data.train, cfg.mix, o, stream_seed, epoch);
    double total = 0;
    std::size_t n = 0;
    while (auto b = batches.next()) {
      double loss;
      try {
        loss = loop.step(*b);
      } catch (const std::runtime_error& e) {
        rec.aborted = std::string("epoch ") + std::to_string(epoch) + ": " + e.what();
        break;
      }
      if (!std::isfinite(loss)) {
        rec.aborted = "epoch " + std::to_string(epoch) + ": non-finite training loss";
        break;
      }
      total += loss;
      ++n;
      ++rec.steps;
    }
    if (rec.aborted) break;
    EpochRow row{epoch, total / static_cast<double>(n), std::nullopt, std::nullopt};
    if (epoch % cfg.eval_every == 0 && loop.validate) {
      loop.set_training(false);
      const auto [vl, vm] = loop.validate();
      row.val_loss = vl;
      row.val_metric = vm;
      if (!std::isfinite(vl)) {
        rec.epochs.push_back(row);
        rec.aborted = "epoch " + std::to_string(epoch) + ": non-finite validation loss";
        break;
      }
      history.push_back(vl);
      if (vl < best) {
        best = vl;
        rec.best_epoch = epoch;
        best_state.clear();
        for (auto* m : loop.snapshot) best_state.push_back(capture(*m));
      }
    }
    rec.epochs.push_back(row);
    if (!history.empty() && early_stop(history, cfg.patience)) {
      rec.early_stopped = true;
      break;
    }
  }
  if (!best_state.empty())
    for (std::size_t i = 0; i < loop.snapshot.size(); ++i) restore(*loop.snapshot[i], best_state[i]);
  loop.set_training(false);
  rec.wall_seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return rec;
}

AdamOptions adam_options(const TrainConfig& cfg) {
  AdamOptions o;
  o.lr = cfg.lr;
  o.l2 = cfg.l2;
  return o;
}

// Supervised loop over F (optionally preceded by G). `trained` lists the
// models whose parameters are stepped.
RunRecord supervised(nn::Model<float>& F, nn::Model<float>* G, bool train_f,
                     const TrainData& data, const TrainConfig& cfg) {
  check_data(data);
  cfg.validate();
  const ValSet val = build_val(data, cfg, false);
  std::optional<Adam<float>> opt_f, opt_g;
  if (train_f) opt_f.emplace(F.parameter_tensors(), adam_options(cfg));
  if (G) opt_g.emplace(G->parameter_tensors(), adam_options(cfg));
  std::size_t backward = 0;

  Loop loop;
  loop.set_training = [&](bool on) {
    // A frozen target stays in inference mode so its running statistics never move.
    F.set_training(on && train_f);
    if (G) G->set_training(on);
  };
  loop.step = [&](const data::Batch& b) -> double {
    Tape<float> tape;
    if (opt_f) opt_f->zero_grad();
    if (opt_g) opt_g->zero_grad();
    Tensor<float> x = G ? G->forward(&tape, b.x) : b.x;
    Tensor<float> logits = F.forward(&tape, x);
    Tensor<float> loss = ops::softmax_cross_entropy(&tape, logits, std::span(b.targets));
    const double value = loss.item();
    if (!std::isfinite(value)) return value;
    tape.backward(loss);
    backward += tape.backward_passes();
    if (opt_g) opt_g->step();
    if (opt_f) opt_f->step();
    return value;
  };
  if (!val.xs.empty())
    loop.validate = [&] {
      const auto r = evaluate(F, G, val.xs, val.targets, data.task, data.num_classes);
      return std::pair{r.loss, r.metric};
    };
  if (train_f) loop.snapshot.push_back(&F);
  if (G) loop.snapshot.push_back(G);
  RunRecord rec = run_loop(data, cfg, loop);
  rec.backward_passes = backward;
  return rec;
}

bool clean_only(const data::MixSpec& mix) {
  for (const auto& d : mix.domains)
    if (d.weight > 0 && d.spec.kind != degrade::DegradeKind::kNone) return false;
  return true;
}

}  // namespace

RunRecord pretrain_target(nn::Model<float>& F, const TrainData& data, const TrainConfig& cfg) {
  if (F.frozen()) throw std::invalid_argument("pretrain_target: target model is frozen");
  if (!clean_only(cfg.mix))
    throw std::invalid_argument("pretrain_target: the mix must contain clean data only");
  return supervised(F, nullptr, true, data, cfg);
}

RunRecord finetune_target(nn::Model<float>& F, const TrainData& data, const TrainConfig& cfg) {
  if (F.frozen()) throw std::invalid_argument("finetune_target: target model is frozen");
  return supervised(F, nullptr, true, data, cfg);
}

RunRecord train_ion_fixed(nn::Model<float>& G, nn::Model<float>& F, const TrainData& data,
                          const TrainConfig& cfg) {
  if (!F.frozen())
    throw std::invalid_argument("train_ion_fixed: target model must be frozen before training");
  if (G.frozen()) throw std::invalid_argument("train_ion_fixed: ION is frozen");
  const std::uint64_t before = nn::parameter_checksum(F);
  RunRecord rec = supervised(F, &G, false, data, cfg);
  const std::uint64_t after = nn::parameter_checksum(F);
  rec.target_checksum_before = before;
  rec.target_checksum_after = after;
  if (before != after) throw std::logic_error("train_ion_fixed: frozen target model changed");
  return rec;
}

RunRecord train_joint(nn::Model<float>& G, nn::Model<float>& F, const TrainData& data,
                      const TrainConfig& cfg) {
  if (F.frozen() || G.frozen()) throw std::invalid_argument("train_joint: both models must be unfrozen");
  return supervised(F, &G, true, data, cfg);
}

RunRecord train_gan(nn::Model<float>& G, nn::Model<float>& D, const TrainData& data,
                    const TrainConfig& cfg) {
  check_data(data);
  cfg.validate();
  if (G.frozen() || D.frozen()) throw std::invalid_argument("train_gan: both models must be unfrozen");
  const ValSet val = build_val(data, cfg, true);
  Adam<float> opt_g(G.parameter_tensors(), adam_options(cfg));
  Adam<float> opt_d(D.parameter_tensors(), adam_options(cfg));
  const float w_l1 = static_cast<float>(cfg.gan.l1);
  const float w_adv = static_cast<float>(cfg.gan.adversarial);
  std::size_t backward = 0;

  Loop loop;
  loop.with_clean = true;
  loop.set_training = [&](bool on) {
    G.set_training(on);
    D.set_training(on);
  };
  loop.step = [&](const data::Batch& b) -> double {
    const Tensor<float> v_real = value_channel(b.clean);
    Tape<float> tg;
    Tensor<float> v_fake = G.forward(&tg, b.x);
    if (v_fake.rank() != 4 || v_fake.dim(1) != 1)
      throw std::invalid_argument("train_gan: generator must output one channel, got " +
                                  shape_str(v_fake.shape()));

    // Discriminator step on real V against a detached copy of the generated V.
    {
      Tape<float> td;
      opt_d.zero_grad();
      Tensor<float> real_loss = ops::bce_with_logits(&td, D.forward(&td, v_real), 1.0f);
      Tensor<float> fake_loss = ops::bce_with_logits(&td, D.forward(&td, v_fake.clone()), 0.0f);
      Tensor<float> d_loss = ops::add(&td, real_loss, fake_loss);
      if (!std::isfinite(d_loss.item())) return d_loss.item();
      td.backward(d_loss);
      backward += td.backward_passes();
      opt_d.step();
    }

    // Generator step: L1 on V plus the non-saturating adversarial term.
    opt_g.zero_grad();
    Tensor<float> l1 = ops::l1_loss(&tg, v_fake, v_real);
    Tensor<float> adv = ops::bce_with_logits(&tg, D.forward(&tg, v_fake), 1.0f);
    Tensor<float> g_loss =
        ops::add(&tg, ops::affine(&tg, l1, w_l1, 0.0f), ops::affine(&tg, adv, w_adv, 0.0f));
    const double l1_value = l1.item();
    if (!std::isfinite(g_loss.item())) return g_loss.item();
    tg.backward(g_loss);
    backward += tg.backward_passes();
    opt_g.step();
    D.zero_grad();
    return l1_value;
  };
  if (!val.xs.empty())
    loop.validate = [&] {
      double l1_sum = 0, se_sum = 0;
      std::size_t n = 0;
      for (std::size_t i = 0; i < val.xs.size(); ++i) {
        const Tensor<float> v_fake = G.forward(nullptr, val.xs[i]);
        const Tensor<float> v_real = value_channel(val.clean[i]);
        const auto f = v_fake.data();
        const auto r = v_real.data();
        for (std::size_t k = 0; k < f.size(); ++k) {
          const double d = static_cast<double>(f[k]) - static_cast<double>(r[k]);
          l1_sum += std::abs(d);
          se_sum += (d * 0.5) * (d * 0.5);  // in [0, 1] units
        }
        n += f.size();
      }
      const double mse = se_sum / static_cast<double>(n);
      const double psnr = mse > 0 ? 10.0 * std::log10(1.0 / mse) : 99.0;
      return std::pair{l1_sum / static_cast<double>(n), psnr};
    };
  loop.snapshot = {&G, &D};
  RunRecord rec = run_loop(data, cfg, loop);
  rec.backward_passes = backward;
  return rec;
}

}  // namespace ion::train
