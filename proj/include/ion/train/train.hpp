#pragma once
// Training schemes: target pretraining, ION against a frozen target, target
// finetuning, joint optimisation and the single-channel GAN baseline.
//
// Every scheme runs single-threaded over one tape per batch and is bit-for-bit
// reproducible for a fixed config and seed.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ion/data/batches.hpp"
#include "ion/metrics/metrics.hpp"
#include "ion/nn/model.hpp"

namespace ion::train {

enum class Scheme { kBaseline, kIonFixed, kFinetune, kIonOnFinetuned, kJoint, kGan };
enum class JointInit { kRandom, kPretrained, kFinetuned };
enum class Task { kClassification, kSegmentation };

std::string scheme_name(Scheme s);
Scheme parse_scheme(const std::string& name);
std::string joint_init_name(JointInit j);
JointInit parse_joint_init(const std::string& name);
std::string task_name(Task t);
Task parse_task(const std::string& name);

struct GanWeights {
  double l1 = 1.0;
  double adversarial = 1.0;
};

struct TrainConfig {
  Scheme scheme = Scheme::kBaseline;
  std::optional<JointInit> joint_init;  // only with scheme joint
  double lr = 1e-4;
  double l2 = 1e-6;
  std::size_t batch_size = 4;
  std::size_t max_epochs = 20;
  std::size_t patience = 5;
  std::uint64_t seed = 0;
  data::MixSpec mix = data::MixSpec::clean_only();
  std::size_t eval_every = 1;  // epochs between validation passes
  bool regenerate = true;      // fresh degradations each epoch
  GanWeights gan;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct EpochRow {
  std::size_t epoch = 0;
  double train_loss = 0;
  std::optional<double> val_loss;
  std::optional<double> val_metric;
};

struct RunRecord {
  std::string scheme;
  std::uint64_t seed = 0;
  nlohmann::json config;
  std::vector<EpochRow> epochs;
  double wall_seconds = 0;
  std::size_t best_epoch = 0;  // 0 when no validation pass ran
  bool early_stopped = false;
  std::optional<std::string> aborted;  // reason, when training diverged
  std::size_t steps = 0;
  std::size_t backward_passes = 0;
  std::optional<std::uint64_t> target_checksum_before, target_checksum_after;
  std::vector<std::string> checkpoints;

  // epoch,train_loss,val_loss,val_metric with shortest round-trip numbers.
  std::string csv() const;
  nlohmann::json manifest() const;
  // Writes <stem>.csv and <stem>.manifest.json into `dir`.
  void write(const std::filesystem::path& dir, const std::string& stem) const;
};

// True once the best loss has gone `patience` consecutive evaluations without
// a relative improvement greater than 1e-5.
bool early_stop(std::span<const double> history, std::size_t patience);

struct TrainData {
  const std::vector<data::Sample>* train = nullptr;
  const std::vector<data::Sample>* val = nullptr;
  Task task = Task::kClassification;
  std::size_t num_classes = 0;
};

// Evaluation pass in inference mode. G, when given, preprocesses every batch.
struct EvalResult {
  double loss = 0;
  double metric = 0;  // accuracy or mean class IoU
  metrics::ConfusionCounts counts;
  std::vector<std::int32_t> predictions;  // per sample or per pixel, in sample order
};

EvalResult evaluate(nn::Model<float>& F, nn::Model<float>* G, const std::vector<Tensor<float>>& xs,
                    const std::vector<std::vector<std::int32_t>>& targets, Task task,
                    std::size_t num_classes);

// Trains F on clean data only.
RunRecord pretrain_target(nn::Model<float>& F, const TrainData& data, const TrainConfig& cfg);

// Trains G against a frozen F kept in inference mode. Rejects an unfrozen F and
// throws std::logic_error if F's checksum changes.
RunRecord train_ion_fixed(nn::Model<float>& G, nn::Model<float>& F, const TrainData& data,
                          const TrainConfig& cfg);

// Continues training a warm-started F on the mixed stream; all weights move.
RunRecord finetune_target(nn::Model<float>& F, const TrainData& data, const TrainConfig& cfg);

// One backward pass per batch through F(G(x)); separate Adam state per model.
RunRecord train_joint(nn::Model<float>& G, nn::Model<float>& F, const TrainData& data,
                      const TrainConfig& cfg);

// G maps the degraded RGB input to one channel compared against the original V
// channel; D sees V channels only. train_loss logs the generator L1 component,
// val_loss the validation L1 and val_metric the validation V-channel PSNR in dB.
RunRecord train_gan(nn::Model<float>& G, nn::Model<float>& D, const TrainData& data,
                    const TrainConfig& cfg);

// V channel of a (B, 3, H, W) tensor in [-1, 1], as (B, 1, H, W) in [-1, 1].
Tensor<float> value_channel(const Tensor<float>& rgb);

// HSV image with the input's hue and saturation and the generated value
// (a (B, 1, H, W) tensor in [-1, 1]).
degrade::Image assemble_gan_output(const degrade::Image& input_rgb, const Tensor<float>& v_out,
                                   std::size_t index);

// Snapshot of parameters, buffers and counters.
struct ModelState {
  std::vector<std::vector<float>> tensors;
  std::vector<std::uint64_t> counters;
};
ModelState capture(nn::Model<float>& model);
void restore(nn::Model<float>& model, const ModelState& state);

}  // namespace ion::train
