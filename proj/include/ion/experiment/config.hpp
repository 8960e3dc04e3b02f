#pragma once
// Experiment configuration: one strict JSON document describing the dataset,
// evaluation domains, networks, per-stage training settings and seeds.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ion/data/batches.hpp"
#include "ion/nn/targets.hpp"
#include "ion/nn/unet.hpp"
#include "ion/train/train.hpp"

namespace ion::experiment {

// Invalid configuration; maps to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DatasetSpec {
  std::string generator = "shapes-cls";  // shapes-cls, shapes-seg or cifar10
  std::size_t image_size = 32;
  std::size_t n_train = 600;
  std::size_t n_val = 200;
  std::size_t n_test = 200;
  std::string cifar_dir;  // data_batch_1..5.bin and test_batch.bin
};

struct Domain {
  std::string name;
  degrade::DegradeSpec spec;
};

// Technique ids of the comparison grid, in report column order.
const std::vector<std::string>& all_techniques();

struct ExperimentConfig {
  train::Task task = train::Task::kClassification;
  DatasetSpec dataset;
  std::vector<Domain> domains;  // the first is the reference (clean) domain
  // Mix used by finetuning, ION and joint training. Defaults to equal weights
  // over all domains.
  std::optional<data::MixSpec> train_mix;
  nn::UNetConfig ion;
  nn::TargetNetConfig target;
  nn::TargetNetConfig discriminator;
  // Per-stage hyperparameters. The runner sets scheme, joint_init, mix and seed.
  train::TrainConfig pretrain, finetune, ion_stage, joint, gan;
  std::vector<std::string> techniques;
  std::size_t replicates = 3;
  std::size_t eval_batch = 20;
  std::uint64_t seed = 1;

  void validate() const;
  data::MixSpec effective_train_mix() const;
  std::size_t num_classes() const;
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
};

// Reads and parses a config file. Syntax errors report line and column; field
// errors name the offending key. Throws ConfigError.
ExperimentConfig load_config(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text);

// Seeds. Training runs are keyed by (technique, replicate) and evaluation sets
// by domain name, so adding a technique or a domain leaves every other
// cell's randomness untouched.
std::uint64_t training_seed(std::uint64_t global, const std::string& technique, std::size_t replicate);
std::uint64_t eval_set_seed(std::uint64_t global, const std::string& domain);
std::uint64_t dataset_seed(std::uint64_t global);
// Seed of the cell (technique, domain, replicate); recorded for provenance.
std::uint64_t cell_seed(std::uint64_t global, const std::string& technique,
                        const std::string& domain, std::size_t replicate);

}  // namespace ion::experiment
