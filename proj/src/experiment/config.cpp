#include "ion/experiment/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "ion/seed.hpp"

namespace ion::experiment {

namespace {

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& allowed,
                    const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
}

template <typename F>
auto in_section(const std::string& where, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

const nlohmann::json& required(const nlohmann::json& j, const std::string& key,
                               const std::string& where) {
  if (!j.contains(key)) throw ConfigError(where + ": missing required field '" + key + "'");
  return j.at(key);
}

// Stage settings are a train config without the keys the runner decides.
const std::set<std::string> kRunnerKeys{"scheme", "joint_init", "mix", "seed"};

train::TrainConfig stage_from_json(const nlohmann::json& j, const std::string& where) {
  return in_section(where, [&] {
    if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
    for (const auto& [key, _] : j.items())
      if (kRunnerKeys.count(key))
        throw ConfigError(where + ": key '" + key + "' is set by the runner");
    return train::TrainConfig::from_json(j);
  });
}

nlohmann::json stage_to_json(const train::TrainConfig& c) {
  nlohmann::json j = c.to_json();
  for (const auto& k : kRunnerKeys) j.erase(k);
  return j;
}

}  // namespace

const std::vector<std::string>& all_techniques() {
  static const std::vector<std::string> t{"baseline",     "ion-fixed",        "finetune",
                                          "ion-on-finetuned", "joint-random", "joint-pretrained",
                                          "joint-finetuned"};
  return t;
}

void ExperimentConfig::validate() const {
  const std::set<std::string> generators{"shapes-cls", "shapes-seg", "cifar10"};
  if (!generators.count(dataset.generator))
    throw ConfigError("dataset.generator: unknown generator '" + dataset.generator + "'");
  const bool seg_data = dataset.generator == "shapes-seg";
  if (seg_data != (task == train::Task::kSegmentation))
    throw ConfigError("dataset.generator: '" + dataset.generator + "' does not match task '" +
                      train::task_name(task) + "'");
  if (dataset.generator == "cifar10" && dataset.cifar_dir.empty())
    throw ConfigError("dataset.cifar_dir: required for the cifar10 generator");
  if (dataset.n_train < 1 || dataset.n_test < 1)
    throw ConfigError("dataset: n_train and n_test must be >= 1");
  if (domains.empty()) throw ConfigError("domains: at least one domain is required");
  std::set<std::string> names;
  for (const auto& d : domains) {
    if (d.name.empty()) throw ConfigError("domains: empty domain name");
    if (d.name.find_first_of("/\\,\"") != std::string::npos)
      throw ConfigError("domains: name '" + d.name + "' contains a reserved character");
    if (!names.insert(d.name).second) throw ConfigError("domains: duplicate name '" + d.name + "'");
    in_section("domains." + d.name, [&] { d.spec.validate(); });
  }
  in_section("ion", [&] { ion.validate(); });
  in_section("target", [&] { target.validate(); });
  in_section("discriminator", [&] { discriminator.validate(); });
  if (target.kind == nn::TargetKind::kDiscriminator)
    throw ConfigError("target.kind: the target must be a classifier or segmenter");
  if ((target.kind == nn::TargetKind::kSegmenter) != (task == train::Task::kSegmentation))
    throw ConfigError("target.kind: does not match task '" + train::task_name(task) + "'");
  if (ion.in_channels != 3 || ion.out_channels != target.in_channels)
    throw ConfigError("ion: output channels must match the target's input channels");
  if (task == train::Task::kSegmentation && target.num_classes != 5)
    throw ConfigError("target.num_classes: shapes-seg has 5 classes");
  if (task == train::Task::kClassification && dataset.generator != "cifar10" &&
      target.num_classes != 6)
    throw ConfigError("target.num_classes: shapes-cls has 6 classes");
  if (task == train::Task::kClassification && dataset.generator == "cifar10" &&
      target.num_classes != 10)
    throw ConfigError("target.num_classes: cifar10 has 10 classes");
  const std::size_t div = std::size_t{1} << ion.n_blocks;
  if (dataset.image_size % div != 0)
    throw ConfigError("dataset.image_size: must be divisible by 2^ion.n_blocks = " +
                      std::to_string(div));
  if (techniques.empty()) throw ConfigError("techniques: at least one technique is required");
  std::set<std::string> seen;
  for (const auto& t : techniques) {
    if (std::find(all_techniques().begin(), all_techniques().end(), t) == all_techniques().end())
      throw ConfigError("techniques: unknown technique '" + t + "'");
    if (!seen.insert(t).second) throw ConfigError("techniques: duplicate '" + t + "'");
  }
  if (replicates < 1) throw ConfigError("replicates: must be >= 1");
  if (eval_batch < 1) throw ConfigError("eval_batch: must be >= 1");
  if (train_mix) in_section("train_mix", [&] { train_mix->validate(); });
}

data::MixSpec ExperimentConfig::effective_train_mix() const {
  if (train_mix) return *train_mix;
  data::MixSpec m;
  for (const auto& d : domains) m.domains.push_back({d.name, 1.0, d.spec});
  return m;
}

std::size_t ExperimentConfig::num_classes() const { return target.num_classes; }

nlohmann::json ExperimentConfig::to_json() const {
  auto doms = nlohmann::json::array();
  for (const auto& d : domains) doms.push_back({{"name", d.name}, {"degrade", d.spec.to_json()}});
  nlohmann::json j{
      {"task", train::task_name(task)},
      {"dataset",
       {{"generator", dataset.generator},
        {"image_size", dataset.image_size},
        {"n_train", dataset.n_train},
        {"n_val", dataset.n_val},
        {"n_test", dataset.n_test},
        {"cifar_dir", dataset.cifar_dir}}},
      {"domains", doms},
      {"ion", ion.to_json()},
      {"target", target.to_json()},
      {"discriminator", discriminator.to_json()},
      {"stages",
       {{"pretrain", stage_to_json(pretrain)},
        {"finetune", stage_to_json(finetune)},
        {"ion", stage_to_json(ion_stage)},
        {"joint", stage_to_json(joint)},
        {"gan", stage_to_json(gan)}}},
      {"techniques", techniques},
      {"replicates", replicates},
      {"eval_batch", eval_batch},
      {"seed", seed}};
  j["train_mix"] = train_mix ? train_mix->to_json() : nlohmann::json(nullptr);
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  reject_unknown(j,
                 {"task", "dataset", "domains", "train_mix", "ion", "target", "discriminator",
                  "stages", "techniques", "replicates", "eval_batch", "seed"},
                 "config");
  ExperimentConfig c;
  c.task = in_section("task", [&] { return train::parse_task(required(j, "task", "config").get<std::string>()); });

  c.dataset.generator = c.task == train::Task::kSegmentation ? "shapes-seg" : "shapes-cls";
  c.dataset.image_size = c.task == train::Task::kSegmentation ? 64 : 32;
  if (c.task == train::Task::kSegmentation) {
    c.dataset.n_train = 400;
    c.dataset.n_val = 100;
    c.dataset.n_test = 100;
  }
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    reject_unknown(d, {"generator", "image_size", "n_train", "n_val", "n_test", "cifar_dir"},
                   "dataset");
    in_section("dataset", [&] {
      c.dataset.generator = d.value("generator", c.dataset.generator);
      c.dataset.image_size = d.value("image_size", c.dataset.image_size);
      c.dataset.n_train = d.value("n_train", c.dataset.n_train);
      c.dataset.n_val = d.value("n_val", c.dataset.n_val);
      c.dataset.n_test = d.value("n_test", c.dataset.n_test);
      c.dataset.cifar_dir = d.value("cifar_dir", c.dataset.cifar_dir);
    });
  }

  const auto& doms = required(j, "domains", "config");
  if (!doms.is_array()) throw ConfigError("domains: expected an array");
  for (std::size_t i = 0; i < doms.size(); ++i) {
    const std::string where = "domains[" + std::to_string(i) + "]";
    reject_unknown(doms[i], {"name", "degrade"}, where);
    Domain d;
    d.name = in_section(where, [&] { return required(doms[i], "name", where).get<std::string>(); });
    if (doms[i].contains("degrade"))
      d.spec = in_section(where + ".degrade",
                          [&] { return degrade::DegradeSpec::from_json(doms[i].at("degrade")); });
    c.domains.push_back(std::move(d));
  }
  if (j.contains("train_mix") && !j.at("train_mix").is_null())
    c.train_mix = in_section("train_mix", [&] { return data::MixSpec::from_json(j.at("train_mix")); });

  // Desk-scale network defaults.
  c.ion.n_blocks = 2;
  c.ion.base_channels = 16;
  c.target.kind = c.task == train::Task::kSegmentation ? nn::TargetKind::kSegmenter
                                                       : nn::TargetKind::kClassifier;
  c.target.num_classes = c.task == train::Task::kSegmentation ? 5 : 6;
  c.discriminator.kind = nn::TargetKind::kDiscriminator;
  c.discriminator.in_channels = 1;
  const std::set<std::string> unet_keys{"n_blocks", "base_channels", "in_channels",
                                        "out_channels", "leaky_slope"};
  const std::set<std::string> net_keys{"kind",        "width",       "depth",
                                       "num_classes", "in_channels", "leaky_slope"};
  if (j.contains("ion")) reject_unknown(j.at("ion"), unet_keys, "ion");
  if (j.contains("target")) reject_unknown(j.at("target"), net_keys, "target");
  if (j.contains("discriminator")) reject_unknown(j.at("discriminator"), net_keys, "discriminator");
  if (j.contains("ion")) c.ion = in_section("ion", [&] { return nn::UNetConfig::from_json(j.at("ion")); });
  if (j.contains("target"))
    c.target = in_section("target", [&] { return nn::TargetNetConfig::from_json(j.at("target")); });
  if (j.contains("discriminator"))
    c.discriminator = in_section("discriminator",
                                 [&] { return nn::TargetNetConfig::from_json(j.at("discriminator")); });

  if (j.contains("stages")) {
    const auto& s = j.at("stages");
    reject_unknown(s, {"pretrain", "finetune", "ion", "joint", "gan"}, "stages");
    if (s.contains("pretrain")) c.pretrain = stage_from_json(s.at("pretrain"), "stages.pretrain");
    if (s.contains("finetune")) c.finetune = stage_from_json(s.at("finetune"), "stages.finetune");
    if (s.contains("ion")) c.ion_stage = stage_from_json(s.at("ion"), "stages.ion");
    if (s.contains("joint")) c.joint = stage_from_json(s.at("joint"), "stages.joint");
    if (s.contains("gan")) c.gan = stage_from_json(s.at("gan"), "stages.gan");
  }
  c.techniques = all_techniques();
  in_section("config", [&] {
    if (j.contains("techniques")) c.techniques = j.at("techniques").get<std::vector<std::string>>();
    c.replicates = j.value("replicates", c.replicates);
    c.eval_batch = j.value("eval_batch", c.eval_batch);
    c.seed = j.value("seed", c.seed);
  });
  c.validate();
  return c;
}

ExperimentConfig parse_config_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw ConfigError("syntax error at line " + std::to_string(line) + ", column " +
                      std::to_string(col) + ": " + e.what());
  }
  return ExperimentConfig::from_json(j);
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::uint64_t training_seed(std::uint64_t global, const std::string& technique,
                            std::size_t replicate) {
  return split_seed(global, {name_key("train"), name_key(technique), replicate});
}

std::uint64_t eval_set_seed(std::uint64_t global, const std::string& domain) {
  return split_seed(global, {name_key("eval"), name_key(domain)});
}

std::uint64_t dataset_seed(std::uint64_t global) { return split_seed(global, {name_key("data")}); }

std::uint64_t cell_seed(std::uint64_t global, const std::string& technique,
                        const std::string& domain, std::size_t replicate) {
  return split_seed(global, {name_key(technique), name_key(domain), replicate});
}

}  // namespace ion::experiment
