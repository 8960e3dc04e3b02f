#include <fstream>
#include <set>
#include <stdexcept>

#include "ion/csv.hpp"
#include "ion/train/train.hpp"

namespace ion::train {

namespace {

template <typename E, std::size_t N>
E parse_enum(const std::string& name, const std::pair<E, const char*> (&table)[N],
             const char* what) {
  for (const auto& [e, n] : table)
    if (name == n) return e;
  std::string opts;
  for (const auto& [e, n] : table) opts += std::string(opts.empty() ? "" : ", ") + n;
  throw std::invalid_argument(std::string("unknown ") + what + " '" + name + "' (expected one of " +
                              opts + ")");
}

template <typename E, std::size_t N>
std::string enum_name(E v, const std::pair<E, const char*> (&table)[N]) {
  for (const auto& [e, n] : table)
    if (e == v) return n;
  throw std::logic_error("enum value without a name");
}

constexpr std::pair<Scheme, const char*> kSchemes[] = {
    {Scheme::kBaseline, "baseline"}, {Scheme::kIonFixed, "ion-fixed"},
    {Scheme::kFinetune, "finetune"}, {Scheme::kIonOnFinetuned, "ion-on-finetuned"},
    {Scheme::kJoint, "joint"},       {Scheme::kGan, "gan"}};
constexpr std::pair<JointInit, const char*> kInits[] = {{JointInit::kRandom, "random"},
                                                        {JointInit::kPretrained, "pretrained"},
                                                        {JointInit::kFinetuned, "finetuned"}};
constexpr std::pair<Task, const char*> kTasks[] = {{Task::kClassification, "classification"},
                                                   {Task::kSegmentation, "segmentation"}};

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& allowed,
                    const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + " must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key)) throw std::invalid_argument("unknown key '" + key + "' in " + where);
}

}  // namespace

std::string scheme_name(Scheme s) { return enum_name(s, kSchemes); }
Scheme parse_scheme(const std::string& name) { return parse_enum(name, kSchemes, "scheme"); }
std::string joint_init_name(JointInit j) { return enum_name(j, kInits); }
JointInit parse_joint_init(const std::string& name) {
  return parse_enum(name, kInits, "joint_init");
}
std::string task_name(Task t) { return enum_name(t, kTasks); }
Task parse_task(const std::string& name) { return parse_enum(name, kTasks, "task"); }

void TrainConfig::validate() const {
  if (!(lr >= 0)) throw std::invalid_argument("train.lr must be >= 0");
  if (!(l2 >= 0)) throw std::invalid_argument("train.l2 must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("train.batch_size must be >= 1");
  if (patience < 1) throw std::invalid_argument("train.patience must be >= 1");
  if (eval_every < 1) throw std::invalid_argument("train.eval_every must be >= 1");
  if (joint_init && scheme != Scheme::kJoint)
    throw std::invalid_argument("train.joint_init is only valid with scheme 'joint'");
  if (scheme == Scheme::kJoint && !joint_init)
    throw std::invalid_argument("train.joint_init is required with scheme 'joint'");
  if (!(gan.l1 >= 0) || !(gan.adversarial >= 0))
    throw std::invalid_argument("train.gan weights must be >= 0");
  mix.validate();
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j{{"scheme", scheme_name(scheme)},
                   {"lr", lr},
                   {"l2", l2},
                   {"batch_size", batch_size},
                   {"max_epochs", max_epochs},
                   {"patience", patience},
                   {"seed", seed},
                   {"mix", mix.to_json()},
                   {"eval_every", eval_every},
                   {"regenerate", regenerate},
                   {"gan", {{"l1", gan.l1}, {"adversarial", gan.adversarial}}}};
  if (joint_init) j["joint_init"] = joint_init_name(*joint_init);
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  reject_unknown(j,
                 {"scheme", "joint_init", "lr", "l2", "batch_size", "max_epochs", "patience",
                  "seed", "mix", "eval_every", "regenerate", "gan"},
                 "train config");
  TrainConfig c;
  if (j.contains("scheme")) c.scheme = parse_scheme(j.at("scheme").get<std::string>());
  if (j.contains("joint_init"))
    c.joint_init = parse_joint_init(j.at("joint_init").get<std::string>());
  c.lr = j.value("lr", c.lr);
  c.l2 = j.value("l2", c.l2);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  c.seed = j.value("seed", c.seed);
  if (j.contains("mix")) c.mix = data::MixSpec::from_json(j.at("mix"));
  c.eval_every = j.value("eval_every", c.eval_every);
  c.regenerate = j.value("regenerate", c.regenerate);
  if (j.contains("gan")) {
    const auto& g = j.at("gan");
    reject_unknown(g, {"l1", "adversarial"}, "train.gan");
    c.gan.l1 = g.value("l1", c.gan.l1);
    c.gan.adversarial = g.value("adversarial", c.gan.adversarial);
  }
  c.validate();
  return c;
}

std::string RunRecord::csv() const {
  std::string out = csv_row({"epoch", "train_loss", "val_loss", "val_metric"});
  for (const auto& e : epochs)
    out += csv_row({std::to_string(e.epoch), fmt_num(e.train_loss),
                    e.val_loss ? fmt_num(*e.val_loss) : "", e.val_metric ? fmt_num(*e.val_metric) : ""});
  return out;
}

nlohmann::json RunRecord::manifest() const {
  nlohmann::json j{{"scheme", scheme},
                   {"seed", seed},
                   {"config", config},
                   {"epochs", epochs.size()},
                   {"wall_seconds", wall_seconds},
                   {"best_epoch", best_epoch},
                   {"early_stopped", early_stopped},
                   {"steps", steps},
                   {"backward_passes", backward_passes},
                   {"checkpoints", checkpoints}};
  j["aborted"] = aborted ? nlohmann::json(*aborted) : nlohmann::json(nullptr);
  if (target_checksum_before) j["target_checksum_before"] = *target_checksum_before;
  if (target_checksum_after) j["target_checksum_after"] = *target_checksum_after;
  return j;
}

void RunRecord::write(const std::filesystem::path& dir, const std::string& stem) const {
  std::filesystem::create_directories(dir);
  std::ofstream csv_out(dir / (stem + ".csv"), std::ios::binary);
  csv_out << csv();
  std::ofstream man(dir / (stem + ".manifest.json"), std::ios::binary);
  man << manifest().dump(2) << "\n";
  if (!csv_out || !man) throw std::runtime_error("failed to write run record to " + dir.string());
}

}  // namespace ion::train
