#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "ion/csv.hpp"
#include "ion/degrade/colour.hpp"
#include "ion/degrade/ppm.hpp"
#include "ion/experiment/runner.hpp"
#include "ion/gradcheck.hpp"
#include "ion/nn/checkpoint.hpp"
#include "ion/nn/targets.hpp"
#include "ion/nn/unet.hpp"
#include "ion/seed.hpp"

namespace ion::experiment {

namespace fs = std::filesystem;
using train::Scheme;

namespace {

std::mutex log_mutex;

void log(const RunOptions& opts, const std::string& line) {
  if (opts.quiet) return;
  std::lock_guard<std::mutex> lock(log_mutex);
  std::fprintf(stderr, "%s\n", line.c_str());
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Everything a trained stage depends on; stages are reused only when this matches.
std::string experiment_fingerprint(const ExperimentConfig& cfg) {
  nlohmann::json j = cfg.to_json();
  j.erase("techniques");
  j.erase("replicates");
  j.erase("eval_batch");
  return std::to_string(name_key(j.dump()));
}

struct StageInfo {
  Scheme scheme;
  std::optional<train::JointInit> init;
  std::vector<std::string> deps;
};

const std::map<std::string, StageInfo>& stage_table() {
  static const std::map<std::string, StageInfo> t{
      {"pretrain", {Scheme::kBaseline, std::nullopt, {}}},
      {"ion-fixed", {Scheme::kIonFixed, std::nullopt, {"pretrain"}}},
      {"finetune", {Scheme::kFinetune, std::nullopt, {"pretrain"}}},
      {"ion-on-finetuned", {Scheme::kIonOnFinetuned, std::nullopt, {"finetune"}}},
      {"joint-random", {Scheme::kJoint, train::JointInit::kRandom, {}}},
      {"joint-pretrained", {Scheme::kJoint, train::JointInit::kPretrained, {"pretrain"}}},
      {"joint-finetuned", {Scheme::kJoint, train::JointInit::kFinetuned, {"finetune"}}},
      {"gan", {Scheme::kGan, std::nullopt, {}}}};
  return t;
}

// Stage that produces the models a technique is evaluated with.
std::string stage_of(const std::string& technique) {
  return technique == "baseline" ? "pretrain" : technique;
}

struct StageModels {
  std::unique_ptr<nn::Model<float>> F;  // target, or the discriminator for gan
  std::unique_ptr<nn::Model<float>> G;
};

// One replicate's stage chain. Models stay in memory once trained or loaded.
class Replicate {
 public:
  Replicate(const ExperimentConfig& cfg, const Splits& splits, std::size_t rep,
            const RunOptions& opts)
      : cfg_(cfg), splits_(splits), rep_(rep), opts_(opts),
        dir_(opts.out / ("rep" + std::to_string(rep))) {}

  StageModels& ensure(const std::string& stage) {
    if (auto it = done_.find(stage); it != done_.end()) return it->second;
    const StageInfo& info = stage_table().at(stage);
    for (const auto& d : info.deps) ensure(d);
    StageModels m = make_models(stage, info);
    if (!(opts_.reuse_checkpoints && try_load(stage, m))) {
      train_stage(stage, info, m);
      save(stage, m);
    }
    return done_.emplace(stage, std::move(m)).first->second;
  }

  // Trains `stage` even when its checkpoints exist; dependencies may be reused.
  train::RunRecord retrain(const std::string& stage) {
    const StageInfo& info = stage_table().at(stage);
    for (const auto& d : info.deps) ensure(d);
    StageModels m = make_models(stage, info);
    train::RunRecord rec = train_stage(stage, info, m);
    save(stage, m);
    done_.insert_or_assign(stage, std::move(m));
    return rec;
  }

  std::uint64_t stage_seed(const std::string& stage) const {
    return training_seed(cfg_.seed, stage, rep_);
  }

 private:
  fs::path ckpt(const std::string& stage, const char* role) const {
    return dir_ / (stage + "." + role + ".ckpt");
  }

  nlohmann::json meta(const std::string& stage) const {
    return {{"stage", stage},
            {"replicate", rep_},
            {"train_seed", stage_seed(stage)},
            {"experiment", experiment_fingerprint(cfg_)}};
  }

  StageModels make_models(const std::string& stage, const StageInfo& info) {
    const std::uint64_t s = stage_seed(stage);
    const std::uint64_t f_seed = split_seed(s, {name_key("init.F")});
    const std::uint64_t g_seed = split_seed(s, {name_key("init.G")});
    StageModels m;
    auto copy_target = [&](const std::string& from) {
      auto F = nn::build_target<float>(cfg_.target, f_seed);
      train::restore(*F, train::capture(*done_.at(from).F));
      return F;
    };
    switch (info.scheme) {
      case Scheme::kBaseline:
        m.F = nn::build_target<float>(cfg_.target, f_seed);
        break;
      case Scheme::kFinetune:
        m.F = copy_target("pretrain");
        break;
      case Scheme::kIonFixed:
      case Scheme::kIonOnFinetuned:
        m.F = copy_target(info.scheme == Scheme::kIonFixed ? "pretrain" : "finetune");
        m.F->freeze();
        m.G = nn::build_ion<float>(cfg_.ion, g_seed);
        break;
      case Scheme::kJoint:
        if (*info.init == train::JointInit::kRandom)
          m.F = nn::build_target<float>(cfg_.target, f_seed);
        else
          m.F = copy_target(*info.init == train::JointInit::kPretrained ? "pretrain" : "finetune");
        m.G = nn::build_ion<float>(cfg_.ion, g_seed);
        break;
      case Scheme::kGan: {
        nn::UNetConfig g = cfg_.ion;
        g.out_channels = 1;
        m.G = nn::build_ion<float>(g, g_seed);
        m.F = nn::build_target<float>(cfg_.discriminator, f_seed);
        break;
      }
    }
    return m;
  }

  bool try_load(const std::string& stage, StageModels& m) {
    const std::vector<std::pair<nn::Model<float>*, const char*>> parts{{m.F.get(), "F"},
                                                                       {m.G.get(), "G"}};
    for (const auto& [model, role] : parts) {
      if (!model) continue;
      const fs::path p = ckpt(stage, role);
      if (!fs::exists(p)) return false;
      try {
        if (nn::read_checkpoint_header(p).value("meta", nlohmann::json()) != meta(stage)) return false;
      } catch (const std::exception&) {
        return false;
      }
    }
    for (const auto& [model, role] : parts)
      if (model) nn::load_checkpoint(ckpt(stage, role), *model);
    log(opts_, "[rep " + std::to_string(rep_) + "] " + stage + ": reusing checkpoints");
    return true;
  }

  void save(const std::string& stage, StageModels& m) {
    fs::create_directories(dir_);
    if (m.F) nn::save_checkpoint(ckpt(stage, "F"), *m.F, meta(stage));
    if (m.G) nn::save_checkpoint(ckpt(stage, "G"), *m.G, meta(stage));
  }

  train::TrainConfig stage_config(const std::string& stage, const StageInfo& info) const {
    train::TrainConfig c;
    switch (info.scheme) {
      case Scheme::kBaseline: c = cfg_.pretrain; break;
      case Scheme::kFinetune: c = cfg_.finetune; break;
      case Scheme::kIonFixed:
      case Scheme::kIonOnFinetuned: c = cfg_.ion_stage; break;
      case Scheme::kJoint: c = cfg_.joint; break;
      case Scheme::kGan: c = cfg_.gan; break;
    }
    c.scheme = info.scheme;
    c.joint_init = info.init;
    c.seed = stage_seed(stage);
    if (info.scheme == Scheme::kBaseline) {
      c.mix = data::MixSpec{{data::DomainMix{cfg_.domains.front().name, 1.0,
                                             cfg_.domains.front().spec}}};
    } else if (info.scheme == Scheme::kGan) {
      // Degraded/original pairs; identity pairs from the reference domain are left out.
      data::MixSpec all = cfg_.effective_train_mix();
      data::MixSpec mix;
      for (const auto& d : all.domains)
        if (d.spec.kind != degrade::DegradeKind::kNone) mix.domains.push_back(d);
      c.mix = mix.domains.empty() ? all : mix;
    } else {
      c.mix = cfg_.effective_train_mix();
    }
    c.validate();
    return c;
  }

  train::RunRecord train_stage(const std::string& stage, const StageInfo& info, StageModels& m) {
    const train::TrainConfig c = stage_config(stage, info);
    const train::TrainData d{&splits_.train, &splits_.val, cfg_.task, cfg_.num_classes()};
    log(opts_, "[rep " + std::to_string(rep_) + "] " + stage + ": training");
    train::RunRecord rec;
    switch (info.scheme) {
      case Scheme::kBaseline: rec = train::pretrain_target(*m.F, d, c); break;
      case Scheme::kFinetune: rec = train::finetune_target(*m.F, d, c); break;
      case Scheme::kIonFixed:
      case Scheme::kIonOnFinetuned: rec = train::train_ion_fixed(*m.G, *m.F, d, c); break;
      case Scheme::kJoint: rec = train::train_joint(*m.G, *m.F, d, c); break;
      case Scheme::kGan: rec = train::train_gan(*m.G, *m.F, d, c); break;
    }
    if (m.F) rec.checkpoints.push_back(ckpt(stage, "F").filename().string());
    if (m.G) rec.checkpoints.push_back(ckpt(stage, "G").filename().string());
    rec.write(dir_, stage);
    std::string summary = "[rep " + std::to_string(rep_) + "] " + stage + ": " +
                          std::to_string(rec.epochs.size()) + " epochs";
    if (!rec.epochs.empty() && rec.epochs.back().val_metric)
      summary += ", best epoch " + std::to_string(rec.best_epoch);
    char wall[32];
    std::snprintf(wall, sizeof wall, ", %.1f s", rec.wall_seconds);
    log(opts_, summary + wall);
    if (rec.aborted) throw std::runtime_error("stage '" + stage + "' aborted: " + *rec.aborted);
    return rec;
  }

  const ExperimentConfig& cfg_;
  const Splits& splits_;
  std::size_t rep_;
  RunOptions opts_;
  fs::path dir_;
  std::map<std::string, StageModels> done_;
};

void write_config_echo(const ExperimentConfig& cfg, const fs::path& out) {
  write_text(out / "config.json", cfg.to_json().dump(2) + "\n");
}

ExperimentConfig with_seed(ExperimentConfig cfg, const RunOptions& opts) {
  if (opts.seed) cfg.seed = *opts.seed;
  return cfg;
}

std::unique_ptr<nn::Model<float>> load_target(const fs::path& path) {
  const auto header = nn::read_checkpoint_header(path);
  const auto& model = header.at("model");
  if (model.value("kind", "") == "ion")
    throw ConfigError("checkpoint '" + path.string() + "' holds an ION, not a target model");
  auto F = nn::build_target<float>(nn::TargetNetConfig::from_json(model), 0);
  nn::load_checkpoint(path, *F);
  return F;
}

std::unique_ptr<nn::Model<float>> load_ion(const fs::path& path) {
  const auto header = nn::read_checkpoint_header(path);
  const auto& model = header.at("model");
  if (model.value("kind", "") != "ion")
    throw ConfigError("checkpoint '" + path.string() + "' does not hold an ION");
  auto G = nn::build_ion<float>(nn::UNetConfig::from_json(model), 0);
  nn::load_checkpoint(path, *G);
  return G;
}

}  // namespace

train::RunRecord cmd_train(const ExperimentConfig& config, const std::string& scheme,
                           const RunOptions& opts) {
  const ExperimentConfig cfg = with_seed(config, opts);
  const std::string stage = stage_of(scheme);
  if (!stage_table().count(stage)) {
    std::string ids = "pretrain, gan";
    for (const auto& t : all_techniques()) ids += ", " + t;
    throw ConfigError("--scheme: unknown scheme '" + scheme + "' (expected one of " + ids + ")");
  }
  write_config_echo(cfg, opts.out);
  const Splits splits = make_splits(cfg);
  Replicate rep(cfg, splits, 0, opts);
  return rep.retrain(stage);
}

std::vector<CellResult> cmd_eval(const ExperimentConfig& config, const EvalOptions& eval,
                                 const RunOptions& opts) {
  const ExperimentConfig cfg = with_seed(config, opts);
  auto F = load_target(eval.target_checkpoint);
  std::unique_ptr<nn::Model<float>> G;
  const auto f_cfg =
      nn::TargetNetConfig::from_json(nn::read_checkpoint_header(eval.target_checkpoint).at("model"));
  if (f_cfg.kind == nn::TargetKind::kDiscriminator)
    throw ConfigError("checkpoint '" + eval.target_checkpoint.string() + "' holds a discriminator");
  if (f_cfg.num_classes != cfg.num_classes())
    throw ConfigError("target checkpoint has " + std::to_string(f_cfg.num_classes) +
                      " classes, config expects " + std::to_string(cfg.num_classes()));
  if (eval.ion_checkpoint) {
    G = load_ion(*eval.ion_checkpoint);
    const auto g_cfg =
        nn::UNetConfig::from_json(nn::read_checkpoint_header(*eval.ion_checkpoint).at("model"));
    if (g_cfg.out_channels != f_cfg.in_channels || g_cfg.in_channels != 3)
      throw ConfigError("ION outputs " + std::to_string(g_cfg.out_channels) +
                        " channels but the target expects " + std::to_string(f_cfg.in_channels));
    if (cfg.dataset.image_size % (std::size_t{1} << g_cfg.n_blocks) != 0)
      throw ConfigError("ION depth does not divide the image size");
  }
  std::vector<const Domain*> domains;
  for (const auto& d : cfg.domains)
    if (!eval.domain || d.name == *eval.domain) domains.push_back(&d);
  if (domains.empty()) throw ConfigError("--domain: unknown domain '" + *eval.domain + "'");

  const Splits splits = make_splits(cfg);
  std::vector<CellResult> rows;
  std::string table = metrics_header();
  for (const Domain* d : domains) {
    const EvalSet set = build_eval_set(cfg, *d, splits.test);
    rows.push_back(evaluate_cell(*F, G.get(), set, cfg, eval.label, 0));
    table += metrics_row(rows.back());
    write_text(opts.out / "confusion" / (d->name + ".csv"), metrics::confusion_csv(rows.back().eval.counts));
    if (!rows.back().per_image_iou.empty())
      write_text(opts.out / "per_image" / (d->name + ".csv"), per_image_csv(rows.back()));
  }
  write_text(opts.out / "metrics.csv", table);
  return rows;
}

Matrix cmd_matrix(const ExperimentConfig& config, const RunOptions& opts) {
  const ExperimentConfig cfg = with_seed(config, opts);
  write_config_echo(cfg, opts.out);
  const Splits splits = make_splits(cfg);
  const std::vector<EvalSet> sets = build_eval_sets(cfg, splits.test);

  auto run_replicate = [&](std::size_t r) {
    Replicate rep(cfg, splits, r, opts);
    for (const auto& technique : cfg.techniques) {
      StageModels& m = rep.ensure(stage_of(technique));
      nn::Model<float>* G = technique == "baseline" || technique == "finetune" ? nullptr : m.G.get();
      std::string line = "[rep " + std::to_string(r) + "] " + technique + ":";
      for (const auto& set : sets) {
        const CellResult cell = evaluate_cell(*m.F, G, set, cfg, technique, r);
        write_cell(opts.out, cell);
        char v[32];
        std::snprintf(v, sizeof v, "%.4f", cell.eval.metric);
        line += " " + set.domain + "=" + v;
      }
      log(opts, line);
    }
  };

  std::exception_ptr failure;
  if (opts.threads <= 1 || cfg.replicates == 1) {
    try {
      for (std::size_t r = 0; r < cfg.replicates; ++r) run_replicate(r);
    } catch (...) {
      failure = std::current_exception();
    }
  } else {
    std::mutex m;
    std::size_t next = 0;
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < std::min(opts.threads, cfg.replicates); ++t)
      pool.emplace_back([&] {
        for (;;) {
          std::size_t r;
          {
            std::lock_guard<std::mutex> lock(m);
            if (next >= cfg.replicates || failure) return;
            r = next++;
          }
          try {
            run_replicate(r);
          } catch (...) {
            std::lock_guard<std::mutex> lock(m);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    for (auto& t : pool) t.join();
  }

  // Aggregates are rebuilt from the keyed cell files, so they do not depend on
  // completion order and still appear when a stage failed.
  std::vector<std::string> missing;
  Matrix mx = collect_matrix(opts.out, cfg, &missing);
  std::string all = metrics_header();
  for (const auto& t : cfg.techniques)
    for (const auto& d : cfg.domains)
      for (std::size_t r = 0; r < cfg.replicates; ++r) {
        const fs::path p = cell_dir(opts.out, t, d.name) / ("rep" + std::to_string(r) + ".metrics.csv");
        if (!fs::exists(p)) continue;
        const std::string text = read_text(p);
        all += text.substr(text.find("\r\n") + 2);
      }
  write_text(opts.out / "metrics.csv", all);
  write_text(opts.out / "matrix.csv", mx.csv());
  write_text(opts.out / "matrix.md",
             mx.markdown(cfg.task == train::Task::kSegmentation ? "mean class IoU" : "accuracy"));
  if (failure) std::rethrow_exception(failure);
  return mx;
}

std::vector<DegradeResult> cmd_degrade(const std::vector<fs::path>& inputs,
                                       const degrade::DegradeSpec& spec, std::uint64_t seed,
                                       const fs::path& out) {
  spec.validate();
  std::set<std::string> stems;
  for (const auto& p : inputs)
    if (!stems.insert(p.stem().string()).second)
      throw std::invalid_argument("two inputs share the file name '" + p.stem().string() + "'");
  fs::create_directories(out);
  std::vector<DegradeResult> results;
  std::string manifest = csv_row({"input", "output", "seed", "kind", "mu", "sigma", "theta1", "theta2"});
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const degrade::Image img = degrade::read_ppm(inputs[i]);
    const std::uint64_t s = split_seed(seed, {i});
    const auto applied = degrade::apply_degradation(img, spec, s);
    DegradeResult r;
    r.output = out / (inputs[i].stem().string() + ".ppm");
    r.theta = applied.theta;
    r.moments = degrade::value_moments(img);
    degrade::write_ppm(r.output, applied.image);
    manifest += csv_row({inputs[i].string(), r.output.filename().string(), std::to_string(s),
                         degrade::degrade_kind_name(spec.kind), fmt_num(r.moments.first),
                         fmt_num(r.moments.second), r.theta ? fmt_num(r.theta->theta1) : "",
                         r.theta ? fmt_num(r.theta->theta2) : ""});
    results.push_back(std::move(r));
  }
  write_text(out / "manifest.csv", manifest);
  return results;
}

std::vector<GradcheckRow> cmd_gradcheck(const std::string& corrupt_op) {
  GradCheckOptions opts;
  opts.corrupt_op = corrupt_op;
  std::vector<GradcheckRow> rows;
  for (const auto& o : run_gradcheck_cases(operator_gradcheck_cases(1), opts))
    rows.push_back({o.name, o.max_rel_error, o.tolerance, o.passed()});
  const double ion_err = nn::tiny_ion_gradcheck(1);
  rows.push_back({"tiny-ion", ion_err, 1e-3, ion_err <= 1e-3});
  return rows;
}

std::string gradcheck_table(const std::vector<GradcheckRow>& rows) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof line, "%-24s %14s %10s  %s\n", "operator", "max_rel_error",
                "tolerance", "result");
  out += line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-24s %14.3e %10.0e  %s\n", r.name.c_str(), r.max_rel_error,
                  r.tolerance, r.passed ? "pass" : "FAIL");
    out += line;
  }
  return out;
}

}  // namespace ion::experiment
