#include <fstream>
#include <stdexcept>

#include "ion/csv.hpp"
#include "ion/experiment/runner.hpp"

namespace ion::experiment {

namespace fs = std::filesystem;

Splits make_splits(const ExperimentConfig& cfg) {
  const auto& d = cfg.dataset;
  Splits s;
  if (d.generator == "cifar10") {
    if (d.image_size != 32) throw ConfigError("dataset.image_size: cifar10 images are 32x32");
    std::vector<data::Sample> train;
    for (int b = 1; b <= 5; ++b) {
      auto part = data::load_cifar10_binary(fs::path(d.cifar_dir) /
                                            ("data_batch_" + std::to_string(b) + ".bin"));
      train.insert(train.end(), std::make_move_iterator(part.begin()),
                   std::make_move_iterator(part.end()));
    }
    auto test = data::load_cifar10_binary(fs::path(d.cifar_dir) / "test_batch.bin");
    if (d.n_train + d.n_val > train.size() || d.n_test > test.size())
      throw ConfigError("dataset: requested split sizes exceed the CIFAR-10 files");
    s.val.assign(train.end() - static_cast<std::ptrdiff_t>(d.n_val), train.end());
    train.resize(d.n_train);
    s.train = std::move(train);
    test.resize(d.n_test);
    s.test = std::move(test);
    return s;
  }
  const std::size_t n = d.n_train + d.n_val + d.n_test;
  auto all = d.generator == "shapes-seg"
                 ? data::gen_shapes_seg(n, dataset_seed(cfg.seed), d.image_size)
                 : data::gen_shapes_cls(n, dataset_seed(cfg.seed), d.image_size);
  auto [train, rest] = data::split_at(std::move(all), d.n_train);
  auto [val, test] = data::split_at(std::move(rest), d.n_val);
  s.train = std::move(train);
  s.val = std::move(val);
  s.test = std::move(test);
  return s;
}

EvalSet build_eval_set(const ExperimentConfig& cfg, const Domain& domain,
                       const std::vector<data::Sample>& test) {
  std::vector<degrade::Image> images;
  images.reserve(test.size());
  for (const auto& s : test) images.push_back(s.image);
  EvalSet set;
  set.domain = domain.name;
  set.fixed = degrade::build_fixed_eval_set(images, domain.spec, eval_set_seed(cfg.seed, domain.name));
  for (std::size_t i = 0; i < test.size(); i += cfg.eval_batch) {
    const std::size_t end = std::min(test.size(), i + cfg.eval_batch);
    std::vector<const degrade::Image*> ptrs;
    std::vector<std::int32_t> targets;
    for (std::size_t k = i; k < end; ++k) {
      ptrs.push_back(&set.fixed.images[k]);
      targets.insert(targets.end(), test[k].target.begin(), test[k].target.end());
    }
    set.xs.push_back(data::images_to_tensor(ptrs));
    set.targets.push_back(std::move(targets));
  }
  return set;
}

std::vector<EvalSet> build_eval_sets(const ExperimentConfig& cfg,
                                     const std::vector<data::Sample>& test) {
  std::vector<EvalSet> sets;
  for (const auto& d : cfg.domains) sets.push_back(build_eval_set(cfg, d, test));
  return sets;
}

CellResult evaluate_cell(nn::Model<float>& F, nn::Model<float>* G, const EvalSet& set,
                         const ExperimentConfig& cfg, const std::string& technique,
                         std::size_t replicate) {
  CellResult r;
  r.technique = technique;
  r.domain = set.domain;
  r.replicate = replicate;
  r.seed = cell_seed(cfg.seed, technique, set.domain, replicate);
  r.eval = train::evaluate(F, G, set.xs, set.targets, cfg.task, cfg.num_classes());
  if (cfg.task == train::Task::kSegmentation) {
    const auto& img = set.fixed.images.front();
    const std::size_t hw = img.height * img.width;
    std::vector<std::int32_t> gt;
    for (const auto& t : set.targets) gt.insert(gt.end(), t.begin(), t.end());
    const std::span<const std::int32_t> pred(r.eval.predictions), truth(gt);
    for (std::size_t i = 0; i * hw < gt.size(); ++i)
      r.per_image_iou.push_back(metrics::mean_class_iou(metrics::confusion(
          pred.subspan(i * hw, hw), truth.subspan(i * hw, hw), cfg.num_classes())));
  }
  return r;
}

std::string metrics_header() {
  return csv_row({"technique", "domain", "replicate", "seed", "n", "loss", "metric",
                  "mean_accuracy", "mean_recall", "mean_precision", "mean_iou", "weighted_accuracy",
                  "weighted_recall", "weighted_precision", "weighted_iou"});
}

std::string metrics_row(const CellResult& r) {
  const auto s = metrics::summarise(r.eval.counts);
  return csv_row({r.technique, r.domain, std::to_string(r.replicate), std::to_string(r.seed),
                  std::to_string(r.eval.counts.total()), fmt_num(r.eval.loss),
                  fmt_num(r.eval.metric), fmt_num(s.mean_accuracy), fmt_num(s.mean_recall),
                  fmt_num(s.mean_precision), fmt_num(s.mean_iou), fmt_num(s.weighted_accuracy),
                  fmt_num(s.weighted_recall), fmt_num(s.weighted_precision),
                  fmt_num(s.weighted_iou)});
}

std::string per_image_csv(const CellResult& r) {
  std::string out = csv_row({"image_id", "iou"});
  for (std::size_t i = 0; i < r.per_image_iou.size(); ++i)
    out += csv_row({std::to_string(i), fmt_num(r.per_image_iou[i])});
  return out;
}

fs::path cell_dir(const fs::path& run_dir, const std::string& technique,
                  const std::string& domain) {
  return run_dir / "cells" / technique / domain;
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

}  // namespace

void write_cell(const fs::path& run_dir, const CellResult& r) {
  const fs::path dir = cell_dir(run_dir, r.technique, r.domain);
  fs::create_directories(dir);
  const std::string stem = "rep" + std::to_string(r.replicate);
  write_text(dir / (stem + ".metrics.csv"), metrics_header() + metrics_row(r));
  write_text(dir / (stem + ".confusion.csv"), metrics::confusion_csv(r.eval.counts));
  if (!r.per_image_iou.empty()) write_text(dir / (stem + ".per_image.csv"), per_image_csv(r));
}

}  // namespace ion::experiment
