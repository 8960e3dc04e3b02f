#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "ion/degrade/colour.hpp"
#include "ion/degrade/ppm.hpp"
#include "ion/experiment/runner.hpp"
#include "ion/gradcheck.hpp"
#include "ion/nn/checkpoint.hpp"
#include "ion/nn/unet.hpp"
#include "ion/seed.hpp"

using namespace ion;
using namespace ion::experiment;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ion_exp_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json tiny_seg_json() {
  return nlohmann::json::parse(R"({
    "task": "segmentation",
    "dataset": {"image_size": 16, "n_train": 8, "n_val": 4, "n_test": 6},
    "domains": [
      {"name": "clean", "degrade": {"kind": "none"}},
      {"name": "fog", "degrade": {"kind": "fog"}},
      {"name": "rain", "degrade": {"kind": "rain", "count": 10}}
    ],
    "ion": {"n_blocks": 2, "base_channels": 4},
    "target": {"kind": "segmenter", "width": 4, "depth": 2, "num_classes": 5},
    "discriminator": {"kind": "discriminator", "width": 4, "depth": 2, "in_channels": 1},
    "stages": {
      "pretrain": {"lr": 2e-3, "max_epochs": 2},
      "finetune": {"max_epochs": 1},
      "ion": {"lr": 1e-3, "max_epochs": 1},
      "joint": {"max_epochs": 1},
      "gan": {"max_epochs": 1}
    },
    "replicates": 2,
    "eval_batch": 4,
    "seed": 7
  })");
}

nlohmann::json tiny_cls_json() {
  auto j = nlohmann::json::parse(R"({
    "task": "classification",
    "dataset": {"image_size": 16, "n_train": 12, "n_val": 6, "n_test": 6},
    "domains": [
      {"name": "clean", "degrade": {"kind": "none"}},
      {"name": "noise", "degrade": {"kind": "noise", "sigma": 0.1}}
    ],
    "ion": {"n_blocks": 2, "base_channels": 4},
    "target": {"kind": "classifier", "width": 4, "depth": 2, "num_classes": 6},
    "stages": {"pretrain": {"max_epochs": 1}, "ion": {"max_epochs": 1}, "finetune": {"max_epochs": 1}},
    "techniques": ["baseline", "ion-fixed", "finetune"],
    "replicates": 1,
    "eval_batch": 4
  })");
  return j;
}

RunOptions quiet(const fs::path& out) {
  RunOptions o;
  o.out = out;
  o.quiet = true;
  return o;
}

std::string error_of(const std::string& text) {
  try {
    parse_config_text(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("config: canonical form is idempotent") {
  for (const auto& j : {tiny_seg_json(), tiny_cls_json()}) {
    const auto c1 = ExperimentConfig::from_json(j);
    const auto s1 = c1.to_json();
    const auto c2 = ExperimentConfig::from_json(s1);
    CHECK(c2.to_json() == s1);
    CHECK(parse_config_text(s1.dump(2)).to_json() == s1);
  }
  for (const char* path : {"configs/classification.json", "configs/segmentation.json"}) {
    const auto c = load_config(path);
    CHECK(ExperimentConfig::from_json(c.to_json()).to_json() == c.to_json());
  }
}

TEST_CASE("config: desk configs match the default grid shape") {
  const auto seg = load_config("configs/segmentation.json");
  CHECK(seg.domains.size() == 4);
  CHECK(seg.techniques == all_techniques());
  CHECK(all_techniques().size() == 7);
  CHECK(seg.dataset.image_size == 64);
  CHECK(seg.dataset.n_train == 400);
  CHECK(seg.dataset.n_test == 100);
  const auto cls = load_config("configs/classification.json");
  CHECK(cls.dataset.image_size == 32);
  CHECK(cls.dataset.n_train == 600);
  CHECK(cls.dataset.n_test == 200);
  CHECK(cls.domains.at(1).spec.noise_sigma == 0.1);
  // Equal weights over all domains: half clean, half noisy.
  const auto mix = cls.effective_train_mix();
  REQUIRE(mix.domains.size() == 2);
  CHECK(mix.domains[0].weight == mix.domains[1].weight);
}

TEST_CASE("config: errors name the offending field") {
  auto j = tiny_seg_json();
  j.erase("task");
  CHECK(error_of(j.dump()).find("'task'") != std::string::npos);
  j = tiny_seg_json();
  j.erase("domains");
  CHECK(error_of(j.dump()).find("'domains'") != std::string::npos);
  j = tiny_seg_json();
  j["colour"] = 1;
  CHECK(error_of(j.dump()).find("'colour'") != std::string::npos);
  j = tiny_seg_json();
  j["ion"]["blocks"] = 3;
  CHECK(error_of(j.dump()).find("'blocks'") != std::string::npos);
  j = tiny_seg_json();
  j["stages"]["pretrain"]["seed"] = 3;
  CHECK(error_of(j.dump()).find("stages.pretrain") != std::string::npos);
  j = tiny_seg_json();
  j["stages"]["ion"]["lr"] = -1;
  CHECK(error_of(j.dump()).find("stages.ion") != std::string::npos);
  j = tiny_seg_json();
  j["domains"][1]["degrade"]["beta_typo"] = 1;
  CHECK(error_of(j.dump()).find("domains[1]") != std::string::npos);
  j = tiny_seg_json();
  j["domains"][2]["name"] = "fog";
  CHECK(error_of(j.dump()).find("duplicate") != std::string::npos);
  j = tiny_seg_json();
  j["techniques"] = {"baseline", "ion"};
  CHECK(error_of(j.dump()).find("'ion'") != std::string::npos);
  j = tiny_seg_json();
  j["target"]["kind"] = "classifier";
  CHECK(error_of(j.dump()).find("target.kind") != std::string::npos);
  j = tiny_seg_json();
  j["dataset"]["image_size"] = 18;
  CHECK(error_of(j.dump()).find("image_size") != std::string::npos);
}

TEST_CASE("config: syntax errors report line and column") {
  const std::string text = "{\n  \"task\": \"segmentation\",\n  \"domains\": [,]\n}";
  const std::string e = error_of(text);
  CHECK(e.find("line 3") != std::string::npos);
  CHECK(e.find("column 15") != std::string::npos);
  CHECK_THROWS_AS(load_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("seeds are keyed, so adding techniques or domains leaves others untouched") {
  CHECK(training_seed(1, "ion-fixed", 0) == split_seed(1, {name_key("train"), name_key("ion-fixed"), 0}));
  CHECK(training_seed(1, "ion-fixed", 0) != training_seed(1, "ion-fixed", 1));
  CHECK(training_seed(1, "ion-fixed", 0) != training_seed(1, "finetune", 0));
  CHECK(training_seed(1, "ion-fixed", 0) != training_seed(2, "ion-fixed", 0));
  CHECK(eval_set_seed(1, "fog") != eval_set_seed(1, "rain"));
  CHECK(cell_seed(1, "baseline", "fog", 2) ==
        split_seed(1, {name_key("baseline"), name_key("fog"), 2}));

  auto j = tiny_seg_json();
  const auto a = ExperimentConfig::from_json(j);
  j["domains"].push_back({{"name", "shift"}, {"degrade", {{"kind", "domainshift"}}}});
  const auto b = ExperimentConfig::from_json(j);
  const auto splits = make_splits(a);
  const auto sa = build_eval_sets(a, splits.test);
  const auto sb = build_eval_sets(b, splits.test);
  REQUIRE(sb.size() == sa.size() + 1);
  for (std::size_t i = 0; i < sa.size(); ++i) CHECK(sa[i].fixed.fingerprint() == sb[i].fixed.fingerprint());
}

TEST_CASE("splits are disjoint and eval sets batch the test images in order") {
  const auto cfg = ExperimentConfig::from_json(tiny_seg_json());
  const auto s = make_splits(cfg);
  CHECK(s.train.size() == 8);
  CHECK(s.val.size() == 4);
  CHECK(s.test.size() == 6);
  CHECK(s.train[0].seed != s.test[0].seed);
  const auto set = build_eval_set(cfg, cfg.domains[0], s.test);
  REQUIRE(set.xs.size() == 2);
  CHECK(set.xs[0].dim(0) == 4);
  CHECK(set.xs[1].dim(0) == 2);
  CHECK(set.targets[1].size() == 2 * 16 * 16);
  CHECK(set.fixed.images[0] == s.test[0].image);
}

TEST_CASE("median") {
  CHECK(median({3.0}) == 3.0);
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0, 3.0, 2.0}) == 2.5);
  CHECK_THROWS_AS(median({}), std::invalid_argument);
}

TEST_CASE("matrix: row maximum marker agrees with the CSV") {
  Matrix m;
  m.domains = {"clean", "fog"};
  m.techniques = {"baseline", "ion-fixed", "joint-random"};
  auto set = [&](const char* d, const char* t, std::vector<double> v) {
    MatrixCell c;
    c.values = v;
    c.median = median(v);
    m.cells[{d, t}] = c;
  };
  set("clean", "baseline", {0.9, 0.8, 0.95});
  set("clean", "ion-fixed", {0.85, 0.9, 0.7});
  set("clean", "joint-random", {0.9, 0.9, 0.1});
  set("fog", "baseline", {0.3});
  set("fog", "ion-fixed", {0.6, 0.5});
  CHECK(m.row_max("clean") == std::vector<std::size_t>{0, 2});
  CHECK(m.row_max("fog") == std::vector<std::size_t>{1});
  const std::string csv = m.csv();
  CHECK(csv ==
        "domain,baseline,ion-fixed,joint-random,best\r\n"
        "clean,0.9,0.85,0.9,baseline;joint-random\r\n"
        "fog,0.3,0.55,,ion-fixed\r\n");
  const std::string md = m.markdown("accuracy");
  CHECK(md.find("| clean | **0.900** | 0.850 | **0.900** |") != std::string::npos);
  CHECK(md.find("| fog | 0.300 | **0.550** | n/a |") != std::string::npos);
}

TEST_CASE("report: planted fit and improvement schema") {
  std::vector<metrics::ImprovementPoint> pts;
  for (int i = 0; i <= 10; ++i) pts.push_back({"img" + std::to_string(i), i / 10.0, -0.5 * (i / 10.0)});
  const auto fit = metrics::improvement_analysis(pts);
  CHECK(fit.slope == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK(std::abs(fit.intercept) < 1e-12);
  CHECK(fit.slope < 0);
  TechniqueFit tf{"ion-fixed", pts, fit};
  const std::string csv = improvement_csv({tf});
  CHECK(csv.rfind("image_id,baseline_iou,delta,technique\r\n", 0) == 0);
  CHECK(csv.find("img2,0.2,-0.1,ion-fixed\r\n") != std::string::npos);
}

TEST_CASE("report: parameter counts grow about fourfold per two blocks at base 64") {
  const auto rows = param_table(64, {7, 5, 3});
  REQUIRE(rows.size() == 3);
  for (std::size_t i = 0; i < 2; ++i) {
    REQUIRE(rows[i].ratio_to_next.has_value());
    CHECK(*rows[i].ratio_to_next >= 3.0);
    CHECK(*rows[i].ratio_to_next <= 5.0);
  }
  CHECK_FALSE(rows[2].ratio_to_next.has_value());
}

TEST_CASE("matrix end to end: grid, determinism, audit trail and report") {
  const auto cfg = ExperimentConfig::from_json(tiny_seg_json());
  const fs::path a = fresh_dir("matrix_a"), b = fresh_dir("matrix_b");
  const Matrix ma = cmd_matrix(cfg, quiet(a));
  cmd_matrix(cfg, quiet(b));

  CHECK(ma.domains.size() == 3);
  CHECK(ma.techniques.size() == 7);
  for (const auto& d : ma.domains)
    for (const auto& t : ma.techniques) {
      const auto v = ma.median(d, t);
      REQUIRE(v.has_value());
      CHECK(*v >= 0.0);
      CHECK(*v <= 1.0);
    }
  for (const char* f : {"metrics.csv", "matrix.csv", "matrix.md", "rep1/joint-finetuned.csv",
                        "cells/ion-on-finetuned/rain/rep0.confusion.csv",
                        "cells/ion-fixed/fog/rep1.per_image.csv"})
    CHECK_MESSAGE(slurp(a / f) == slurp(b / f), f);

  // Each cell's metric is recomputable from its confusion counts.
  for (const auto& t : cfg.techniques)
    for (const auto& d : cfg.domains) {
      const auto dir = cell_dir(a, t, d.name);
      std::istringstream conf(slurp(dir / "rep0.confusion.csv"));
      std::string line;
      std::getline(conf, line);
      metrics::ConfusionCounts cc(5);
      for (std::size_t g = 0; g < 5; ++g) {
        std::getline(conf, line);
        std::istringstream ls(line);
        std::string cell;
        std::getline(ls, cell, ',');
        for (std::size_t p = 0; p < 5; ++p) {
          std::getline(ls, cell, ',');
          cc.matrix[g * 5 + p] = std::stoull(cell);
        }
      }
      const std::string row = slurp(dir / "rep0.metrics.csv");
      const std::string values = row.substr(row.find("\r\n") + 2);
      std::vector<std::string> f;
      std::istringstream vs(values.substr(0, values.size() - 2));
      for (std::string x; std::getline(vs, x, ',');) f.push_back(x);
      REQUIRE(f.size() == 15);
      CHECK(std::stod(f[6]) == metrics::mean_class_iou(cc));
      CHECK(std::stoull(f[4]) == cc.total());
    }

  // Frozen-target stages record matching checksums.
  const auto man = nlohmann::json::parse(slurp(a / "rep0/ion-fixed.manifest.json"));
  CHECK(man["target_checksum_before"] == man["target_checksum_after"]);

  const Report rep = cmd_report(a);
  CHECK(rep.missing.empty());
  CHECK(rep.fits.size() == 6);
  CHECK(fs::exists(a / "report.md"));
  CHECK(slurp(a / "improvement.csv").rfind("image_id,baseline_iou,delta,technique\r\n", 0) == 0);
  CHECK(rep.matrix.csv() == ma.csv());

  // Removing one cell's files shows up as a missing run; the report still renders.
  fs::remove(cell_dir(a, "joint-random", "fog") / "rep1.metrics.csv");
  const Report partial = cmd_report(a);
  CHECK(partial.missing == std::vector<std::string>{"joint-random/fog/rep1"});
  CHECK(partial.markdown.find("Missing runs") != std::string::npos);
}

TEST_CASE("matrix reuses stage checkpoints and reproduces the same cells") {
  auto j = tiny_cls_json();
  const auto cfg = ExperimentConfig::from_json(j);
  const fs::path a = fresh_dir("reuse");
  cmd_matrix(cfg, quiet(a));
  const std::string first = slurp(a / "metrics.csv");
  const auto stamp = fs::last_write_time(a / "rep0/pretrain.F.ckpt");
  cmd_matrix(cfg, quiet(a));
  CHECK(slurp(a / "metrics.csv") == first);
  CHECK(fs::last_write_time(a / "rep0/pretrain.F.ckpt") == stamp);

  // A changed stage setting invalidates the checkpoints.
  j["stages"]["pretrain"]["lr"] = 5e-3;
  cmd_matrix(ExperimentConfig::from_json(j), quiet(a));
  CHECK(slurp(a / "metrics.csv") != first);
}

TEST_CASE("train command writes a loadable checkpoint and a reproducible record") {
  const auto cfg = ExperimentConfig::from_json(tiny_cls_json());
  const fs::path a = fresh_dir("train");
  const auto r1 = cmd_train(cfg, "baseline", quiet(a));
  const std::string csv1 = slurp(a / "rep0/pretrain.csv");
  auto f = nn::build_target<float>(cfg.target, 0);
  nn::load_checkpoint(a / "rep0/pretrain.F.ckpt", *f);
  const auto r2 = cmd_train(cfg, "baseline", quiet(a));
  CHECK(slurp(a / "rep0/pretrain.csv") == csv1);
  CHECK(r1.csv() == r2.csv());

  const auto r3 = cmd_train(cfg, "ion-on-finetuned", quiet(a));
  CHECK(r3.scheme == "ion-on-finetuned");
  CHECK(fs::exists(a / "rep0/finetune.F.ckpt"));
  CHECK(*r3.target_checksum_before == *r3.target_checksum_after);
  const auto gan = cmd_train(cfg, "gan", quiet(a));
  CHECK(gan.scheme == "gan");
  CHECK_THROWS_AS(cmd_train(cfg, "ion", quiet(a)), ConfigError);
}

TEST_CASE("eval command: schema, repeatability and mismatch rejection") {
  const auto cfg = ExperimentConfig::from_json(tiny_cls_json());
  const fs::path a = fresh_dir("eval");
  cmd_train(cfg, "ion-fixed", quiet(a));
  EvalOptions e;
  e.target_checkpoint = a / "rep0/pretrain.F.ckpt";
  const auto alone = cmd_eval(cfg, e, quiet(a / "alone"));
  const std::string alone_csv = slurp(a / "alone/metrics.csv");
  e.ion_checkpoint = a / "rep0/ion-fixed.G.ckpt";
  const auto with_g = cmd_eval(cfg, e, quiet(a / "with"));
  cmd_eval(cfg, e, quiet(a / "again"));
  CHECK(slurp(a / "with/metrics.csv") == slurp(a / "again/metrics.csv"));
  CHECK(alone.size() == 2);
  CHECK(with_g.size() == 2);
  const auto header = [](const std::string& s) { return s.substr(0, s.find("\r\n")); };
  CHECK(header(alone_csv) == header(slurp(a / "with/metrics.csv")));
  CHECK(fs::exists(a / "with/confusion/noise.csv"));

  e.domain = "fog";
  CHECK_THROWS_AS(cmd_eval(cfg, e, quiet(a / "x")), ConfigError);
  e.domain.reset();

  // A one-channel generator cannot feed an RGB target.
  nn::UNetConfig g1;
  g1.n_blocks = 2;
  g1.base_channels = 4;
  g1.out_channels = 1;
  auto g = nn::build_ion<float>(g1, 1);
  nn::save_checkpoint(a / "g1.ckpt", *g);
  e.ion_checkpoint = a / "g1.ckpt";
  CHECK_THROWS_WITH_AS(cmd_eval(cfg, e, quiet(a / "x")), doctest::Contains("channels"), ConfigError);
  e.ion_checkpoint = a / "rep0/pretrain.F.ckpt";
  CHECK_THROWS_AS(cmd_eval(cfg, e, quiet(a / "x")), ConfigError);
}

TEST_CASE("degrade command: identity, theta bounds and determinism") {
  const fs::path a = fresh_dir("degrade");
  const auto imgs = data::gen_shapes_cls(4, 3, 16);
  std::vector<fs::path> inputs;
  for (std::size_t i = 0; i < imgs.size(); ++i) {
    inputs.push_back(a / ("in" + std::to_string(i) + ".ppm"));
    degrade::write_ppm(inputs.back(), imgs[i].image);
  }
  degrade::DegradeSpec none;
  cmd_degrade(inputs, none, 1, a / "none");
  for (const auto& p : inputs) CHECK(slurp(a / "none" / p.filename()) == slurp(p));

  degrade::DegradeSpec dark;
  dark.kind = degrade::DegradeKind::kUnderexpose;
  const auto r1 = cmd_degrade(inputs, dark, 5, a / "d1");
  cmd_degrade(inputs, dark, 5, a / "d2");
  for (std::size_t i = 0; i < r1.size(); ++i) {
    REQUIRE(r1[i].theta.has_value());
    const auto [mu, sigma] = r1[i].moments;
    CHECK(r1[i].theta->theta1 >= std::max(mu - sigma, degrade::kThetaFloor) - 1e-12);
    CHECK(r1[i].theta->theta1 <= mu + 1e-12);
    CHECK(slurp(a / "d1" / inputs[i].filename()) == slurp(a / "d2" / inputs[i].filename()));
  }
  CHECK(slurp(a / "d1/manifest.csv") == slurp(a / "d2/manifest.csv"));
  CHECK(slurp(a / "d1/manifest.csv").rfind("input,output,seed,kind,mu,sigma,theta1,theta2\r\n", 0) == 0);
  CHECK_THROWS(cmd_degrade({a / "missing.ppm"}, dark, 5, a / "d3"));
}

TEST_CASE("gradcheck command lists every operator once and flags corruption") {
  const auto rows = cmd_gradcheck();
  std::set<std::string> names;
  for (const auto& r : rows) {
    CHECK(names.insert(r.name).second);
    CHECK(r.passed);
  }
  CHECK(names.size() == operator_gradcheck_cases(1).size() + 1);
  bool any_failed = false;
  for (const auto& r : cmd_gradcheck("conv2d")) any_failed |= !r.passed;
  CHECK(any_failed);
  CHECK(gradcheck_table(rows).find("tiny-ion") != std::string::npos);
}
