// Acceptance run: one PASS/FAIL line per criterion. Training criteria run the
// desk configs from configs/. Exit status is 0 when every criterion passes,
// except those named by --known-failure, which still print FAIL but do not
// set the status.
//
//   acceptance [--out DIR] [--reuse] [--only 1,2,...] [--known-failure 7,...]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cli.hpp"
#include "ion/degrade/colour.hpp"
#include "ion/degrade/degrade.hpp"
#include "ion/experiment/runner.hpp"
#include "ion/nn/targets.hpp"
#include "ion/nn/unet.hpp"
#include "ion/seed.hpp"

using namespace ion;
using namespace ion::experiment;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

std::string f3(double v) {
  char b[32];
  std::snprintf(b, sizeof b, "%.3f", v);
  return b;
}

std::string sci(double v) {
  char b[32];
  std::snprintf(b, sizeof b, "%.2e", v);
  return b;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Check {
  std::string name;
  bool ok;
  std::string detail;
};

struct Outcome {
  std::vector<Check> checks;
  void add(const std::string& name, bool ok, const std::string& detail = "") {
    checks.push_back({name, ok, detail});
  }
  bool ok() const {
    return !checks.empty() &&
           std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.ok; });
  }
};

// ---- 1 --------------------------------------------------------------------

Outcome autodiff() {
  Outcome o;
  const auto t0 = Clock::now();
  double worst = 0;
  std::string worst_name;
  bool ops_ok = true;
  std::optional<double> composite;
  for (const auto& r : cmd_gradcheck()) {
    if (r.name == "tiny-ion") {
      composite = r.max_rel_error;
      continue;
    }
    ops_ok &= r.max_rel_error <= 1e-4;
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      worst_name = r.name;
    }
  }
  o.add("operators <= 1e-4", ops_ok, "worst " + worst_name + " " + sci(worst));
  o.add("tiny ION <= 1e-3", composite && *composite <= 1e-3, composite ? sci(*composite) : "missing");
  const double t = seconds_since(t0);
  o.add("runtime <= 120 s", t <= 120, f3(t) + " s");
  return o;
}

// ---- 2 --------------------------------------------------------------------

Outcome underexposure() {
  using namespace degrade;
  Outcome o;
  double cont = 0;
  bool endpoints = true, dark = true, mono = true;
  for (double t1 : {0.001, 0.05, 0.2, 0.37, 0.5, 0.73, 0.9, 0.999}) {
    const auto p = UnderexposeParams::from_theta(t1);
    const double below = underexpose_value(std::nextafter(t1, 0.0), p);
    const double above = underexpose_value(std::nextafter(t1, 1.0), p);
    cont = std::max({cont, std::abs(underexpose_value(t1, p) - above), std::abs(below - above)});
    endpoints &= underexpose_value(0.0, p) == 0.0 && underexpose_value(1.0, p) == 1.0;
    for (int i = 0; i <= 1000; ++i) {
      const double v = i / 1000.0;
      if (v <= t1) dark &= underexpose_value(v, p) == 0.1 * v;
      if (i > 0) mono &= underexpose_value(v, p) >= underexpose_value((i - 1) / 1000.0, p);
    }
  }
  o.add("continuity at theta1 <= 1e-6", cont <= 1e-6, sci(cont));
  o.add("0 -> 0 and 1 -> 1 exactly", endpoints);
  o.add("dark branch == 0.1 V1 exactly", dark);
  o.add("monotone on 1001 points", mono);

  // Threshold draws stay inside the clamped interval.
  bool bounds = true;
  std::size_t draws = 0;
  for (const auto& s : data::gen_shapes_cls(60, 41, 32)) {
    const auto [mu, sigma] = value_moments(s.image);
    const double lo = std::max(mu - sigma, kThetaFloor), hi = std::min(mu, 1.0 - kThetaFloor);
    std::mt19937_64 rng(split_seed(3, {draws}));
    for (int k = 0; k < 50; ++k, ++draws) {
      const auto p = sample_theta(s.image, rng);
      bounds &= p.theta1 >= lo && p.theta1 <= std::max(lo, hi) && p.theta2 == 0.1 * p.theta1;
    }
  }
  o.add("theta1 in [mu - sigma, mu] (clamped)", bounds, std::to_string(draws) + " draws");
  return o;
}

// ---- 3 --------------------------------------------------------------------

Outcome architecture() {
  Outcome o;
  o.add("channel_schedule(64, 5)",
        nn::channel_schedule(64, 5) == std::vector<std::size_t>{64, 96, 128, 192, 256});
  for (std::size_t n : {2, 3, 4}) {
    nn::UNetConfig c;
    c.n_blocks = n;
    c.base_channels = 8;
    auto g = nn::build_ion<float>(c, 100 + n);
    const std::size_t h = 48, w = 32;
    Tensor<float> x(Shape{2, 3, h, w});
    std::mt19937_64 rng(n);
    std::normal_distribution<float> d(0, 2);
    for (float& v : x.data()) v = d(rng);
    nn::UNetTrace trace;
    const auto y = g->forward(nullptr, x, &trace);
    bool range = true;
    for (float v : y.data()) range &= v > -1.0f && v < 1.0f;
    const std::size_t div = std::size_t{1} << n;
    o.add("N=" + std::to_string(n) + " output shape == input", y.shape() == x.shape(), shape_str(y.shape()));
    o.add("N=" + std::to_string(n) + " outputs in (-1, 1)", range);
    o.add("N=" + std::to_string(n) + " deepest map = input / 2^N",
          trace.deepest.size() == 4 && trace.deepest[2] == h / div && trace.deepest[3] == w / div,
          shape_str(trace.deepest));
  }
  return o;
}

// ---- 4 --------------------------------------------------------------------

Outcome scaling() {
  Outcome o;
  const auto rows = param_table(64, {7, 5, 3});
  const double r75 = *rows[0].ratio_to_next, r53 = *rows[1].ratio_to_next;
  o.add("params(7)/params(5) in [3, 5]", r75 >= 3 && r75 <= 5, f3(r75));
  o.add("params(5)/params(3) in [3, 5]", r53 >= 3 && r53 <= 5, f3(r53));
  return o;
}

// ---- 5 --------------------------------------------------------------------

Outcome metric_oracle() {
  Outcome o;
  std::mt19937_64 rng(2024);
  double worst = 0;
  const int trials = 150;
  for (int t = 0; t < trials; ++t) {
    const std::size_t k = 2 + rng() % 18, h = 1 + rng() % 16, w = 1 + rng() % 16;
    std::vector<std::int32_t> pred(h * w), gt(h * w);
    for (std::size_t i = 0; i < h * w; ++i) {
      gt[i] = static_cast<std::int32_t>(rng() % k);
      pred[i] = rng() % 3 == 0 ? gt[i] : static_cast<std::int32_t>(rng() % k);
    }
    const auto s = metrics::summarise(metrics::confusion(pred, gt, k));
    // Per-pixel recount.
    std::vector<double> iou, rec, prec, acc, share;
    double mi = 0, mr = 0, mp = 0, ma = 0;
    std::size_t ni = 0, nr = 0, np = 0;
    for (std::size_t c = 0; c < k; ++c) {
      double tp = 0, fp = 0, fn = 0, tn = 0;
      for (std::size_t i = 0; i < h * w; ++i) {
        const bool p = pred[i] == static_cast<std::int32_t>(c), g = gt[i] == static_cast<std::int32_t>(c);
        tp += p && g;
        fp += p && !g;
        fn += !p && g;
        tn += !p && !g;
      }
      const double n = static_cast<double>(h * w);
      auto diff = [&](const std::optional<double>& got, std::optional<double> want) {
        if (got.has_value() != want.has_value()) return 1.0;
        return got ? std::abs(*got - *want) : 0.0;
      };
      const auto io = tp + fp + fn > 0 ? std::optional(tp / (tp + fp + fn)) : std::nullopt;
      const auto re = tp + fn > 0 ? std::optional(tp / (tp + fn)) : std::nullopt;
      const auto pr = tp + fp > 0 ? std::optional(tp / (tp + fp)) : std::nullopt;
      worst = std::max({worst, diff(s.iou[c], io), diff(s.recall[c], re), diff(s.precision[c], pr),
                        diff(s.accuracy[c], (tp + tn) / n), std::abs(s.proportions[c] - (tp + fn) / n)});
      if (io) mi += *io, ++ni;
      if (re) mr += *re, ++nr;
      if (pr) mp += *pr, ++np;
      ma += (tp + tn) / n;
    }
    worst = std::max({worst, std::abs(s.mean_iou - mi / ni), std::abs(s.mean_recall - mr / nr),
                      std::abs(s.mean_precision - mp / np), std::abs(s.mean_accuracy - ma / k)});
  }
  o.add(std::to_string(trials) + " random maps, K <= 19, 16x16: error <= 1e-9", worst <= 1e-9, sci(worst));
  const std::vector<std::int32_t> p{0, 1, 2, 3}, g{0, 1, 2, 0};
  o.add("classification accuracy 3 of 4 == 0.75", metrics::cls_accuracy(p, g) == 0.75);
  o.add("identical / disjoint == 1 / 0",
        metrics::cls_accuracy(p, p) == 1.0 && metrics::cls_accuracy(std::vector<std::int32_t>{1, 1},
                                                                     std::vector<std::int32_t>{0, 0}) == 0.0);
  return o;
}

// ---- 6, 7, 8 ----------------------------------------------------------------

struct GridRun {
  ExperimentConfig cfg;
  fs::path dir;
  Matrix matrix;
  double seconds = 0;
  std::string error;
};

GridRun run_grid(const std::string& config_path, const fs::path& dir, bool reuse) {
  GridRun g;
  g.cfg = load_config(config_path);
  g.dir = dir;
  if (!reuse) fs::remove_all(dir);
  RunOptions opts;
  opts.out = dir;
  const auto t0 = Clock::now();
  try {
    g.matrix = cmd_matrix(g.cfg, opts);
  } catch (const std::exception& e) {
    g.error = e.what();
    g.matrix = collect_matrix(dir, g.cfg);
  }
  g.seconds = seconds_since(t0);
  return g;
}

double cell(const GridRun& g, const std::string& domain, const std::string& technique) {
  const auto v = g.matrix.median(domain, technique);
  return v ? *v : std::nan("");
}

Outcome classification(const GridRun& g) {
  Outcome o;
  if (!g.error.empty()) o.add("grid completed", false, g.error);
  const double bc = cell(g, "clean", "baseline"), bn = cell(g, "noise", "baseline");
  const double gap = bc - bn;
  o.add("(a) baseline clean >= 0.90", bc >= 0.90, f3(bc));
  o.add("(b) baseline noisy <= clean - 0.15", bn <= bc - 0.15, "noisy " + f3(bn));
  for (const char* t : {"ion-fixed", "finetune"}) {
    const double tn = cell(g, "noise", t), tc = cell(g, "clean", t);
    const double rec = (tn - bn) / gap;
    o.add(std::string(t == std::string("ion-fixed") ? "(c) " : "(d) ") + t + " recovers >= 50% of the gap",
          rec >= 0.5, "noisy " + f3(tn) + ", recovered " + f3(rec));
    o.add(std::string("(e) ") + t + " clean drop <= 0.05", bc - tc <= 0.05, "clean " + f3(tc));
  }
  o.add("runtime <= 15 min", g.seconds <= 900, f3(g.seconds / 60) + " min");
  return o;
}

Outcome segmentation(const GridRun& g) {
  Outcome o;
  if (!g.error.empty()) o.add("grid completed", false, g.error);
  const std::string ref = g.cfg.domains.front().name;
  std::string a, b, c, d;
  bool a_ok = true, b_ok = true, c_ok = true;
  std::size_t d_wins = 0;
  for (const auto& dom : g.cfg.domains) {
    const std::string& n = dom.name;
    const double base = cell(g, n, "baseline"), fixed = cell(g, n, "ion-fixed");
    const double joint = cell(g, n, "joint-pretrained"), ft = cell(g, n, "finetune");
    const double onft = cell(g, n, "ion-on-finetuned");
    if (n != ref) {
      a_ok &= base < cell(g, ref, "baseline");
      b_ok &= fixed > base;
      a += " " + n + "=" + f3(base);
      b += " " + n + "=" + f3(base) + "->" + f3(fixed);
    }
    c_ok &= joint >= fixed;
    c += " " + n + "=" + f3(joint) + "/" + f3(fixed);
    const bool win = onft >= std::max(fixed, ft);
    d_wins += win;
    d += " " + n + "=" + f3(onft) + (win ? ">=" : "<") + f3(std::max(fixed, ft));
  }
  o.add("(a) baseline degraded < clean", a_ok, ref + "=" + f3(cell(g, ref, "baseline")) + a);
  o.add("(b) ion-fixed > baseline on degraded domains", b_ok, b.substr(1));
  o.add("(c) joint-pretrained >= ion-fixed everywhere", c_ok, c.substr(1));
  o.add("(d) ion-on-finetuned >= max(ion-fixed, finetune) on >= 3 of 4", d_wins >= 3,
        std::to_string(d_wins) + " of " + std::to_string(g.cfg.domains.size()) + ":" + d);
  o.add("runtime <= 30 min", g.seconds <= 1800, f3(g.seconds / 60) + " min");
  return o;
}

Outcome improvement(const GridRun& g) {
  Outcome o;
  std::vector<metrics::ImprovementPoint> planted;
  for (int i = 0; i < 20; ++i) planted.push_back({std::to_string(i), i / 19.0, -0.5 * i / 19.0});
  const auto pf = metrics::improvement_analysis(planted);
  o.add("planted fit slope == -0.5", std::abs(pf.slope + 0.5) < 1e-12, sci(pf.slope + 0.5) + " off");
  const auto rep = cmd_report(g.dir);
  std::optional<metrics::ImprovementFit> fit;
  for (const auto& f : rep.fits)
    if (f.technique == "ion-fixed") fit = f.fit;
  o.add("ion-fixed slope < 0", fit && fit->slope < 0,
        fit ? "slope " + f3(fit->slope) + ", intercept " + f3(fit->intercept) + ", n " +
                  std::to_string(fit->n)
            : "no fit");
  return o;
}

// ---- 9 --------------------------------------------------------------------

Outcome freeze(const std::vector<const GridRun*>& runs) {
  Outcome o;
  std::size_t n = 0;
  bool ok = true;
  for (const auto* g : runs)
    for (std::size_t r = 0; r < g->cfg.replicates; ++r)
      for (const char* stage : {"ion-fixed", "ion-on-finetuned"}) {
        const fs::path p = g->dir / ("rep" + std::to_string(r)) / (std::string(stage) + ".manifest.json");
        if (!fs::exists(p)) continue;
        const auto m = nlohmann::json::parse(slurp(p));
        ok &= m.contains("target_checksum_before") &&
              m["target_checksum_before"] == m["target_checksum_after"];
        ++n;
      }
  o.add("target checksum unchanged in every frozen-target run", ok && n > 0,
        std::to_string(n) + " runs");
  return o;
}

// ---- 10 -------------------------------------------------------------------

// Retrains a technique's stage chain for replicate 0 in a fresh directory and
// re-evaluates it; records and cell files must match the grid run byte for byte.
void replay(Outcome& o, const GridRun& g, const std::string& technique, const fs::path& dir) {
  fs::remove_all(dir);
  RunOptions opts;
  opts.out = dir;
  opts.quiet = true;
  cmd_train(g.cfg, technique, opts);
  const std::string stage = technique == "baseline" ? "pretrain" : technique;
  const bool rec_same = slurp(dir / "rep0" / (stage + ".csv")) == slurp(g.dir / "rep0" / (stage + ".csv"));

  EvalOptions e;
  e.label = technique;
  const bool uses_g = technique != "baseline" && technique != "finetune";
  e.target_checkpoint = dir / "rep0" / (stage + ".F.ckpt");
  if (uses_g) e.ion_checkpoint = dir / "rep0" / (stage + ".G.ckpt");
  opts.out = dir / "eval";
  cmd_eval(g.cfg, e, opts);
  std::string expected = metrics_header();
  bool conf_same = true;
  for (const auto& d : g.cfg.domains) {
    const std::string cellfile = slurp(cell_dir(g.dir, technique, d.name) / "rep0.metrics.csv");
    expected += cellfile.substr(cellfile.find("\r\n") + 2);
    conf_same &= slurp(dir / "eval/confusion" / (d.name + ".csv")) ==
                 slurp(cell_dir(g.dir, technique, d.name) / "rep0.confusion.csv");
  }
  const bool metrics_same = slurp(dir / "eval/metrics.csv") == expected;
  o.add(train::task_name(g.cfg.task) + " " + technique + " replay identical",
        rec_same && metrics_same && conf_same,
        std::string("record ") + (rec_same ? "same" : "DIFFERS") + ", metrics " +
            (metrics_same ? "same" : "DIFFER") + ", confusion " + (conf_same ? "same" : "DIFFER"));
}

// ---- 11 -------------------------------------------------------------------

Outcome gan_smoke() {
  Outcome o;
  auto all = data::gen_shapes_cls(240, 77, 32);
  auto [train, val] = data::split_at(std::move(all), 200);
  const train::TrainData d{&train, &val, train::Task::kClassification, 6};
  std::vector<std::vector<double>> curves;
  bool hs = true;
  for (std::uint64_t seed : {1, 2, 3}) {
    nn::UNetConfig gc;
    gc.n_blocks = 2;
    gc.base_channels = 16;
    gc.out_channels = 1;
    nn::TargetNetConfig dc;
    dc.kind = nn::TargetKind::kDiscriminator;
    dc.in_channels = 1;
    dc.width = 16;
    dc.depth = 3;
    auto G = nn::build_ion<float>(gc, split_seed(seed, {name_key("init.G")}));
    auto D = nn::build_target<float>(dc, split_seed(seed, {name_key("init.D")}));
    train::TrainConfig c;
    c.scheme = train::Scheme::kGan;
    c.lr = 1e-4;  // scheme default
    c.max_epochs = 5;
    c.seed = seed;
    c.mix = data::MixSpec{{data::DomainMix{"underexpose", 1.0, {}}}};
    c.mix.domains[0].spec.kind = degrade::DegradeKind::kUnderexpose;
    const auto rec = train::train_gan(*G, *D, d, c);
    std::vector<double> l1;
    for (const auto& e : rec.epochs) l1.push_back(e.train_loss);
    curves.push_back(l1);

    // Assemble outputs for a few degraded images.
    std::vector<degrade::Image> dark;
    for (std::size_t i = 0; i < 8; ++i)
      dark.push_back(degrade::apply_degradation(val[i].image, c.mix.domains[0].spec, i).image);
    std::vector<const degrade::Image*> ptrs;
    for (const auto& im : dark) ptrs.push_back(&im);
    G->set_training(false);
    const auto v = G->forward(nullptr, data::images_to_tensor(ptrs));
    for (std::size_t i = 0; i < dark.size(); ++i) {
      const auto out = train::assemble_gan_output(dark[i], v, i);
      const auto in = degrade::rgb_to_hsv(dark[i]);
      for (std::size_t p = 0; p < in.num_pixels(); ++p)
        hs &= out.pixels[p * 3] == in.pixels[p * 3] && out.pixels[p * 3 + 1] == in.pixels[p * 3 + 1];
    }
  }
  std::vector<double> med;
  bool full = true;
  for (std::size_t e = 0; e < 5; ++e) {
    std::vector<double> at;
    for (const auto& c : curves)
      if (e < c.size()) at.push_back(c[e]);
    full &= at.size() == curves.size();
    if (!at.empty()) med.push_back(median(at));
  }
  bool dec = full && med.size() == 5;
  std::string trace;
  for (std::size_t e = 0; e < med.size(); ++e) {
    if (e > 0) dec &= med[e] < med[e - 1];
    trace += (e ? " " : "") + f3(med[e]);
  }
  o.add("median L1 strictly decreasing over 5 epochs", dec, trace);
  o.add("assembled H and S equal the input's", hs);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  ion::cli::tune_allocator();
  CLI::App app{"Acceptance criteria"};
  std::string out = "acceptance_runs";
  bool reuse = false;
  std::vector<int> only, known;
  app.add_option("--out", out, "Run directory")->capture_default_str();
  app.add_option("--known-failure", known, "Criteria whose failure does not set the exit status")
      ->delimiter(',');
  app.add_flag("--reuse", reuse, "Keep earlier grid runs and reuse their checkpoints");
  app.add_option("--only", only, "Criteria to run")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  auto want = [&](int c) { return only.empty() || std::find(only.begin(), only.end(), c) != only.end(); };

  std::map<int, std::pair<std::string, Outcome>> results;
  auto record = [&](int id, const std::string& title, const std::function<Outcome()>& fn) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.add("exception", false, e.what());
    }
    std::printf("-- criterion %d (%s): %.1f s\n", id, title.c_str(), seconds_since(t0));
    for (const auto& c : o.checks)
      std::printf("     %s %s%s%s\n", c.ok ? "ok  " : "FAIL", c.name.c_str(), c.detail.empty() ? "" : ": ",
                  c.detail.c_str());
    std::fflush(stdout);
    results[id] = {title, o};
  };

  if (want(1)) record(1, "autodiff correctness", autodiff);
  if (want(2)) record(2, "underexposure mapping", underexposure);
  if (want(3)) record(3, "architecture conformance", architecture);
  if (want(4)) record(4, "parameter scaling", scaling);
  if (want(5)) record(5, "metric oracle equivalence", metric_oracle);

  const fs::path root = out;
  std::optional<GridRun> cls, seg;
  if (want(6) || want(9) || want(10)) {
    record(6, "classification trend", [&] {
      cls = run_grid("configs/classification.json", root / "classification", reuse);
      return classification(*cls);
    });
  }
  if (want(7) || want(8) || want(9) || want(10)) {
    record(7, "segmentation trend", [&] {
      seg = run_grid("configs/segmentation.json", root / "segmentation", reuse);
      return segmentation(*seg);
    });
  }
  if (want(8) && seg) record(8, "per-image improvement fit", [&] { return improvement(*seg); });
  if (want(9) && cls && seg) record(9, "freeze contract", [&] { return freeze({&*cls, &*seg}); });
  if (want(10) && cls && seg)
    record(10, "determinism", [&] {
      Outcome o;
      replay(o, *cls, "baseline", root / "replay_cls_baseline");
      replay(o, *cls, "ion-fixed", root / "replay_cls_ion");
      replay(o, *seg, "ion-fixed", root / "replay_seg_ion");
      return o;
    });
  if (want(11)) record(11, "GAN smoke", gan_smoke);

  std::printf("\n");
  bool all = true, blocking = false;
  for (const auto& [id, r] : results) {
    const bool is_known = std::find(known.begin(), known.end(), id) != known.end();
    const char* note = !is_known     ? ""
                       : r.second.ok() ? "  (listed as known failure, now passes)"
                                       : "  (known failure)";
    std::printf("%s %2d %s%s\n", r.second.ok() ? "PASS" : "FAIL", id, r.first.c_str(), note);
    all &= r.second.ok();
    blocking |= !r.second.ok() && !is_known;
  }
  std::printf("%s: %zu criteria\n", all ? "ALL PASS" : "SOME FAILED", results.size());
  return blocking ? 1 : 0;
}
