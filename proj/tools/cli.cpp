#include "cli.hpp"

#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "ion/experiment/runner.hpp"

namespace ion::cli {

namespace fs = std::filesystem;
using namespace ion::experiment;

void tune_allocator() {
#ifdef __GLIBC__
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

namespace {

// A JSON document given inline or as a path to a file.
nlohmann::json json_arg(const std::string& text, const std::string& flag) {
  std::string body = text;
  if (!text.empty() && text.front() != '{' && fs::exists(text)) {
    std::ifstream in(text, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    body = ss.str();
  }
  try {
    return nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(flag + ": " + e.what());
  }
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Input optimisation network experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";
  std::string scheme = "baseline";
  std::size_t threads = 1;
  bool no_reuse = false;
  bool quiet = false;

  auto* train = app.add_subcommand("train", "Train one stage (and its dependencies) for replicate 0");
  train->add_option("--config", config_path, "Experiment config (JSON)")->required();
  train->add_option("--scheme", scheme, "pretrain, gan or a technique id")->capture_default_str();
  train->add_option("--seed", seed, "Override the global seed");
  train->add_option("--out", out_dir, "Output directory")->capture_default_str();
  train->add_flag("--quiet", quiet, "No progress lines");

  std::string ckpt, ion_ckpt, domain, label = "eval";
  auto* eval = app.add_subcommand("eval", "Evaluate a target checkpoint, optionally behind an ION");
  eval->add_option("--config", config_path, "Experiment config (JSON)")->required();
  eval->add_option("--checkpoint", ckpt, "Target model checkpoint")->required();
  eval->add_option("--ion", ion_ckpt, "ION checkpoint");
  eval->add_option("--domain", domain, "Evaluate one domain only");
  eval->add_option("--label", label, "Technique column of the emitted rows")->capture_default_str();
  eval->add_option("--seed", seed, "Override the global seed");
  eval->add_option("--out", out_dir, "Output directory")->capture_default_str();

  auto* matrix = app.add_subcommand("matrix", "Run the technique grid over all domains and replicates");
  matrix->add_option("--config", config_path, "Experiment config (JSON)")->required();
  matrix->add_option("--seed", seed, "Override the global seed");
  matrix->add_option("--out", out_dir, "Output directory")->capture_default_str();
  matrix->add_option("--threads", threads, "Replicates run concurrently")->capture_default_str()
      ->check(CLI::PositiveNumber);
  matrix->add_flag("--no-reuse", no_reuse, "Retrain stages even when checkpoints exist");
  matrix->add_flag("--quiet", quiet, "No progress lines");

  std::string spec_text;
  std::vector<std::string> inputs;
  auto* deg = app.add_subcommand("degrade", "Degrade PPM images");
  deg->add_option("--spec", spec_text, "Degradation spec, inline JSON or a file")->required();
  deg->add_option("--seed", seed, "Seed");
  deg->add_option("--out", out_dir, "Output directory")->capture_default_str();
  deg->add_option("inputs", inputs, "Input PPM files")->required()->check(CLI::ExistingFile);

  std::string corrupt;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every operator");
  gc->add_option("--corrupt", corrupt, "Scale one operator's backward rule (negative control)");

  std::string run_dir;
  auto* report = app.add_subcommand("report", "Markdown and CSV report of a matrix run");
  report->add_option("run", run_dir, "Matrix output directory")->required()->check(CLI::ExistingDirectory);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 2;
  }

  try {
    RunOptions opts;
    opts.out = out_dir;
    opts.seed = seed;
    opts.threads = threads;
    opts.reuse_checkpoints = !no_reuse;
    opts.quiet = quiet;

    if (*train) {
      const auto rec = cmd_train(load_config(config_path), scheme, opts);
      out << rec.csv();
      return rec.aborted ? 3 : 0;
    }
    if (*eval) {
      EvalOptions e;
      e.target_checkpoint = ckpt;
      if (!ion_ckpt.empty()) e.ion_checkpoint = ion_ckpt;
      if (!domain.empty()) e.domain = domain;
      e.label = label;
      const auto rows = cmd_eval(load_config(config_path), e, opts);
      out << metrics_header();
      for (const auto& r : rows) out << metrics_row(r);
      return 0;
    }
    if (*matrix) {
      const auto mx = cmd_matrix(load_config(config_path), opts);
      out << mx.csv();
      return 0;
    }
    if (*deg) {
      degrade::DegradeSpec spec;
      try {
        spec = degrade::DegradeSpec::from_json(json_arg(spec_text, "--spec"));
      } catch (const ConfigError&) {
        throw;
      } catch (const std::exception& e) {
        throw ConfigError(std::string("--spec: ") + e.what());
      }
      std::vector<fs::path> paths(inputs.begin(), inputs.end());
      for (const auto& r : cmd_degrade(paths, spec, seed.value_or(0), out_dir)) out << r.output.string() << "\n";
      return 0;
    }
    if (*gc) {
      const auto rows = cmd_gradcheck(corrupt);
      out << gradcheck_table(rows);
      for (const auto& r : rows)
        if (!r.passed) return 1;
      return 0;
    }
    if (*report) {
      const auto rep = cmd_report(run_dir);
      out << rep.markdown;
      return 0;
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  }
  return 2;
}

}  // namespace ion::cli
