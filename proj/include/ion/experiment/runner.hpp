#pragma once
// End-to-end runs: datasets and fixed evaluation sets from a config, the
// technique grid, per-cell metric files and the comparison report.
//
// Matrix output layout under the run directory:
//   config.json                               canonical config echo
//   rep<r>/<stage>.csv, .manifest.json        RunRecords
//   rep<r>/<stage>.F.ckpt, .G.ckpt            checkpoints
//   cells/<technique>/<domain>/rep<r>.metrics.csv
//   cells/<technique>/<domain>/rep<r>.confusion.csv
//   cells/<technique>/<domain>/rep<r>.per_image.csv   (segmentation)
//   metrics.csv, matrix.csv, matrix.md        aggregated, in grid order

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ion/experiment/config.hpp"

namespace ion::experiment {

struct Splits {
  std::vector<data::Sample> train, val, test;
};

// Shapes data is generated from dataset_seed(config.seed); CIFAR-10 is read
// from disk with validation taken from the tail of the training batches.
Splits make_splits(const ExperimentConfig& cfg);

struct EvalSet {
  std::string domain;
  degrade::FixedEvalSet fixed;
  std::vector<Tensor<float>> xs;  // batches of cfg.eval_batch, dataset order
  std::vector<std::vector<std::int32_t>> targets;
};

EvalSet build_eval_set(const ExperimentConfig& cfg, const Domain& domain,
                       const std::vector<data::Sample>& test);
std::vector<EvalSet> build_eval_sets(const ExperimentConfig& cfg,
                                     const std::vector<data::Sample>& test);

struct CellResult {
  std::string technique;
  std::string domain;
  std::size_t replicate = 0;
  std::uint64_t seed = 0;  // cell_seed
  train::EvalResult eval;
  std::vector<double> per_image_iou;  // segmentation only
};

CellResult evaluate_cell(nn::Model<float>& F, nn::Model<float>* G, const EvalSet& set,
                         const ExperimentConfig& cfg, const std::string& technique,
                         std::size_t replicate);

// technique,domain,replicate,seed,n,loss,metric, then the aggregate
// accuracy/recall/precision/IoU means (unweighted and pixel-weighted).
std::string metrics_header();
std::string metrics_row(const CellResult& r);
std::string per_image_csv(const CellResult& r);

// Writes the three per-cell files under `run_dir`/cells.
void write_cell(const std::filesystem::path& run_dir, const CellResult& r);
std::filesystem::path cell_dir(const std::filesystem::path& run_dir, const std::string& technique,
                               const std::string& domain);

// ---- commands ---------------------------------------------------------------

struct RunOptions {
  std::filesystem::path out;
  std::optional<std::uint64_t> seed;  // overrides config.seed
  std::size_t threads = 1;            // replicates run concurrently when > 1
  bool reuse_checkpoints = true;
  bool quiet = false;
};

// Trains one stage for replicate 0 together with the stages it depends on.
// `scheme` is a technique id, "pretrain" or "gan". Returns the stage's record.
train::RunRecord cmd_train(const ExperimentConfig& cfg, const std::string& scheme,
                           const RunOptions& opts);

struct EvalOptions {
  std::filesystem::path target_checkpoint;
  std::optional<std::filesystem::path> ion_checkpoint;
  std::optional<std::string> domain;  // all domains when empty
  std::string label = "eval";         // technique column of the emitted rows
};

// Emits metrics.csv and per-domain confusion CSVs into opts.out; returns the rows.
std::vector<CellResult> cmd_eval(const ExperimentConfig& cfg, const EvalOptions& eval,
                                 const RunOptions& opts);

struct MatrixCell {
  std::vector<double> values;  // one per finished replicate
  std::optional<double> median;
};

struct Matrix {
  std::vector<std::string> domains;     // rows
  std::vector<std::string> techniques;  // columns
  std::map<std::pair<std::string, std::string>, MatrixCell> cells;  // (domain, technique)

  std::optional<double> median(const std::string& domain, const std::string& technique) const;
  // Column indices holding the row maximum (ties all marked).
  std::vector<std::size_t> row_max(const std::string& domain) const;
  std::string csv() const;
  std::string markdown(const std::string& metric_name) const;
};

// Runs the full grid; partial cell files survive a failure, which is rethrown.
Matrix cmd_matrix(const ExperimentConfig& cfg, const RunOptions& opts);

// Rebuilds the matrix from the cell files of a run directory.
Matrix collect_matrix(const std::filesystem::path& run_dir, const ExperimentConfig& cfg,
                      std::vector<std::string>* missing = nullptr);

struct DegradeResult {
  std::filesystem::path output;
  std::optional<degrade::UnderexposeParams> theta;
  std::pair<double, double> moments;  // V-channel mean and standard deviation of the input
};

// Degrades every PPM with per-file seeds split_seed(seed, {index}); writes
// <stem>.ppm files and manifest.csv into `out`.
std::vector<DegradeResult> cmd_degrade(const std::vector<std::filesystem::path>& inputs,
                                       const degrade::DegradeSpec& spec, std::uint64_t seed,
                                       const std::filesystem::path& out);

struct GradcheckRow {
  std::string name;
  double max_rel_error = 0;
  double tolerance = 0;
  bool passed = false;
};

// Every registered operator plus the tiny end-to-end ION. `corrupt_op` scales
// that operator's backward contributions to exercise the failure path.
std::vector<GradcheckRow> cmd_gradcheck(const std::string& corrupt_op = "");
std::string gradcheck_table(const std::vector<GradcheckRow>& rows);

// ---- report -----------------------------------------------------------------

struct ParamRow {
  std::size_t n_blocks = 0;
  std::size_t base_channels = 0;
  std::size_t params = 0;
  std::optional<double> ratio_to_next;  // params(N) / params(next smaller N)
};

std::vector<ParamRow> param_table(std::size_t base_channels, const std::vector<std::size_t>& ns);

struct TechniqueFit {
  std::string technique;
  std::vector<metrics::ImprovementPoint> points;
  std::optional<metrics::ImprovementFit> fit;
};

// Per-image points of each technique against the baseline, pooled over the
// degraded domains. Per-image IoUs are medians over replicates.
std::vector<TechniqueFit> improvement_points(const std::filesystem::path& run_dir,
                                             const ExperimentConfig& cfg);

// image_id,baseline_iou,delta,technique
std::string improvement_csv(const std::vector<TechniqueFit>& fits);

struct Report {
  Matrix matrix;
  std::vector<std::string> missing;
  std::vector<TechniqueFit> fits;
  std::vector<ParamRow> params_full, params_desk;
  std::string markdown;
};

// Reads a matrix run directory and writes report.md, matrix.csv,
// improvement.csv, improvement_fit.csv and params.csv next to it.
Report cmd_report(const std::filesystem::path& run_dir);

double median(std::vector<double> v);

}  // namespace ion::experiment
