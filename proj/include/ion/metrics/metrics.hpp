#pragma once
// Classification and segmentation metrics over confusion counts.
//
// Classes whose denominator is zero (absent from both prediction and ground
// truth for IoU; no ground-truth or no predicted pixels for recall/precision)
// are reported as absent and excluded from unweighted means.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ion::metrics {

struct ConfusionCounts {
  std::size_t num_classes = 0;
  // matrix[gt * K + pred]
  std::vector<std::uint64_t> matrix;

  explicit ConfusionCounts(std::size_t k = 0) : num_classes(k), matrix(k * k, 0) {}

  std::uint64_t total() const;
  std::uint64_t tp(std::size_t c) const { return matrix[c * num_classes + c]; }
  std::uint64_t fp(std::size_t c) const;  // predicted c, truth differs
  std::uint64_t fn(std::size_t c) const;  // truth c, predicted otherwise
  std::uint64_t tn(std::size_t c) const { return total() - tp(c) - fp(c) - fn(c); }

  ConfusionCounts& operator+=(const ConfusionCounts& other);
  bool operator==(const ConfusionCounts&) const = default;
};

// Pixels whose ground truth equals `ignore_id` are skipped.
ConfusionCounts confusion(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt,
                          std::size_t num_classes, std::optional<std::int32_t> ignore_id = {});

using PerClass = std::vector<std::optional<double>>;

PerClass class_iou(const ConfusionCounts& cc);
PerClass class_accuracy(const ConfusionCounts& cc);
PerClass class_recall(const ConfusionCounts& cc);
PerClass class_precision(const ConfusionCounts& cc);

// Unweighted mean over present classes; NaN when no class is present.
double mean_present(const PerClass& values);
double mean_class_iou(const ConfusionCounts& cc);

// Ground-truth pixel share of each class.
std::vector<double> class_proportions(const ConfusionCounts& cc);

// sum_c w_c v_c; weights must sum to 1 within 1e-6.
double weighted_mean_metric(std::span<const double> values, std::span<const double> proportions);
// Absent values contribute 0 (their ground-truth weight is 0 for IoU and recall).
double weighted_mean_metric(const PerClass& values, std::span<const double> proportions);

struct SegmentationSummary {
  PerClass accuracy, recall, precision, iou;
  std::vector<double> proportions;
  double mean_accuracy, mean_recall, mean_precision, mean_iou;
  double weighted_accuracy, weighted_recall, weighted_precision, weighted_iou;
};

SegmentationSummary summarise(const ConfusionCounts& cc);

double cls_accuracy(std::span<const std::int32_t> preds, std::span<const std::int32_t> gts);

struct ImprovementPoint {
  std::string image_id;
  double baseline_iou = 0;
  double delta = 0;
};

struct ImprovementFit {
  double slope = 0;
  double intercept = 0;
  double fraction_improved = 0;
  std::size_t n = 0;
};

// Ordinary least squares of delta on baseline.
ImprovementFit improvement_analysis(std::span<const ImprovementPoint> points);

// CSV of the confusion matrix: header gt\pred,0..K-1 then one row per class.
std::string confusion_csv(const ConfusionCounts& cc);

}  // namespace ion::metrics
