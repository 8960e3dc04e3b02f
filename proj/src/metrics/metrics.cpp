#include "ion/metrics/metrics.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace ion::metrics {

std::uint64_t ConfusionCounts::total() const {
  return std::accumulate(matrix.begin(), matrix.end(), std::uint64_t{0});
}

std::uint64_t ConfusionCounts::fp(std::size_t c) const {
  std::uint64_t s = 0;
  for (std::size_t g = 0; g < num_classes; ++g)
    if (g != c) s += matrix[g * num_classes + c];
  return s;
}

std::uint64_t ConfusionCounts::fn(std::size_t c) const {
  std::uint64_t s = 0;
  for (std::size_t p = 0; p < num_classes; ++p)
    if (p != c) s += matrix[c * num_classes + p];
  return s;
}

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& other) {
  if (other.num_classes != num_classes)
    throw std::invalid_argument("confusion: cannot add counts over different class counts");
  for (std::size_t i = 0; i < matrix.size(); ++i) matrix[i] += other.matrix[i];
  return *this;
}

ConfusionCounts confusion(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt,
                          std::size_t num_classes, std::optional<std::int32_t> ignore_id) {
  if (pred.size() != gt.size())
    throw std::invalid_argument("confusion: prediction has " + std::to_string(pred.size()) +
                                " elements, ground truth " + std::to_string(gt.size()));
  ConfusionCounts cc(num_classes);
  const auto k = static_cast<std::int32_t>(num_classes);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (ignore_id && gt[i] == *ignore_id) continue;
    if (gt[i] < 0 || gt[i] >= k || pred[i] < 0 || pred[i] >= k)
      throw std::invalid_argument("confusion: class id out of range at element " +
                                  std::to_string(i));
    ++cc.matrix[static_cast<std::size_t>(gt[i]) * num_classes + static_cast<std::size_t>(pred[i])];
  }
  return cc;
}

namespace {

std::optional<double> ratio(std::uint64_t num, std::uint64_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

PerClass class_iou(const ConfusionCounts& cc) {
  PerClass out(cc.num_classes);
  for (std::size_t c = 0; c < cc.num_classes; ++c)
    out[c] = ratio(cc.tp(c), cc.tp(c) + cc.fp(c) + cc.fn(c));
  return out;
}

PerClass class_accuracy(const ConfusionCounts& cc) {
  PerClass out(cc.num_classes);
  const auto total = cc.total();
  for (std::size_t c = 0; c < cc.num_classes; ++c) out[c] = ratio(cc.tp(c) + cc.tn(c), total);
  return out;
}

PerClass class_recall(const ConfusionCounts& cc) {
  PerClass out(cc.num_classes);
  for (std::size_t c = 0; c < cc.num_classes; ++c) out[c] = ratio(cc.tp(c), cc.tp(c) + cc.fn(c));
  return out;
}

PerClass class_precision(const ConfusionCounts& cc) {
  PerClass out(cc.num_classes);
  for (std::size_t c = 0; c < cc.num_classes; ++c) out[c] = ratio(cc.tp(c), cc.tp(c) + cc.fp(c));
  return out;
}

double mean_present(const PerClass& values) {
  std::size_t n = 0;
  for (const auto& v : values) n += v.has_value();
  if (n == 0) return std::numeric_limits<double>::quiet_NaN();
  // Accumulated as a uniform weighted mean so it matches weighted_mean_metric
  // with uniform proportions bit for bit.
  const double w = 1.0 / static_cast<double>(n);
  double s = 0;
  for (const auto& v : values)
    if (v) s += w * *v;
  return s;
}

double mean_class_iou(const ConfusionCounts& cc) { return mean_present(class_iou(cc)); }

std::vector<double> class_proportions(const ConfusionCounts& cc) {
  std::vector<double> out(cc.num_classes, 0.0);
  const auto total = cc.total();
  if (total == 0) return out;
  for (std::size_t c = 0; c < cc.num_classes; ++c)
    out[c] = static_cast<double>(cc.tp(c) + cc.fn(c)) / static_cast<double>(total);
  return out;
}

double weighted_mean_metric(std::span<const double> values, std::span<const double> proportions) {
  if (values.size() != proportions.size())
    throw std::invalid_argument("weighted_mean_metric: " + std::to_string(values.size()) +
                                " values but " + std::to_string(proportions.size()) + " weights");
  double wsum = 0, s = 0;
  for (std::size_t c = 0; c < values.size(); ++c) {
    wsum += proportions[c];
    s += proportions[c] * values[c];
  }
  if (std::abs(wsum - 1.0) > 1e-6)
    throw std::invalid_argument("weighted_mean_metric: proportions sum to " + std::to_string(wsum));
  return s;
}

double weighted_mean_metric(const PerClass& values, std::span<const double> proportions) {
  std::vector<double> v(values.size());
  for (std::size_t c = 0; c < values.size(); ++c) v[c] = values[c].value_or(0.0);
  return weighted_mean_metric(v, proportions);
}

SegmentationSummary summarise(const ConfusionCounts& cc) {
  SegmentationSummary s;
  s.accuracy = class_accuracy(cc);
  s.recall = class_recall(cc);
  s.precision = class_precision(cc);
  s.iou = class_iou(cc);
  s.proportions = class_proportions(cc);
  s.mean_accuracy = mean_present(s.accuracy);
  s.mean_recall = mean_present(s.recall);
  s.mean_precision = mean_present(s.precision);
  s.mean_iou = mean_present(s.iou);
  const bool any = cc.total() > 0;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  s.weighted_accuracy = any ? weighted_mean_metric(s.accuracy, s.proportions) : nan;
  s.weighted_recall = any ? weighted_mean_metric(s.recall, s.proportions) : nan;
  s.weighted_precision = any ? weighted_mean_metric(s.precision, s.proportions) : nan;
  s.weighted_iou = any ? weighted_mean_metric(s.iou, s.proportions) : nan;
  return s;
}

double cls_accuracy(std::span<const std::int32_t> preds, std::span<const std::int32_t> gts) {
  if (preds.size() != gts.size())
    throw std::invalid_argument("cls_accuracy: length mismatch");
  if (preds.empty()) throw std::invalid_argument("cls_accuracy: empty input");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hit += preds[i] == gts[i];
  return static_cast<double>(hit) / static_cast<double>(preds.size());
}

ImprovementFit improvement_analysis(std::span<const ImprovementPoint> points) {
  if (points.size() < 2) throw std::invalid_argument("improvement_analysis: need >= 2 points");
  const double n = static_cast<double>(points.size());
  double mx = 0, my = 0;
  for (const auto& p : points) {
    mx += p.baseline_iou;
    my += p.delta;
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0;
  std::size_t improved = 0;
  for (const auto& p : points) {
    sxx += (p.baseline_iou - mx) * (p.baseline_iou - mx);
    sxy += (p.baseline_iou - mx) * (p.delta - my);
    improved += p.delta > 0;
  }
  if (!(sxx > 0)) throw std::invalid_argument("improvement_analysis: baselines have zero variance");
  ImprovementFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  fit.fraction_improved = static_cast<double>(improved) / n;
  fit.n = points.size();
  return fit;
}

std::string confusion_csv(const ConfusionCounts& cc) {
  std::ostringstream out;
  out << "gt\\pred";
  for (std::size_t p = 0; p < cc.num_classes; ++p) out << "," << p;
  out << "\r\n";
  for (std::size_t g = 0; g < cc.num_classes; ++g) {
    out << g;
    for (std::size_t p = 0; p < cc.num_classes; ++p) out << "," << cc.matrix[g * cc.num_classes + p];
    out << "\r\n";
  }
  return out.str();
}

}  // namespace ion::metrics
