#include <stdexcept>

#include "ion/ops.hpp"
#include "ion/train/train.hpp"

namespace ion::train {

EvalResult evaluate(nn::Model<float>& F, nn::Model<float>* G, const std::vector<Tensor<float>>& xs,
                    const std::vector<std::vector<std::int32_t>>& targets, Task task,
                    std::size_t num_classes) {
  if (xs.size() != targets.size()) throw std::invalid_argument("evaluate: batch count mismatch");
  if (xs.empty()) throw std::invalid_argument("evaluate: no batches");
  const bool f_mode = F.training(), g_mode = G ? G->training() : false;
  F.set_training(false);
  if (G) G->set_training(false);

  EvalResult r;
  r.counts = metrics::ConfusionCounts(num_classes);
  double loss_sum = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const Tensor<float> x = G ? G->forward(nullptr, xs[i]) : xs[i];
    const Tensor<float> logits = F.forward(nullptr, x);
    const double loss = ops::softmax_cross_entropy<float>(nullptr, logits, targets[i]).item();
    loss_sum += loss * static_cast<double>(targets[i].size());
    n += targets[i].size();
    const auto pred = ops::argmax_channels(logits);
    r.counts += metrics::confusion(pred, targets[i], num_classes);
    r.predictions.insert(r.predictions.end(), pred.begin(), pred.end());
  }
  r.loss = loss_sum / static_cast<double>(n);
  if (task == Task::kClassification) {
    std::vector<std::int32_t> all;
    for (const auto& t : targets) all.insert(all.end(), t.begin(), t.end());
    r.metric = metrics::cls_accuracy(r.predictions, all);
  } else {
    r.metric = metrics::mean_class_iou(r.counts);
  }
  F.set_training(f_mode);
  if (G) G->set_training(g_mode);
  return r;
}

}  // namespace ion::train
