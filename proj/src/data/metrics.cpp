#include "tsc/metrics.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace tsc {

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes)
    : classes_(num_classes), counts_(num_classes * num_classes, 0) {
  if (num_classes == 0) throw std::invalid_argument("ConfusionMatrix: need at least one class");
}

void ConfusionMatrix::add(const LabelMap& prediction, const LabelMap& truth) {
  if (prediction.batch != truth.batch || prediction.height != truth.height ||
      prediction.width != truth.width) {
    throw std::invalid_argument("miou: prediction is " + std::to_string(prediction.batch) + "x" +
                                std::to_string(prediction.height) + "x" +
                                std::to_string(prediction.width) + " but truth is " +
                                std::to_string(truth.batch) + "x" + std::to_string(truth.height) +
                                "x" + std::to_string(truth.width));
  }
  for (std::size_t i = 0; i < truth.values.size(); ++i) {
    const auto t = truth.values[i];
    const auto p = prediction.values[i];
    if (t < 0 || p < 0 || static_cast<std::size_t>(t) >= classes_ ||
        static_cast<std::size_t>(p) >= classes_) {
      throw std::invalid_argument("miou: class index outside [0, " + std::to_string(classes_) + ")");
    }
    ++counts_[static_cast<std::size_t>(t) * classes_ + static_cast<std::size_t>(p)];
  }
}

MiouReport ConfusionMatrix::report() const {
  MiouReport report;
  report.per_class.resize(classes_);
  double total = 0;
  std::size_t defined = 0;
  for (std::size_t c = 0; c < classes_; ++c) {
    std::uint64_t truth_c = 0;
    std::uint64_t pred_c = 0;
    for (std::size_t k = 0; k < classes_; ++k) {
      truth_c += count(c, k);
      pred_c += count(k, c);
    }
    const std::uint64_t intersection = count(c, c);
    const std::uint64_t union_c = truth_c + pred_c - intersection;
    if (union_c == 0) continue;
    const double iou = static_cast<double>(intersection) / static_cast<double>(union_c);
    report.per_class[c] = iou;
    total += iou;
    ++defined;
  }
  report.mean = defined > 0 ? total / static_cast<double>(defined) : 0.0;
  return report;
}

MiouReport miou(const LabelMap& prediction, const LabelMap& truth, std::size_t num_classes) {
  ConfusionMatrix cm(num_classes);
  cm.add(prediction, truth);
  return cm.report();
}

RunAggregate aggregate_runs(std::span<const double> values) {
  if (values.size() < 2) {
    throw std::invalid_argument("aggregate_runs: need at least 2 runs, got " +
                                std::to_string(values.size()));
  }
  const auto n = static_cast<double>(values.size());
  double mean = 0;
  for (double v : values) mean += v;
  mean /= n;
  double squares = 0;
  for (double v : values) squares += (v - mean) * (v - mean);
  const double sample_sd = std::sqrt(squares / (n - 1));
  return {mean, sample_sd / std::sqrt(n)};
}

}  // namespace tsc
