#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "tsc/ops.hpp"

namespace tsc {

struct MiouReport {
  /// IoU per class; empty when the class is absent from both masks.
  std::vector<std::optional<double>> per_class;
  /// Mean over the defined classes (0 when none is defined).
  double mean = 0;
};

/// Pixel confusion counts, rows = truth, columns = prediction.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes);

  void add(const LabelMap& prediction, const LabelMap& truth);
  std::uint64_t count(std::size_t truth, std::size_t prediction) const {
    return counts_[truth * classes_ + prediction];
  }
  std::size_t num_classes() const noexcept { return classes_; }
  MiouReport report() const;

 private:
  std::size_t classes_;
  std::vector<std::uint64_t> counts_;
};

MiouReport miou(const LabelMap& prediction, const LabelMap& truth, std::size_t num_classes);

struct RunAggregate {
  double mean = 0;
  /// Sample standard deviation divided by sqrt(n).
  double standard_error = 0;
};

RunAggregate aggregate_runs(std::span<const double> per_run_values);

}  // namespace tsc
