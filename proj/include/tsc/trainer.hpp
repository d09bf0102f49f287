#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "tsc/architecture.hpp"
#include "tsc/dataset.hpp"
#include "tsc/metrics.hpp"
#include "tsc/optimizer.hpp"

namespace tsc {

struct TrainConfig {
  ArchitectureSpec architecture;
  std::size_t epochs = 20;
  std::size_t batch_size = 8;
  OptimizerConfig optimizer;
  std::uint64_t seed = 1;
  /// Generator settings, used when `data_dir` is empty.
  DatasetConfig dataset;
  /// Directory with `train/` and `val/` splits in the images/masks layout.
  std::filesystem::path data_dir;
  /// When non-empty, `train` writes curves.csv and model.params here.
  std::filesystem::path output_dir;
  /// Per-epoch progress on this stream when set.
  std::ostream* log = nullptr;

  void validate() const;
};

struct RunRecord {
  std::vector<double> train_loss;
  std::vector<double> val_miou;
  double wall_seconds = 0;
  double max_val_miou = 0;
};

/// Loads `data_dir` when set, otherwise generates the synthetic task.
Dataset load_or_generate(const TrainConfig& config);

/// Argmax prediction per pixel, then MIoU over the confusion matrix pooled
/// across the whole set.
template <typename Real>
MiouReport evaluate(const LayerGraph<Real>& graph, const std::vector<SegmentationSample>& samples,
                    std::size_t num_classes, std::size_t batch_size = 8);

/// Trains a freshly built network on `data`. The trained network is moved into
/// `trained` when given. Deterministic for a fixed config.
template <typename Real>
RunRecord train(const TrainConfig& config, const Dataset& data,
                LayerGraph<Real>* trained = nullptr);

/// Full run: data, training in single precision, and the files under
/// `output_dir`.
RunRecord train(const TrainConfig& config);

/// Writes `condition,run,epoch,train_loss,val_miou` rows.
void write_curves(std::ostream& out, const std::string& condition, std::size_t run,
                  const RunRecord& record, bool header);

template <typename Real>
void save_parameters(const LayerGraph<Real>& graph, const std::filesystem::path& path);
template <typename Real>
void load_parameters(LayerGraph<Real>& graph, const std::filesystem::path& path);

struct AblationCondition {
  Variant variant = Variant::UNet;
  bool ote = false;

  std::string name() const;
};

/// The four conditions: {UNet, TscNet} x {without, with} OTE.
std::vector<AblationCondition> default_conditions();

struct AblationConfig {
  /// Template for every run; variant, OTE and seed are overridden per run.
  TrainConfig base;
  std::vector<AblationCondition> conditions = default_conditions();
  /// One training run per seed and condition.
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  /// Independent runs executed concurrently.
  std::size_t jobs = 1;
};

struct ConditionResult {
  AblationCondition condition;
  std::vector<RunRecord> runs;
  RunAggregate max_miou;
};

struct AblationResult {
  std::vector<ConditionResult> conditions;
};

/// Runs every condition/seed pair. When `base.output_dir` is set, writes
/// curves.csv (per run), curves_mean.csv (mean and standard error per epoch)
/// and summary.csv (mean of per-run maximum validation MIoU).
AblationResult ablation(const AblationConfig& config);

}  // namespace tsc
