#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "tsc/ops.hpp"
#include "tsc/tensor.hpp"

namespace tsc {

/// Image in [0, 1] of shape (1, C, H, W) with its (1, H, W) class mask.
struct SegmentationSample {
  Tensor<float> image;
  LabelMap mask;
};

/// Settings of the "top and left rectangle" texture task.
///
/// Every image holds two rectangles filled with the same procedural texture
/// on a noisy background. The rectangle whose centre is higher is class 1,
/// the one whose centre is further left is class 2, background is class 0.
/// Placement always puts the two roles on different rectangles, so a pixel's
/// label depends on where the other rectangle is.
struct DatasetConfig {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t train_samples = 200;
  std::size_t validation_samples = 50;
  /// Rectangle side lengths as fractions of the image side.
  double min_rect_fraction = 0.15;
  double max_rect_fraction = 0.30;
  /// Half-width of the uniform per-pixel noise added everywhere.
  double noise = 0.08;
  std::uint64_t seed = 7;

  void validate() const;
};

enum class Split { Train = 0, Validation = 1 };

inline constexpr std::int32_t kDatasetClasses = 3;

SegmentationSample generate_sample(const DatasetConfig& config, Split split, std::size_t index);
std::vector<SegmentationSample> generate_samples(const DatasetConfig& config, Split split);

struct Dataset {
  std::vector<SegmentationSample> train;
  std::vector<SegmentationSample> validation;
};

Dataset generate_dataset(const DatasetConfig& config);

/// 8-bit RGB (or gray) image PNG plus 8-bit single-channel mask PNG.
void save_sample(const SegmentationSample& sample, const std::filesystem::path& image_path,
                 const std::filesystem::path& mask_path);
SegmentationSample load_sample(const std::filesystem::path& image_path,
                               const std::filesystem::path& mask_path, std::int32_t num_classes);

/// Writes `<root>/images/NNNN.png` and `<root>/masks/NNNN.png`.
void save_split(const std::vector<SegmentationSample>& samples, const std::filesystem::path& root);
/// Loads every image/mask pair sharing a numeric stem, in stem order.
std::vector<SegmentationSample> load_split(const std::filesystem::path& root,
                                           std::int32_t num_classes);

}  // namespace tsc
