#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "tsc/architecture.hpp"

namespace tsc {

/// Output unit whose receptive field is measured.
struct UnitCoord {
  std::size_t channel = 0;
  std::size_t y = 0;
  std::size_t x = 0;
};

/// Mean over image channels of |d unit / d input pixel|, averaged over probes.
struct ErfMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;
  UnitCoord target;

  double max() const;
  /// Row-major mask of pixels whose value exceeds tau * max.
  std::vector<std::uint8_t> support(double tau) const;
};

template <typename Real>
ErfMap empirical_erf(const LayerGraph<Real>& graph, std::span<const Tensor<Real>> probes,
                     const UnitCoord& target);

/// Draws `samples` standard-normal probe images of size height x width.
template <typename Real>
ErfMap empirical_erf(const LayerGraph<Real>& graph, std::size_t height, std::size_t width,
                     const UnitCoord& target, std::size_t samples, std::uint64_t seed);

/// Axis-aligned rectangle in input pixels (inclusive bounds), tagged with the
/// accumulated cyclic displacement of the translation path that produced it.
struct TaggedRect {
  long y0 = 0, y1 = 0;
  long x0 = 0, x1 = 0;
  long offset_y = 0, offset_x = 0;

  friend auto operator<=>(const TaggedRect&, const TaggedRect&) = default;
};

struct RfRegion {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<TaggedRect> rects;

  std::vector<std::uint8_t> mask() const;
  std::size_t area() const;
  bool contains(std::size_t y, std::size_t x) const;
  /// Number of distinct translation offsets among the rectangles.
  std::size_t component_count() const;
};

/// Theoretical receptive field of one output unit, obtained by pushing a
/// region backwards through every op of the graph.
template <typename Real>
RfRegion analytic_rf(const LayerGraph<Real>& graph, std::size_t height, std::size_t width,
                     const UnitCoord& target);

struct SupportStats {
  std::size_t count = 0;
  double fraction = 0;
};

SupportStats erf_support_stats(const ErfMap& map, double tau);

/// 16-bit grayscale PNG, linearly scaled so the maximum maps to 65535.
void save_heatmap(const ErfMap& map, const std::filesystem::path& path);

}  // namespace tsc
