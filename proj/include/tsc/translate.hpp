#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>

#include "tsc/tensor.hpp"

namespace tsc {

enum class Direction { Left, Up, DiagUpLeft };

std::string_view to_string(Direction direction);

/// Exact non-negative rational used for translation factors.
struct Fraction {
  std::int64_t num = 0;
  std::int64_t den = 1;

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  friend bool operator==(const Fraction& a, const Fraction& b) { return a.num * b.den == b.num * a.den; }
};

/// round(factor * extent) with halves rounded away from zero.
std::size_t shift_for(Fraction factor, std::size_t extent);

/// Translation factor of one translated skip: l / (D + 1), where the level l
/// counts skips from 1 at the bottleneck up to D at the full-resolution skip.
class TranslationSpec {
 public:
  TranslationSpec(int level, int depth);

  int level() const noexcept { return level_; }
  int depth() const noexcept { return depth_; }
  Fraction factor() const noexcept { return {level_, depth_ + 1}; }

 private:
  int level_;
  int depth_;
};

struct TscBlockConfig {
  std::size_t channels = 0;
  TranslationSpec translation{1, 1};

  std::size_t output_channels() const noexcept { return 4 * channels; }
};

/// Cyclic shift of every H x W plane. `Up` moves rows up by round(factor * H)
/// with the top rows re-entering at the bottom; `Left` does the same for
/// columns; `DiagUpLeft` applies both.
template <typename Real>
Tensor<Real> translate(const Tensor<Real>& x, Direction direction, Fraction factor);

/// Translated skip connection:
///   (f(X) + X) ++ T_left(X, f) ++ T_up(X, f) ++ T_diag(X, f)
/// concatenated along channels, with f = l / (D + 1).
template <typename Real>
Tensor<Real> tsc_block(const Tensor<Real>& f_x, const Tensor<Real>& x,
                       const TscBlockConfig& config);

/// Appends normalised pixel coordinates x / W and y / H (zero-based) as two
/// constant channels.
template <typename Real>
Tensor<Real> coord_inject(const Tensor<Real>& image);

}  // namespace tsc
