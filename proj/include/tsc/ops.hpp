#pragma once

#include <cstdint>
#include <vector>

#include "tsc/tensor.hpp"

namespace tsc {

/// Learnable convolution parameters plus geometry.
///
/// For `conv2d` the kernel has shape (Cout, Cin, k, k). `conv2d_transposed`
/// uses the same storage as the adjoint operator, so a kernel of shape
/// (A, B, k, k) maps A input channels to B output channels. The bias is
/// optional; when defined it holds one value per output channel.
template <typename Real>
struct ConvSpec {
  Tensor<Real> kernel;
  Tensor<Real> bias;
  int stride = 1;
  int dilation = 1;
  int padding = 0;
};

/// Output extent of a convolution along one axis, or a non-positive value when
/// the geometry produces no output.
constexpr long conv_output_extent(long in, long k, int stride, int dilation, int padding) {
  const long span = in + 2L * padding - static_cast<long>(dilation) * (k - 1) - 1;
  if (span < 0) return 0;
  return span / stride + 1;
}

constexpr long conv_transposed_output_extent(long in, long k, int stride, int dilation,
                                             int padding) {
  return static_cast<long>(stride) * (in - 1) + static_cast<long>(dilation) * (k - 1) + 1 -
         2L * padding;
}

/// Class-index map for a batch of segmentation targets, laid out (N, H, W).
struct LabelMap {
  std::size_t batch = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::int32_t> values;

  LabelMap() = default;
  LabelMap(std::size_t n, std::size_t h, std::size_t w, std::int32_t fill = 0)
      : batch(n), height(h), width(w), values(n * h * w, fill) {}

  std::int32_t& at(std::size_t n, std::size_t y, std::size_t x) {
    return values[(n * height + y) * width + x];
  }
  std::int32_t at(std::size_t n, std::size_t y, std::size_t x) const {
    return values[(n * height + y) * width + x];
  }
};

/// Cross-correlation with zero padding, stride and dilation.
template <typename Real>
Tensor<Real> conv2d(const Tensor<Real>& input, const ConvSpec<Real>& spec);

/// Adjoint of `conv2d` with the same spec; used for learnable upsampling.
template <typename Real>
Tensor<Real> conv2d_transposed(const Tensor<Real>& input, const ConvSpec<Real>& spec);

/// 2x2 max pooling with stride 2. Ties resolve to the first element in
/// row-major scan order.
template <typename Real>
Tensor<Real> maxpool2d(const Tensor<Real>& input);

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b);

template <typename Real>
Tensor<Real> relu(const Tensor<Real>& input);

/// Stacks tensors along the channel axis.
template <typename Real>
Tensor<Real> concat_channels(const std::vector<Tensor<Real>>& parts);

/// Sum of all elements as a (1, 1, 1, 1) tensor.
template <typename Real>
Tensor<Real> sum(const Tensor<Real>& input);

/// A single element as a (1, 1, 1, 1) tensor.
template <typename Real>
Tensor<Real> pick(const Tensor<Real>& input, std::size_t n, std::size_t c, std::size_t y,
                  std::size_t x);

/// Mean over batch and pixels of -log softmax(logits)[target].
template <typename Real>
Tensor<Real> softmax_cross_entropy(const Tensor<Real>& logits, const LabelMap& target);

/// Per-pixel argmax over channels.
template <typename Real>
LabelMap argmax_channels(const Tensor<Real>& logits);

}  // namespace tsc
