#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tsc/ops.hpp"
#include "tsc/tensor.hpp"
#include "tsc/translate.hpp"

namespace tsc {

/// The five compared encoder-decoder networks.
enum class Variant { UNet, Dilated2, Dilated3, BNet, TscNet };

inline constexpr Variant kAllVariants[] = {Variant::UNet, Variant::Dilated2, Variant::Dilated3,
                                           Variant::BNet, Variant::TscNet};

std::string_view to_string(Variant variant);
/// Accepts the names printed by `to_string` ("unet", "dilated2", "dilated3",
/// "bnet", "tscnet").
Variant parse_variant(std::string_view name);
/// Dilation of every 3x3 convolution: 2 or 3 for the dilated variants, else 1.
int dilation_rate(Variant variant);

/// How TscNet widths are chosen when no explicit schedule is given.
enum class WidthPolicy {
  /// Use the doubling schedule from `base_channels` unchanged.
  Exact,
  /// Shrink the base width until the network has fewer parameters than the
  /// BNet built from the same spec.
  BelowBNet,
};

struct ArchitectureSpec {
  Variant variant = Variant::UNet;
  int depth = 3;
  int base_channels = 8;
  /// Optional per-level widths: `depth` encoder levels followed by the
  /// bottleneck. Empty means base_channels * 2^level.
  std::vector<int> widths;
  int num_classes = 3;
  bool ote = false;
  int image_channels = 3;
  WidthPolicy width_policy = WidthPolicy::BelowBNet;

  int input_channels() const noexcept { return image_channels + (ote ? 2 : 0); }
  /// Input height and width must be multiples of this.
  std::size_t size_divisor() const noexcept { return std::size_t{1} << depth; }
  void validate() const;
};

/// Widths actually used by `build`, after applying the width policy.
std::vector<int> resolve_widths(const ArchitectureSpec& spec);

enum class OpKind { Input, CoordInject, Conv, ConvTransposed, MaxPool, Relu, Add, Concat, Tsc };

struct GraphOp {
  OpKind kind = OpKind::Input;
  std::string name;
  std::vector<int> inputs;
  /// Index into the layer table for Conv and ConvTransposed.
  int layer = -1;
  std::optional<TranslationSpec> translation;
};

struct LayerGeometry {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  int kernel = 1;
  int stride = 1;
  int dilation = 1;
  int padding = 0;
  bool transposed = false;
};

template <typename Real>
struct ConvLayer {
  std::string name;
  LayerGeometry geometry;
  ConvSpec<Real> spec;

  std::size_t param_count() const noexcept {
    const auto k = static_cast<std::size_t>(geometry.kernel);
    return geometry.in_channels * geometry.out_channels * k * k + geometry.out_channels;
  }
};

/// A small dataflow graph of tensor operations evaluated in insertion order.
/// Convolution parameters are owned here and allocated by `initialize`.
template <typename Real>
class LayerGraph {
 public:
  explicit LayerGraph(std::size_t input_channels, std::size_t size_divisor = 1);

  int input() const noexcept { return 0; }
  int add_coord_inject(int in, std::string name);
  int add_conv(int in, const LayerGeometry& geometry, std::string name);
  int add_maxpool(int in, std::string name);
  int add_relu(int in, std::string name);
  int add_add(int a, int b, std::string name);
  int add_concat(std::vector<int> parts, std::string name);
  int add_tsc(int f_x, int x, TranslationSpec translation, std::string name);
  void set_output(int op);

  /// Fan-in scaled normal kernels (variance 2 / fan_in) and zero biases.
  void initialize(std::uint64_t seed);
  bool initialized() const noexcept;

  /// Runs the graph. When `taps` is given it receives every op's output,
  /// indexed like `ops()`.
  Tensor<Real> forward(const Tensor<Real>& batch, std::vector<Tensor<Real>>* taps = nullptr) const;

  /// Output shape of every op for a given input shape.
  std::vector<Shape> infer_shapes(const Shape& input) const;

  std::vector<Tensor<Real>> parameters() const;
  std::size_t count_params() const noexcept;

  std::size_t input_channels() const noexcept { return input_channels_; }
  std::size_t size_divisor() const noexcept { return size_divisor_; }
  int output() const noexcept { return output_; }
  const std::vector<GraphOp>& ops() const noexcept { return ops_; }
  const std::vector<ConvLayer<Real>>& layers() const noexcept { return layers_; }
  std::vector<ConvLayer<Real>>& layers() noexcept { return layers_; }
  /// Index of the op with the given name, or -1.
  int find(std::string_view name) const;

 private:
  int push(GraphOp op);
  void check_input(int op) const;

  std::size_t input_channels_;
  std::size_t size_divisor_;
  std::vector<GraphOp> ops_;
  std::vector<ConvLayer<Real>> layers_;
  int output_ = 0;
};

/// Builds one of the compared architectures. Every level has two 3x3
/// convolutions with ReLU; downsampling is 2x2 max pooling (UNet, dilated
/// variants, TscNet) or a 2x2 stride-2 convolution (BNet); upsampling is a
/// 2x2 stride-2 transposed convolution; a 1x1 convolution produces logits.
template <typename Real>
LayerGraph<Real> build(const ArchitectureSpec& spec, std::uint64_t seed);

/// Learnable scalars of the network `build(spec, ...)` would produce.
std::size_t count_params(const ArchitectureSpec& spec);

template <typename Real>
std::size_t count_params(const LayerGraph<Real>& graph) {
  return graph.count_params();
}

extern template class LayerGraph<float>;
extern template class LayerGraph<double>;

}  // namespace tsc
