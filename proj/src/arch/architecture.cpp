#include "tsc/architecture.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace tsc {

std::string_view to_string(Variant variant) {
  switch (variant) {
    case Variant::UNet:
      return "unet";
    case Variant::Dilated2:
      return "dilated2";
    case Variant::Dilated3:
      return "dilated3";
    case Variant::BNet:
      return "bnet";
    case Variant::TscNet:
      return "tscnet";
  }
  return "unknown";
}

Variant parse_variant(std::string_view name) {
  for (Variant v : kAllVariants) {
    if (to_string(v) == name) return v;
  }
  throw std::invalid_argument("unknown variant '" + std::string(name) +
                              "' (expected unet, dilated2, dilated3, bnet or tscnet)");
}

int dilation_rate(Variant variant) {
  switch (variant) {
    case Variant::Dilated2:
      return 2;
    case Variant::Dilated3:
      return 3;
    default:
      return 1;
  }
}

void ArchitectureSpec::validate() const {
  if (depth < 1) throw std::invalid_argument("architecture: depth must be >= 1");
  if (depth > 12) throw std::invalid_argument("architecture: depth above 12 is not supported");
  if (base_channels < 1) throw std::invalid_argument("architecture: base channels must be >= 1");
  if (num_classes < 1) throw std::invalid_argument("architecture: num_classes must be >= 1");
  if (image_channels < 1) throw std::invalid_argument("architecture: image channels must be >= 1");
  if (!widths.empty()) {
    if (widths.size() != static_cast<std::size_t>(depth) + 1) {
      throw std::invalid_argument("architecture: expected " + std::to_string(depth + 1) +
                                  " widths (encoder levels plus bottleneck), got " +
                                  std::to_string(widths.size()));
    }
    for (int w : widths) {
      if (w < 1) throw std::invalid_argument("architecture: widths must be positive");
    }
  }
}

namespace {

std::vector<int> doubling(int base, int depth) {
  std::vector<int> out;
  for (int level = 0; level <= depth; ++level) out.push_back(base << level);
  return out;
}

}  // namespace

std::vector<int> resolve_widths(const ArchitectureSpec& spec) {
  spec.validate();
  if (!spec.widths.empty()) return spec.widths;
  if (spec.variant != Variant::TscNet || spec.width_policy == WidthPolicy::Exact) {
    return doubling(spec.base_channels, spec.depth);
  }
  ArchitectureSpec reference = spec;
  reference.variant = Variant::BNet;
  const std::size_t budget = count_params(reference);
  for (int base = spec.base_channels; base >= 1; --base) {
    ArchitectureSpec candidate = spec;
    candidate.widths = doubling(base, spec.depth);
    if (count_params(candidate) < budget) return candidate.widths;
  }
  throw std::invalid_argument("architecture: no TscNet width fits below the BNet parameter count");
}

template <typename Real>
LayerGraph<Real>::LayerGraph(std::size_t input_channels, std::size_t size_divisor)
    : input_channels_(input_channels), size_divisor_(std::max<std::size_t>(1, size_divisor)) {
  ops_.push_back(GraphOp{OpKind::Input, "input", {}, -1, std::nullopt});
}

template <typename Real>
void LayerGraph<Real>::check_input(int op) const {
  if (op < 0 || static_cast<std::size_t>(op) >= ops_.size()) {
    throw std::invalid_argument("LayerGraph: reference to undefined op " + std::to_string(op));
  }
}

template <typename Real>
int LayerGraph<Real>::push(GraphOp op) {
  for (int in : op.inputs) check_input(in);
  ops_.push_back(std::move(op));
  output_ = static_cast<int>(ops_.size()) - 1;
  return output_;
}

template <typename Real>
int LayerGraph<Real>::add_coord_inject(int in, std::string name) {
  return push(GraphOp{OpKind::CoordInject, std::move(name), {in}, -1, std::nullopt});
}

template <typename Real>
int LayerGraph<Real>::add_conv(int in, const LayerGeometry& geometry, std::string name) {
  if (geometry.in_channels == 0 || geometry.out_channels == 0 || geometry.kernel < 1 ||
      geometry.stride < 1 || geometry.dilation < 1 || geometry.padding < 0) {
    throw std::invalid_argument("LayerGraph: invalid geometry for layer '" + name + "'");
  }
  ConvLayer<Real> layer;
  layer.name = name;
  layer.geometry = geometry;
  layer.spec.stride = geometry.stride;
  layer.spec.dilation = geometry.dilation;
  layer.spec.padding = geometry.padding;
  layers_.push_back(std::move(layer));
  const OpKind kind = geometry.transposed ? OpKind::ConvTransposed : OpKind::Conv;
  return push(GraphOp{kind, std::move(name), {in}, static_cast<int>(layers_.size()) - 1,
                      std::nullopt});
}

template <typename Real>
int LayerGraph<Real>::add_maxpool(int in, std::string name) {
  return push(GraphOp{OpKind::MaxPool, std::move(name), {in}, -1, std::nullopt});
}

template <typename Real>
int LayerGraph<Real>::add_relu(int in, std::string name) {
  return push(GraphOp{OpKind::Relu, std::move(name), {in}, -1, std::nullopt});
}

template <typename Real>
int LayerGraph<Real>::add_add(int a, int b, std::string name) {
  return push(GraphOp{OpKind::Add, std::move(name), {a, b}, -1, std::nullopt});
}

template <typename Real>
int LayerGraph<Real>::add_concat(std::vector<int> parts, std::string name) {
  if (parts.empty()) throw std::invalid_argument("LayerGraph: concat '" + name + "' has no parts");
  return push(GraphOp{OpKind::Concat, std::move(name), std::move(parts), -1, std::nullopt});
}

template <typename Real>
int LayerGraph<Real>::add_tsc(int f_x, int x, TranslationSpec translation, std::string name) {
  return push(GraphOp{OpKind::Tsc, std::move(name), {f_x, x}, -1, translation});
}

template <typename Real>
void LayerGraph<Real>::set_output(int op) {
  check_input(op);
  output_ = op;
}

template <typename Real>
void LayerGraph<Real>::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& layer : layers_) {
    const LayerGeometry& g = layer.geometry;
    const auto k = static_cast<std::size_t>(g.kernel);
    // Number of input values that reach one output value.
    std::size_t fan_in = g.in_channels * k * k;
    if (g.transposed) {
      const std::size_t taps = (k + static_cast<std::size_t>(g.stride) - 1) / g.stride;
      fan_in = g.in_channels * taps * taps;
    }
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    const Shape kernel_shape = g.transposed ? Shape{g.in_channels, g.out_channels, k, k}
                                            : Shape{g.out_channels, g.in_channels, k, k};
    std::vector<Real> kernel(kernel_shape.numel());
    for (auto& v : kernel) v = static_cast<Real>(normal(rng));
    layer.spec.kernel = Tensor<Real>(kernel_shape, std::move(kernel), true);
    layer.spec.bias = Tensor<Real>(Shape{g.out_channels, 1, 1, 1}, Real(0), true);
  }
}

template <typename Real>
bool LayerGraph<Real>::initialized() const noexcept {
  return std::all_of(layers_.begin(), layers_.end(),
                     [](const auto& layer) { return layer.spec.kernel.defined(); });
}

template <typename Real>
Tensor<Real> LayerGraph<Real>::forward(const Tensor<Real>& batch,
                                       std::vector<Tensor<Real>>* taps) const {
  if (!initialized()) throw std::logic_error("forward: network parameters are not initialized");
  const Shape& s = batch.shape();
  if (s.c != input_channels_) {
    throw std::invalid_argument("forward: batch has " + std::to_string(s.c) +
                                " channels but the network expects " +
                                std::to_string(input_channels_));
  }
  if (s.h % size_divisor_ != 0 || s.w % size_divisor_ != 0) {
    throw std::invalid_argument("forward: input size " + std::to_string(s.h) + "x" +
                                std::to_string(s.w) + " is not divisible by " +
                                std::to_string(size_divisor_));
  }

  std::vector<Tensor<Real>> values(ops_.size());
  values[0] = batch;
  for (std::size_t i = 1; i < ops_.size(); ++i) {
    const GraphOp& op = ops_[i];
    const auto arg = [&](std::size_t k) -> const Tensor<Real>& { return values[op.inputs[k]]; };
    try {
      switch (op.kind) {
        case OpKind::Input:
          break;
        case OpKind::CoordInject:
          values[i] = coord_inject(arg(0));
          break;
        case OpKind::Conv:
          values[i] = conv2d(arg(0), layers_[op.layer].spec);
          break;
        case OpKind::ConvTransposed:
          values[i] = conv2d_transposed(arg(0), layers_[op.layer].spec);
          break;
        case OpKind::MaxPool:
          values[i] = maxpool2d(arg(0));
          break;
        case OpKind::Relu:
          values[i] = relu(arg(0));
          break;
        case OpKind::Add:
          values[i] = add(arg(0), arg(1));
          break;
        case OpKind::Concat: {
          std::vector<Tensor<Real>> parts;
          for (int in : op.inputs) parts.push_back(values[in]);
          values[i] = concat_channels(parts);
          break;
        }
        case OpKind::Tsc: {
          TscBlockConfig config{arg(1).shape().c, *op.translation};
          values[i] = tsc_block(arg(0), arg(1), config);
          break;
        }
      }
    } catch (const std::exception& e) {
      throw std::invalid_argument("layer '" + op.name + "': " + e.what());
    }
  }
  Tensor<Real> out = values[output_];
  if (taps) *taps = std::move(values);
  return out;
}

template <typename Real>
std::vector<Shape> LayerGraph<Real>::infer_shapes(const Shape& input) const {
  std::vector<Shape> shapes(ops_.size());
  shapes[0] = input;
  for (std::size_t i = 1; i < ops_.size(); ++i) {
    const GraphOp& op = ops_[i];
    const Shape& a = shapes[op.inputs[0]];
    Shape out = a;
    switch (op.kind) {
      case OpKind::Input:
      case OpKind::Relu:
      case OpKind::Add:
        break;
      case OpKind::CoordInject:
        out.c += 2;
        break;
      case OpKind::Conv:
      case OpKind::ConvTransposed: {
        const LayerGeometry& g = layers_[op.layer].geometry;
        const auto extent = [&](std::size_t v) {
          const long r = g.transposed ? conv_transposed_output_extent(static_cast<long>(v), g.kernel,
                                                                      g.stride, g.dilation, g.padding)
                                      : conv_output_extent(static_cast<long>(v), g.kernel, g.stride,
                                                           g.dilation, g.padding);
          if (r < 1) throw std::invalid_argument("layer '" + op.name + "': empty output");
          return static_cast<std::size_t>(r);
        };
        out = Shape{a.n, g.out_channels, extent(a.h), extent(a.w)};
        break;
      }
      case OpKind::MaxPool:
        out.h /= 2;
        out.w /= 2;
        break;
      case OpKind::Concat:
        out.c = 0;
        for (int in : op.inputs) out.c += shapes[in].c;
        break;
      case OpKind::Tsc:
        out.c = 4 * shapes[op.inputs[1]].c;
        break;
    }
    shapes[i] = out;
  }
  return shapes;
}

template <typename Real>
std::vector<Tensor<Real>> LayerGraph<Real>::parameters() const {
  std::vector<Tensor<Real>> params;
  for (const auto& layer : layers_) {
    params.push_back(layer.spec.kernel);
    params.push_back(layer.spec.bias);
  }
  return params;
}

template <typename Real>
std::size_t LayerGraph<Real>::count_params() const noexcept {
  std::size_t total = 0;
  for (const auto& layer : layers_) total += layer.param_count();
  return total;
}

template <typename Real>
int LayerGraph<Real>::find(std::string_view name) const {
  for (std::size_t i = 0; i < ops_.size(); ++i) {
    if (ops_[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

namespace {

template <typename Real>
LayerGraph<Real> build_topology(const ArchitectureSpec& spec, const std::vector<int>& widths) {
  const int depth = spec.depth;
  const int dilation = dilation_rate(spec.variant);
  LayerGraph<Real> g(static_cast<std::size_t>(spec.image_channels), spec.size_divisor());

  int x = g.input();
  auto channels = static_cast<std::size_t>(spec.image_channels);
  if (spec.ote) {
    x = g.add_coord_inject(x, "ote");
    channels += 2;
  }

  const auto conv3 = [&](std::size_t cin, std::size_t cout) {
    return LayerGeometry{cin, cout, 3, 1, dilation, dilation, false};
  };
  const auto double_conv = [&](int in, std::size_t cin, std::size_t cout,
                               const std::string& prefix) {
    int a = g.add_relu(g.add_conv(in, conv3(cin, cout), prefix + ".conv1"), prefix + ".relu1");
    return g.add_relu(g.add_conv(a, conv3(cout, cout), prefix + ".conv2"), prefix + ".relu2");
  };

  std::vector<int> skips;
  for (int level = 0; level < depth; ++level) {
    const auto width = static_cast<std::size_t>(widths[level]);
    const std::string prefix = "enc" + std::to_string(level);
    x = double_conv(x, channels, width, prefix);
    skips.push_back(x);
    channels = width;
    if (spec.variant == Variant::BNet) {
      x = g.add_conv(x, LayerGeometry{width, width, 2, 2, 1, 0, false}, prefix + ".down");
    } else {
      x = g.add_maxpool(x, prefix + ".pool");
    }
  }
  x = double_conv(x, channels, static_cast<std::size_t>(widths[depth]), "bottleneck");
  channels = static_cast<std::size_t>(widths[depth]);

  for (int level = depth - 1; level >= 0; --level) {
    const auto width = static_cast<std::size_t>(widths[level]);
    const std::string prefix = "dec" + std::to_string(level);
    const int up = g.add_conv(x, LayerGeometry{channels, width, 2, 2, 1, 0, true}, prefix + ".up");
    int merged = 0;
    std::size_t merged_channels = 0;
    if (spec.variant == Variant::TscNet) {
      // Skip index counts from 1 at the bottleneck to D at full resolution.
      merged = g.add_tsc(up, skips[level], TranslationSpec(depth - level, depth), prefix + ".tsc");
      merged_channels = 4 * width;
    } else {
      merged = g.add_concat({up, skips[level]}, prefix + ".concat");
      merged_channels = 2 * width;
    }
    x = double_conv(merged, merged_channels, width, prefix);
    channels = width;
  }
  const int logits = g.add_conv(
      x, LayerGeometry{channels, static_cast<std::size_t>(spec.num_classes), 1, 1, 1, 0, false},
      "head");
  g.set_output(logits);
  return g;
}

}  // namespace

std::size_t count_params(const ArchitectureSpec& spec) {
  if (spec.widths.empty() && spec.variant == Variant::TscNet &&
      spec.width_policy == WidthPolicy::BelowBNet) {
    ArchitectureSpec resolved = spec;
    resolved.widths = resolve_widths(spec);
    return count_params(resolved);
  }
  spec.validate();
  const std::vector<int> widths =
      spec.widths.empty() ? doubling(spec.base_channels, spec.depth) : spec.widths;
  return build_topology<float>(spec, widths).count_params();
}

template <typename Real>
LayerGraph<Real> build(const ArchitectureSpec& spec, std::uint64_t seed) {
  LayerGraph<Real> g = build_topology<Real>(spec, resolve_widths(spec));
  g.initialize(seed);
  return g;
}

template class LayerGraph<float>;
template class LayerGraph<double>;
template LayerGraph<float> build(const ArchitectureSpec&, std::uint64_t);
template LayerGraph<double> build(const ArchitectureSpec&, std::uint64_t);

}  // namespace tsc
