#include "tsc/erf.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <stdexcept>

#include "tsc/image_io.hpp"

namespace tsc {

double ErfMap::max() const {
  double best = 0;
  for (double v : values) best = std::max(best, v);
  return best;
}

std::vector<std::uint8_t> ErfMap::support(double tau) const {
  const double cut = tau * max();
  std::vector<std::uint8_t> mask(values.size(), 0);
  for (std::size_t i = 0; i < values.size(); ++i) mask[i] = values[i] > cut ? 1 : 0;
  return mask;
}

template <typename Real>
ErfMap empirical_erf(const LayerGraph<Real>& graph, std::span<const Tensor<Real>> probes,
                     const UnitCoord& target) {
  if (probes.empty()) throw std::invalid_argument("empirical_erf: at least one probe is required");
  const Shape& first = probes.front().shape();
  const std::vector<Shape> shapes = graph.infer_shapes(first);
  const Shape& out = shapes[graph.output()];
  if (target.channel >= out.c || target.y >= out.h || target.x >= out.w) {
    throw std::out_of_range("empirical_erf: target (" + std::to_string(target.channel) + ", " +
                            std::to_string(target.y) + ", " + std::to_string(target.x) +
                            ") outside the logit map " + to_string(out));
  }

  ErfMap map;
  map.height = first.h;
  map.width = first.w;
  map.target = target;
  map.values.assign(first.plane(), 0.0);
  auto params = graph.parameters();
  for (const auto& probe : probes) {
    if (probe.shape() != first) {
      throw std::invalid_argument("empirical_erf: probes must share one shape");
    }
    Tensor<Real> input = probe.detach();
    input.set_requires_grad(true);
    const Tensor<Real> logits = graph.forward(input);
    backward(pick(logits, 0, target.channel, target.y, target.x));
    const auto grad = input.grad();
    const std::size_t plane = first.plane();
    for (std::size_t c = 0; c < first.c; ++c) {
      for (std::size_t i = 0; i < plane; ++i) {
        map.values[i] += std::abs(static_cast<double>(grad[c * plane + i]));
      }
    }
    for (auto& p : params) p.zero_grad();
  }
  const double scale = 1.0 / static_cast<double>(first.c * probes.size());
  for (double& v : map.values) v *= scale;
  return map;
}

template <typename Real>
ErfMap empirical_erf(const LayerGraph<Real>& graph, std::size_t height, std::size_t width,
                     const UnitCoord& target, std::size_t samples, std::uint64_t seed) {
  if (samples < 1) throw std::invalid_argument("empirical_erf: samples must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Tensor<Real>> probes;
  const Shape shape{1, graph.input_channels(), height, width};
  for (std::size_t s = 0; s < samples; ++s) {
    std::vector<Real> values(shape.numel());
    for (auto& v : values) v = static_cast<Real>(normal(rng));
    probes.emplace_back(shape, std::move(values));
  }
  return empirical_erf(graph, std::span<const Tensor<Real>>(probes), target);
}

std::vector<std::uint8_t> RfRegion::mask() const {
  std::vector<std::uint8_t> out(height * width, 0);
  for (const auto& r : rects) {
    for (long y = r.y0; y <= r.y1; ++y) {
      for (long x = r.x0; x <= r.x1; ++x) out[static_cast<std::size_t>(y) * width + x] = 1;
    }
  }
  return out;
}

std::size_t RfRegion::area() const {
  const auto m = mask();
  return static_cast<std::size_t>(std::count(m.begin(), m.end(), std::uint8_t{1}));
}

bool RfRegion::contains(std::size_t y, std::size_t x) const {
  const auto yy = static_cast<long>(y);
  const auto xx = static_cast<long>(x);
  return std::any_of(rects.begin(), rects.end(), [&](const TaggedRect& r) {
    return r.y0 <= yy && yy <= r.y1 && r.x0 <= xx && xx <= r.x1;
  });
}

std::size_t RfRegion::component_count() const {
  std::set<std::pair<long, long>> offsets;
  for (const auto& r : rects) offsets.emplace(r.offset_y, r.offset_x);
  return offsets.size();
}

namespace {

using Region = std::set<TaggedRect>;

bool covers(const TaggedRect& outer, const TaggedRect& inner) {
  return outer.offset_y == inner.offset_y && outer.offset_x == inner.offset_x &&
         outer.y0 <= inner.y0 && inner.y1 <= outer.y1 && outer.x0 <= inner.x0 &&
         inner.x1 <= outer.x1;
}

// Drops rectangles that another rectangle with the same tag already covers.
Region prune(const Region& region) {
  Region out;
  for (const TaggedRect& r : region) {
    const bool redundant = std::any_of(region.begin(), region.end(), [&](const TaggedRect& other) {
      return other != r && covers(other, r);
    });
    if (!redundant) out.insert(r);
  }
  return out;
}

// Clipped image of [lo, hi] on an axis of length `extent`, or nothing.
bool clip(long& lo, long& hi, long extent) {
  lo = std::max(lo, 0L);
  hi = std::min(hi, extent - 1);
  return lo <= hi;
}

// Splits [lo, hi] + shift into at most two in-range intervals modulo extent.
std::vector<std::pair<long, long>> wrap(long lo, long hi, long shift, long extent) {
  lo += shift;
  hi += shift;
  std::vector<std::pair<long, long>> pieces;
  if (hi - lo + 1 >= extent) return {{0, extent - 1}};
  const long a = ((lo % extent) + extent) % extent;
  const long b = a + (hi - lo);
  if (b < extent) {
    pieces.emplace_back(a, b);
  } else {
    pieces.emplace_back(a, extent - 1);
    pieces.emplace_back(0, b - extent);
  }
  return pieces;
}

}  // namespace

template <typename Real>
RfRegion analytic_rf(const LayerGraph<Real>& graph, std::size_t height, std::size_t width,
                     const UnitCoord& target) {
  const Shape input{1, graph.input_channels(), height, width};
  const std::vector<Shape> shapes = graph.infer_shapes(input);
  const auto& ops = graph.ops();
  const Shape& out = shapes[graph.output()];
  if (target.y >= out.h || target.x >= out.w || target.channel >= out.c) {
    throw std::out_of_range("analytic_rf: target outside the logit map " + to_string(out));
  }

  std::vector<Region> regions(ops.size());
  const auto ty = static_cast<long>(target.y);
  const auto tx = static_cast<long>(target.x);
  regions[graph.output()].insert(TaggedRect{ty, ty, tx, tx, 0, 0});

  for (std::size_t i = ops.size(); i-- > 1;) {
    if (regions[i].empty()) continue;
    const Region current = prune(regions[i]);
    const GraphOp& op = ops[i];
    const Shape& in_shape = shapes[op.inputs[0]];
    const auto in_h = static_cast<long>(in_shape.h);
    const auto in_w = static_cast<long>(in_shape.w);
    auto forward_all = [&](int dest) { regions[dest].insert(current.begin(), current.end()); };

    switch (op.kind) {
      case OpKind::Input:
        break;
      case OpKind::CoordInject:
      case OpKind::Relu:
      case OpKind::Add:
      case OpKind::Concat:
        for (int in : op.inputs) forward_all(in);
        break;
      case OpKind::MaxPool:
        for (TaggedRect r : current) {
          r.y0 *= 2;
          r.x0 *= 2;
          r.y1 = 2 * r.y1 + 1;
          r.x1 = 2 * r.x1 + 1;
          regions[op.inputs[0]].insert(r);
        }
        break;
      case OpKind::Conv:
      case OpKind::ConvTransposed: {
        const LayerGeometry& g = graph.layers()[op.layer].geometry;
        const long reach = static_cast<long>(g.dilation) * (g.kernel - 1);
        for (TaggedRect r : current) {
          if (op.kind == OpKind::Conv) {
            r.y0 = r.y0 * g.stride - g.padding;
            r.y1 = r.y1 * g.stride - g.padding + reach;
            r.x0 = r.x0 * g.stride - g.padding;
            r.x1 = r.x1 * g.stride - g.padding + reach;
          } else {
            // output y = i * stride - padding + tap * dilation
            const auto ceil_div = [](long a, long b) { return a >= 0 ? (a + b - 1) / b : -((-a) / b); };
            const auto floor_div = [](long a, long b) { return a >= 0 ? a / b : -((-a + b - 1) / b); };
            r.y0 = ceil_div(r.y0 + g.padding - reach, g.stride);
            r.y1 = floor_div(r.y1 + g.padding, g.stride);
            r.x0 = ceil_div(r.x0 + g.padding - reach, g.stride);
            r.x1 = floor_div(r.x1 + g.padding, g.stride);
          }
          if (clip(r.y0, r.y1, in_h) && clip(r.x0, r.x1, in_w)) regions[op.inputs[0]].insert(r);
        }
        break;
      }
      case OpKind::Tsc: {
        forward_all(op.inputs[0]);
        const int skipped = op.inputs[1];
        const Shape& xs = shapes[skipped];
        const auto h = static_cast<long>(xs.h);
        const auto w = static_cast<long>(xs.w);
        const long scale_y = static_cast<long>(height) / h;
        const long scale_x = static_cast<long>(width) / w;
        const Fraction factor = op.translation->factor();
        const auto rows = static_cast<long>(shift_for(factor, xs.h) % xs.h);
        const auto cols = static_cast<long>(shift_for(factor, xs.w) % xs.w);
        const std::pair<long, long> shifts[] = {{0, 0}, {0, cols}, {rows, 0}, {rows, cols}};
        for (const auto& [sy, sx] : shifts) {
          for (const TaggedRect& r : current) {
            for (const auto& [y0, y1] : wrap(r.y0, r.y1, sy, h)) {
              for (const auto& [x0, x1] : wrap(r.x0, r.x1, sx, w)) {
                regions[skipped].insert(TaggedRect{y0, y1, x0, x1, r.offset_y + sy * scale_y,
                                                   r.offset_x + sx * scale_x});
              }
            }
          }
        }
        break;
      }
    }
    regions[i].clear();
  }

  const Region final_region = prune(regions[0]);
  RfRegion result;
  result.height = height;
  result.width = width;
  result.rects.assign(final_region.begin(), final_region.end());
  return result;
}

SupportStats erf_support_stats(const ErfMap& map, double tau) {
  if (!(map.max() > 0)) throw std::invalid_argument("erf_support_stats: map is identically zero");
  const auto mask = map.support(tau);
  SupportStats stats;
  stats.count = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
  stats.fraction = static_cast<double>(stats.count) / static_cast<double>(mask.size());
  return stats;
}

void save_heatmap(const ErfMap& map, const std::filesystem::path& path) {
  const double peak = map.max();
  if (!(peak > 0)) throw std::invalid_argument("save_heatmap: cannot normalise an all-zero map");
  GrayImage16 image(map.height, map.width);
  for (std::size_t i = 0; i < map.values.size(); ++i) {
    image.pixels[i] = static_cast<std::uint16_t>(std::lround(map.values[i] / peak * 65535.0));
  }
  write_png(path, image);
}

#define TSC_INSTANTIATE_ERF(Real)                                                             \
  template ErfMap empirical_erf(const LayerGraph<Real>&, std::span<const Tensor<Real>>,       \
                                const UnitCoord&);                                            \
  template ErfMap empirical_erf(const LayerGraph<Real>&, std::size_t, std::size_t,            \
                                const UnitCoord&, std::size_t, std::uint64_t);                \
  template RfRegion analytic_rf(const LayerGraph<Real>&, std::size_t, std::size_t,            \
                                const UnitCoord&);

TSC_INSTANTIATE_ERF(float)
TSC_INSTANTIATE_ERF(double)

#undef TSC_INSTANTIATE_ERF

}  // namespace tsc
