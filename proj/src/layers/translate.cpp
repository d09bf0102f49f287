#include "tsc/translate.hpp"

#include <stdexcept>
#include <string>
#include <vector>

#include "tsc/ops.hpp"

namespace tsc {

std::string_view to_string(Direction direction) {
  switch (direction) {
    case Direction::Left:
      return "left";
    case Direction::Up:
      return "up";
    case Direction::DiagUpLeft:
      return "diag-up-left";
  }
  return "unknown";
}

std::size_t shift_for(Fraction factor, std::size_t extent) {
  if (factor.den <= 0 || factor.num < 0 || factor.num >= factor.den) {
    throw std::invalid_argument("translate: factor " + std::to_string(factor.num) + "/" +
                                std::to_string(factor.den) + " outside [0, 1)");
  }
  const auto e = static_cast<std::int64_t>(extent);
  return static_cast<std::size_t>((2 * factor.num * e + factor.den) / (2 * factor.den));
}

TranslationSpec::TranslationSpec(int level, int depth) : level_(level), depth_(depth) {
  if (depth < 1) throw std::invalid_argument("TranslationSpec: depth must be >= 1");
  if (level < 1 || level > depth) {
    throw std::invalid_argument("TranslationSpec: level " + std::to_string(level) +
                                " outside [1, " + std::to_string(depth) + "]");
  }
}

template <typename Real>
Tensor<Real> translate(const Tensor<Real>& x, Direction direction, Fraction factor) {
  const Shape& s = x.shape();
  const std::size_t rows = direction == Direction::Left ? 0 : shift_for(factor, s.h) % s.h;
  const std::size_t cols = direction == Direction::Up ? 0 : shift_for(factor, s.w) % s.w;

  // out[y][x] = in[(y + rows) mod H][(x + cols) mod W]
  std::vector<std::size_t> source(s.plane());
  for (std::size_t y = 0; y < s.h; ++y) {
    const std::size_t sy = (y + rows) % s.h;
    for (std::size_t xx = 0; xx < s.w; ++xx) source[y * s.w + xx] = sy * s.w + (xx + cols) % s.w;
  }

  const auto in = x.data();
  std::vector<Real> out(in.size());
  const std::size_t plane = s.plane();
  for (std::size_t p = 0; p < s.n * s.c; ++p) {
    const Real* src = in.data() + p * plane;
    Real* dst = out.data() + p * plane;
    for (std::size_t i = 0; i < plane; ++i) dst[i] = src[source[i]];
  }
  return detail::make_result<Real>(
      s, std::move(out), {x.node()}, [source = std::move(source), plane](detail::Node<Real>& self) {
        auto& g = self.inputs[0]->ensure_grad();
        const std::size_t planes = self.shape.n * self.shape.c;
        for (std::size_t p = 0; p < planes; ++p) {
          Real* dst = g.data() + p * plane;
          const Real* src = self.grad.data() + p * plane;
          for (std::size_t i = 0; i < plane; ++i) dst[source[i]] += src[i];
        }
      });
}

template <typename Real>
Tensor<Real> tsc_block(const Tensor<Real>& f_x, const Tensor<Real>& x,
                       const TscBlockConfig& config) {
  if (f_x.shape() != x.shape()) {
    throw std::invalid_argument("tsc_block: f(X) has shape " + to_string(f_x.shape()) +
                                " but the skipped input X has " + to_string(x.shape()));
  }
  if (config.channels != 0 && config.channels != x.shape().c) {
    throw std::invalid_argument("tsc_block: configured for " + std::to_string(config.channels) +
                                " channels, got " + std::to_string(x.shape().c));
  }
  const Fraction factor = config.translation.factor();
  return concat_channels<Real>({add(f_x, x), translate(x, Direction::Left, factor),
                                translate(x, Direction::Up, factor),
                                translate(x, Direction::DiagUpLeft, factor)});
}

template <typename Real>
Tensor<Real> coord_inject(const Tensor<Real>& image) {
  const Shape& s = image.shape();
  Tensor<Real> coords(Shape{s.n, 2, s.h, s.w});
  auto values = coords.mutable_data();
  const Real width = static_cast<Real>(s.w);
  const Real height = static_cast<Real>(s.h);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t y = 0; y < s.h; ++y) {
      for (std::size_t x = 0; x < s.w; ++x) {
        values[coords.shape().offset(n, 0, y, x)] = static_cast<Real>(x) / width;
        values[coords.shape().offset(n, 1, y, x)] = static_cast<Real>(y) / height;
      }
    }
  }
  return concat_channels<Real>({image, coords});
}

#define TSC_INSTANTIATE_LAYERS(Real)                                                    \
  template Tensor<Real> translate(const Tensor<Real>&, Direction, Fraction);            \
  template Tensor<Real> tsc_block(const Tensor<Real>&, const Tensor<Real>&,             \
                                  const TscBlockConfig&);                               \
  template Tensor<Real> coord_inject(const Tensor<Real>&);

TSC_INSTANTIATE_LAYERS(float)
TSC_INSTANTIATE_LAYERS(double)

#undef TSC_INSTANTIATE_LAYERS

}  // namespace tsc
