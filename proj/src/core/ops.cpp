#include "tsc/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace tsc {
namespace {

template <typename Real>
using NodePtr = std::shared_ptr<detail::Node<Real>>;

struct Geometry {
  std::size_t batch = 0;
  std::size_t cin = 0;
  std::size_t cout = 0;
  long k = 0;
  long in_h = 0, in_w = 0;
  long out_h = 0, out_w = 0;
  int stride = 1, dilation = 1, padding = 0;
};

struct Range {
  long lo = 0;
  long hi = 0;
};

// Output indices o in [0, out_extent) for which o * stride + offset lands
// inside [0, in_extent).
Range valid_range(long offset, int stride, long in_extent, long out_extent) {
  long lo = 0;
  if (offset < 0) lo = (-offset + stride - 1) / stride;
  const long last = in_extent - 1 - offset;
  if (last < 0) return {0, 0};
  const long hi = std::min(out_extent, last / stride + 1);
  return {lo, std::max(lo, hi)};
}

// Copies one batch item into a zero-bordered buffer: plane c, row y holds
// src row (y - top), and rows/columns outside the source are zero.
template <typename Real>
void pad_planes(const Real* src, std::size_t channels, long h, long w, long top, long left,
                long padded_h, long padded_w, std::vector<Real>& dst) {
  dst.assign(channels * static_cast<std::size_t>(padded_h * padded_w), Real(0));
  const long y_lo = std::max(0L, top), y_hi = std::min(padded_h, h + top);
  const long x_lo = std::max(0L, left), x_hi = std::min(padded_w, w + left);
  if (y_lo >= y_hi || x_lo >= x_hi) return;
  for (std::size_t c = 0; c < channels; ++c) {
    const Real* sp = src + c * h * w;
    Real* dp = dst.data() + c * padded_h * padded_w;
    for (long y = y_lo; y < y_hi; ++y) {
      std::copy(sp + (y - top) * w + (x_lo - left), sp + (y - top) * w + (x_hi - left),
                dp + y * padded_w + x_lo);
    }
  }
}

// Blocked direct correlation over an already padded input. `blocks` output
// channels and `kLanes` columns are kept in registers while the reduction
// runs over (ci, ky, kx), so every output element still receives its terms
// in exactly that order after its initial value.
template <typename Real, int kBlock, bool kUnitStride>
void correlate_rows(const Real* padded, long padded_h, long padded_w, const Real* w,
                    std::size_t cin, std::size_t co0, long k, int stride, int dilation,
                    Real* out, long out_h, long out_w) {
  constexpr long kLanes = 64 / sizeof(Real);
  const long kk = k * k;
  const long plane = padded_h * padded_w;
  const long out_plane = out_h * out_w;
  const long s = kUnitStride ? 1 : stride;
  for (long oy = 0; oy < out_h; ++oy) {
    long ox0 = 0;
    for (; ox0 < out_w; ox0 += kLanes) {
      const long lanes = std::min(kLanes, out_w - ox0);
      Real acc[kBlock][kLanes];
      for (int b = 0; b < kBlock; ++b) {
        const Real* op = out + (co0 + b) * out_plane + oy * out_w + ox0;
        for (long l = 0; l < kLanes; ++l) acc[b][l] = l < lanes ? op[l] : Real(0);
      }
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const Real* wc = w + ci * kk;
        for (long ky = 0; ky < k; ++ky) {
          const Real* row = padded + ci * plane + (oy * s + ky * dilation) * padded_w + ox0 * s;
          for (long kx = 0; kx < k; ++kx) {
            const Real* src = row + kx * dilation;
            Real wv[kBlock];
            for (int b = 0; b < kBlock; ++b) wv[b] = wc[(co0 + b) * cin * kk + ky * k + kx];
            if (lanes == kLanes) {
              for (long l = 0; l < kLanes; ++l) {
                const Real v = src[l * s];
                for (int b = 0; b < kBlock; ++b) acc[b][l] += wv[b] * v;
              }
            } else {
              for (long l = 0; l < lanes; ++l) {
                const Real v = src[l * s];
                for (int b = 0; b < kBlock; ++b) acc[b][l] += wv[b] * v;
              }
            }
          }
        }
      }
      for (int b = 0; b < kBlock; ++b) {
        Real* op = out + (co0 + b) * out_plane + oy * out_w + ox0;
        for (long l = 0; l < lanes; ++l) op[l] = acc[b][l];
      }
    }
  }
}

template <typename Real, bool kUnitStride>
void correlate_padded(const Real* padded, long padded_h, long padded_w, const Real* w,
                      std::size_t cin, std::size_t cout, long k, int stride, int dilation,
                      Real* out, long out_h, long out_w) {
  std::size_t co = 0;
  for (; co + 4 <= cout; co += 4) {
    correlate_rows<Real, 4, kUnitStride>(padded, padded_h, padded_w, w, cin, co, k, stride,
                                         dilation, out, out_h, out_w);
  }
  for (; co < cout; ++co) {
    correlate_rows<Real, 1, kUnitStride>(padded, padded_h, padded_w, w, cin, co, k, stride,
                                         dilation, out, out_h, out_w);
  }
}

// Rows/columns of the zero-bordered input needed by a correlation.
long padded_extent(long out_extent, long k, int stride, int dilation) {
  return (out_extent - 1) * stride + (k - 1) * dilation + 1;
}

// out[n, co] += sum_{ci, ky, kx} w[co, ci, ky, kx] * in[n, ci, shifted]
// Each output element accumulates its terms in (ci, ky, kx) order.
template <typename Real>
void correlate(const Real* in, const Real* w, Real* out, const Geometry& g) {
  const long ph = padded_extent(g.out_h, g.k, g.stride, g.dilation);
  const long pw = padded_extent(g.out_w, g.k, g.stride, g.dilation);
  std::vector<Real> padded;
  for (std::size_t n = 0; n < g.batch; ++n) {
    pad_planes(in + n * g.cin * g.in_h * g.in_w, g.cin, g.in_h, g.in_w, g.padding, g.padding, ph,
               pw, padded);
    Real* op = out + n * g.cout * g.out_h * g.out_w;
    if (g.stride == 1) {
      correlate_padded<Real, true>(padded.data(), ph, pw, w, g.cin, g.cout, g.k, 1, g.dilation,
                                   op, g.out_h, g.out_w);
    } else {
      correlate_padded<Real, false>(padded.data(), ph, pw, w, g.cin, g.cout, g.k, g.stride,
                                    g.dilation, op, g.out_h, g.out_w);
    }
  }
}

// Adjoint of `correlate` with respect to its input: scatters `gout` back
// through the kernel into `gin`.
template <typename Real>
void scatter_adjoint(const Real* gout, const Real* w, Real* gin, const Geometry& g) {
  const long in_plane = g.in_h * g.in_w;
  const long out_plane = g.out_h * g.out_w;
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t ci = 0; ci < g.cin; ++ci) {
      Real* gp = gin + (n * g.cin + ci) * in_plane;
      for (std::size_t co = 0; co < g.cout; ++co) {
        const Real* op = gout + (n * g.cout + co) * out_plane;
        const Real* wk = w + (co * g.cin + ci) * g.k * g.k;
        for (long ky = 0; ky < g.k; ++ky) {
          const long dy = ky * g.dilation - g.padding;
          const Range rows = valid_range(dy, g.stride, g.in_h, g.out_h);
          for (long kx = 0; kx < g.k; ++kx) {
            const long dx = kx * g.dilation - g.padding;
            const Range cols = valid_range(dx, g.stride, g.in_w, g.out_w);
            const Real wv = wk[ky * g.k + kx];
            for (long oy = rows.lo; oy < rows.hi; ++oy) {
              Real* grow = gp + (oy * g.stride + dy) * g.in_w;
              const Real* orow = op + oy * g.out_w;
              for (long ox = cols.lo; ox < cols.hi; ++ox) grow[ox * g.stride + dx] += wv * orow[ox];
            }
          }
        }
      }
    }
  }
}

// With unit stride the adjoint is itself a correlation: gout bordered by
// (k-1)*d - p zeros, against the kernel flipped in space with its channel
// axes swapped.
template <typename Real>
void correlate_adjoint(const Real* gout, const Real* w, Real* gin, const Geometry& g) {
  if (g.stride != 1) {
    scatter_adjoint(gout, w, gin, g);
    return;
  }
  const long kk = g.k * g.k;
  std::vector<Real> flipped(g.cout * g.cin * kk);
  for (std::size_t co = 0; co < g.cout; ++co) {
    for (std::size_t ci = 0; ci < g.cin; ++ci) {
      for (long t = 0; t < kk; ++t) {
        flipped[(ci * g.cout + co) * kk + (kk - 1 - t)] = w[(co * g.cin + ci) * kk + t];
      }
    }
  }
  const long border = (g.k - 1) * g.dilation - g.padding;
  const long ph = padded_extent(g.in_h, g.k, 1, g.dilation);
  const long pw = padded_extent(g.in_w, g.k, 1, g.dilation);
  std::vector<Real> padded;
  for (std::size_t n = 0; n < g.batch; ++n) {
    pad_planes(gout + n * g.cout * g.out_h * g.out_w, g.cout, g.out_h, g.out_w, border, border, ph,
               pw, padded);
    correlate_padded<Real, true>(padded.data(), ph, pw, flipped.data(), g.cout, g.cin, g.k, 1,
                                 g.dilation, gin + n * g.cin * g.in_h * g.in_w, g.in_h, g.in_w);
  }
}

// Reduction for one (co, ci) pair over a padded batch; `kSize` > 0 fixes
// the kernel width at compile time so the k*k accumulators stay in registers.
template <typename Real, long kSize, bool kUnitStride>
void kernel_grad_pair(const Real* padded, long plane, long padded_w, const Real* gout,
                      std::size_t co, std::size_t ci, const Geometry& g, Real* wk) {
  constexpr long kLanes = 64 / sizeof(Real);
  constexpr long kMaxTaps = 49;
  const long k = kSize > 0 ? kSize : g.k;
  const long s = kUnitStride ? 1 : g.stride;
  const long out_plane = g.out_h * g.out_w;
  Real acc[kSize > 0 ? kSize * kSize : kMaxTaps][kLanes] = {};
  for (std::size_t n = 0; n < g.batch; ++n) {
    const Real* ip = padded + (n * g.cin + ci) * plane;
    const Real* op = gout + (n * g.cout + co) * out_plane;
    for (long oy = 0; oy < g.out_h; ++oy) {
      const Real* orow = op + oy * g.out_w;
      for (long ox0 = 0; ox0 < g.out_w; ox0 += kLanes) {
        const long lanes = std::min(kLanes, g.out_w - ox0);
        for (long ky = 0; ky < k; ++ky) {
          const Real* row = ip + (oy * s + ky * g.dilation) * padded_w + ox0 * s;
          for (long kx = 0; kx < k; ++kx) {
            const Real* src = row + kx * g.dilation;
            Real* a = acc[ky * k + kx];
            if (lanes == kLanes) {
              for (long l = 0; l < kLanes; ++l) a[l] += orow[ox0 + l] * src[l * s];
            } else {
              for (long l = 0; l < lanes; ++l) a[l] += orow[ox0 + l] * src[l * s];
            }
          }
        }
      }
    }
  }
  for (long t = 0; t < k * k; ++t) {
    Real total = 0;
    for (long l = 0; l < kLanes; ++l) total += acc[t][l];
    wk[t] += total;
  }
}

// gw[co, ci, ky, kx] += sum_{n, oy, ox} gout[n, co, oy, ox] * in[n, ci, shifted]
// All k*k taps of one (co, ci) pair are reduced together so each gout row is
// read once per input channel.
template <typename Real>
void correlate_kernel_grad(const Real* in, const Real* gout, Real* gw, const Geometry& g) {
  if (g.k > 7) throw std::invalid_argument("conv2d: kernels wider than 7 are not supported");
  const long kk = g.k * g.k;
  const long ph = padded_extent(g.out_h, g.k, g.stride, g.dilation);
  const long pw = padded_extent(g.out_w, g.k, g.stride, g.dilation);
  const long plane = ph * pw;
  std::vector<Real> padded(g.batch * g.cin * plane);
  std::vector<Real> one;
  for (std::size_t n = 0; n < g.batch; ++n) {
    pad_planes(in + n * g.cin * g.in_h * g.in_w, g.cin, g.in_h, g.in_w, g.padding, g.padding, ph,
               pw, one);
    std::copy(one.begin(), one.end(), padded.begin() + n * g.cin * plane);
  }
  for (std::size_t co = 0; co < g.cout; ++co) {
    for (std::size_t ci = 0; ci < g.cin; ++ci) {
      Real* wk = gw + (co * g.cin + ci) * kk;
      if (g.k == 3 && g.stride == 1) {
        kernel_grad_pair<Real, 3, true>(padded.data(), plane, pw, gout, co, ci, g, wk);
      } else if (g.k == 1 && g.stride == 1) {
        kernel_grad_pair<Real, 1, true>(padded.data(), plane, pw, gout, co, ci, g, wk);
      } else if (g.k == 2) {
        kernel_grad_pair<Real, 2, false>(padded.data(), plane, pw, gout, co, ci, g, wk);
      } else {
        kernel_grad_pair<Real, 0, false>(padded.data(), plane, pw, gout, co, ci, g, wk);
      }
    }
  }
}

template <typename Real>
void accumulate_bias_grad(const Real* gout, Real* gb, std::size_t batch, std::size_t channels,
                          std::size_t plane) {
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const Real* p = gout + (n * channels + c) * plane;
      Real total = 0;
      for (std::size_t i = 0; i < plane; ++i) total += p[i];
      gb[c] += total;
    }
  }
}

template <typename Real>
void fill_bias(Real* out, const Tensor<Real>& bias, std::size_t batch, std::size_t channels,
               std::size_t plane) {
  if (!bias.defined()) return;
  const auto b = bias.data();
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      std::fill_n(out + (n * channels + c) * plane, plane, b[c]);
    }
  }
}

template <typename Real>
void check_kernel(const ConvSpec<Real>& spec, const char* op) {
  const std::string name(op);
  if (!spec.kernel.defined()) throw std::invalid_argument(name + ": kernel is undefined");
  const Shape& ks = spec.kernel.shape();
  if (ks.h != ks.w || ks.h == 0) {
    throw std::invalid_argument(name + ": kernel must be square and non-empty, got " +
                                to_string(ks));
  }
  if (spec.stride < 1) {
    throw std::invalid_argument(name + ": stride must be positive, got " +
                                std::to_string(spec.stride));
  }
  if (spec.dilation < 1) {
    throw std::invalid_argument(name + ": dilation must be positive, got " +
                                std::to_string(spec.dilation));
  }
  if (spec.padding < 0) {
    throw std::invalid_argument(name + ": padding must be non-negative, got " +
                                std::to_string(spec.padding));
  }
}

template <typename Real>
void check_bias(const ConvSpec<Real>& spec, std::size_t channels, const char* op) {
  if (spec.bias.defined() && spec.bias.numel() != channels) {
    throw std::invalid_argument(std::string(op) + ": bias has " +
                                std::to_string(spec.bias.numel()) + " values but there are " +
                                std::to_string(channels) + " output channels");
  }
}

template <typename Real>
std::vector<NodePtr<Real>> conv_inputs(const Tensor<Real>& input, const ConvSpec<Real>& spec) {
  std::vector<NodePtr<Real>> inputs{input.node(), spec.kernel.node()};
  if (spec.bias.defined()) inputs.push_back(spec.bias.node());
  return inputs;
}

}  // namespace

template <typename Real>
Tensor<Real> conv2d(const Tensor<Real>& input, const ConvSpec<Real>& spec) {
  check_kernel(spec, "conv2d");
  const Shape& is = input.shape();
  const Shape& ks = spec.kernel.shape();
  if (is.c != ks.c) {
    throw std::invalid_argument("conv2d: input has " + std::to_string(is.c) +
                                " channels but the kernel expects Cin = " +
                                std::to_string(ks.c));
  }
  check_bias(spec, ks.n, "conv2d");
  const long out_h = conv_output_extent(static_cast<long>(is.h), static_cast<long>(ks.h),
                                        spec.stride, spec.dilation, spec.padding);
  const long out_w = conv_output_extent(static_cast<long>(is.w), static_cast<long>(ks.w),
                                        spec.stride, spec.dilation, spec.padding);
  if (out_h < 1 || out_w < 1) {
    throw std::invalid_argument("conv2d: zero-size output for input " + to_string(is) +
                                " and kernel " + to_string(ks));
  }

  Geometry g;
  g.batch = is.n;
  g.cin = ks.c;
  g.cout = ks.n;
  g.k = static_cast<long>(ks.h);
  g.in_h = static_cast<long>(is.h);
  g.in_w = static_cast<long>(is.w);
  g.out_h = out_h;
  g.out_w = out_w;
  g.stride = spec.stride;
  g.dilation = spec.dilation;
  g.padding = spec.padding;

  const Shape out_shape{is.n, ks.n, static_cast<std::size_t>(out_h),
                        static_cast<std::size_t>(out_w)};
  std::vector<Real> out(out_shape.numel(), Real(0));
  fill_bias(out.data(), spec.bias, out_shape.n, out_shape.c, out_shape.plane());
  correlate(input.data().data(), spec.kernel.data().data(), out.data(), g);

  const bool has_bias = spec.bias.defined();
  return detail::make_result<Real>(
      out_shape, std::move(out), conv_inputs(input, spec),
      [g, has_bias](detail::Node<Real>& self) {
        auto& in = *self.inputs[0];
        auto& kernel = *self.inputs[1];
        if (in.requires_grad) {
          correlate_adjoint(self.grad.data(), kernel.value.data(), in.ensure_grad().data(), g);
        }
        if (kernel.requires_grad) {
          correlate_kernel_grad(in.value.data(), self.grad.data(), kernel.ensure_grad().data(), g);
        }
        if (has_bias && self.inputs[2]->requires_grad) {
          accumulate_bias_grad(self.grad.data(), self.inputs[2]->ensure_grad().data(), g.batch,
                               g.cout, static_cast<std::size_t>(g.out_h * g.out_w));
        }
      });
}

template <typename Real>
Tensor<Real> conv2d_transposed(const Tensor<Real>& input, const ConvSpec<Real>& spec) {
  check_kernel(spec, "conv2d_transposed");
  const Shape& is = input.shape();
  const Shape& ks = spec.kernel.shape();
  if (is.c != ks.n) {
    throw std::invalid_argument("conv2d_transposed: input has " + std::to_string(is.c) +
                                " channels but the kernel expects " + std::to_string(ks.n));
  }
  check_bias(spec, ks.c, "conv2d_transposed");
  const long out_h = conv_transposed_output_extent(static_cast<long>(is.h), static_cast<long>(ks.h),
                                                   spec.stride, spec.dilation, spec.padding);
  const long out_w = conv_transposed_output_extent(static_cast<long>(is.w), static_cast<long>(ks.w),
                                                   spec.stride, spec.dilation, spec.padding);
  if (out_h < 1 || out_w < 1) {
    throw std::invalid_argument("conv2d_transposed: non-positive output size " +
                                std::to_string(out_h) + "x" + std::to_string(out_w) +
                                " for input " + to_string(is));
  }

  // Geometry of the forward convolution this operator is the adjoint of: its
  // input is our output and its output is our input.
  Geometry g;
  g.batch = is.n;
  g.cin = ks.c;
  g.cout = ks.n;
  g.k = static_cast<long>(ks.h);
  g.in_h = out_h;
  g.in_w = out_w;
  g.out_h = static_cast<long>(is.h);
  g.out_w = static_cast<long>(is.w);
  g.stride = spec.stride;
  g.dilation = spec.dilation;
  g.padding = spec.padding;

  const Shape out_shape{is.n, ks.c, static_cast<std::size_t>(out_h),
                        static_cast<std::size_t>(out_w)};
  std::vector<Real> out(out_shape.numel(), Real(0));
  fill_bias(out.data(), spec.bias, out_shape.n, out_shape.c, out_shape.plane());
  correlate_adjoint(input.data().data(), spec.kernel.data().data(), out.data(), g);

  const bool has_bias = spec.bias.defined();
  return detail::make_result<Real>(
      out_shape, std::move(out), conv_inputs(input, spec),
      [g, has_bias](detail::Node<Real>& self) {
        auto& in = *self.inputs[0];
        auto& kernel = *self.inputs[1];
        if (in.requires_grad) {
          correlate(self.grad.data(), kernel.value.data(), in.ensure_grad().data(), g);
        }
        if (kernel.requires_grad) {
          correlate_kernel_grad(self.grad.data(), in.value.data(), kernel.ensure_grad().data(), g);
        }
        if (has_bias && self.inputs[2]->requires_grad) {
          accumulate_bias_grad(self.grad.data(), self.inputs[2]->ensure_grad().data(), g.batch,
                               g.cin, static_cast<std::size_t>(g.in_h * g.in_w));
        }
      });
}

template <typename Real>
Tensor<Real> maxpool2d(const Tensor<Real>& input) {
  const Shape& is = input.shape();
  if (is.h % 2 != 0 || is.w % 2 != 0) {
    throw std::invalid_argument("maxpool2d: height and width must be even, got " +
                                to_string(is));
  }
  const Shape out_shape{is.n, is.c, is.h / 2, is.w / 2};
  std::vector<Real> out(out_shape.numel());
  std::vector<std::size_t> argmax(out_shape.numel());
  const auto in = input.data();
  std::size_t o = 0;
  for (std::size_t nc = 0; nc < is.n * is.c; ++nc) {
    const std::size_t base = nc * is.plane();
    for (std::size_t y = 0; y < out_shape.h; ++y) {
      for (std::size_t x = 0; x < out_shape.w; ++x, ++o) {
        const std::size_t top = base + 2 * y * is.w + 2 * x;
        const std::array<std::size_t, 4> window{top, top + 1, top + is.w, top + is.w + 1};
        std::size_t best = window[0];
        for (std::size_t i = 1; i < window.size(); ++i) {
          if (in[window[i]] > in[best]) best = window[i];
        }
        out[o] = in[best];
        argmax[o] = best;
      }
    }
  }
  return detail::make_result<Real>(out_shape, std::move(out), {input.node()},
                                   [argmax = std::move(argmax)](detail::Node<Real>& self) {
                                     auto& gin = self.inputs[0]->ensure_grad();
                                     for (std::size_t i = 0; i < argmax.size(); ++i) {
                                       gin[argmax[i]] += self.grad[i];
                                     }
                                   });
}

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("add: shape mismatch " + to_string(a.shape()) + " vs " +
                                to_string(b.shape()));
  }
  const auto x = a.data();
  const auto y = b.data();
  std::vector<Real> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return detail::make_result<Real>(a.shape(), std::move(out), {a.node(), b.node()},
                                   [](detail::Node<Real>& self) {
                                     for (auto& in : self.inputs) {
                                       if (!in->requires_grad) continue;
                                       auto& g = in->ensure_grad();
                                       for (std::size_t i = 0; i < g.size(); ++i) {
                                         g[i] += self.grad[i];
                                       }
                                     }
                                   });
}

template <typename Real>
Tensor<Real> relu(const Tensor<Real>& input) {
  const auto x = input.data();
  std::vector<Real> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > Real(0) ? x[i] : Real(0);
  return detail::make_result<Real>(input.shape(), std::move(out), {input.node()},
                                   [](detail::Node<Real>& self) {
                                     auto& in = *self.inputs[0];
                                     auto& g = in.ensure_grad();
                                     for (std::size_t i = 0; i < g.size(); ++i) {
                                       if (in.value[i] > Real(0)) g[i] += self.grad[i];
                                     }
                                   });
}

template <typename Real>
Tensor<Real> concat_channels(const std::vector<Tensor<Real>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels: no inputs");
  const Shape& first = parts.front().shape();
  std::size_t channels = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Shape& s = parts[i].shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw std::invalid_argument("concat_channels: part " + std::to_string(i) + " has shape " +
                                  to_string(s) + ", expected batch/height/width of " +
                                  to_string(first));
    }
    channels += s.c;
  }
  const Shape out_shape{first.n, channels, first.h, first.w};
  const std::size_t plane = first.plane();
  std::vector<Real> out(out_shape.numel());
  std::vector<NodePtr<Real>> inputs;
  for (std::size_t n = 0; n < first.n; ++n) {
    Real* dst = out.data() + n * channels * plane;
    for (const auto& part : parts) {
      const std::size_t block = part.shape().c * plane;
      const Real* src = part.data().data() + n * block;
      dst = std::copy(src, src + block, dst);
    }
  }
  for (const auto& part : parts) inputs.push_back(part.node());
  return detail::make_result<Real>(
      out_shape, std::move(out), std::move(inputs), [channels, plane](detail::Node<Real>& self) {
        const std::size_t batch = self.shape.n;
        std::size_t channel_offset = 0;
        for (auto& in : self.inputs) {
          const std::size_t block = in->shape.c * plane;
          if (in->requires_grad) {
            auto& g = in->ensure_grad();
            for (std::size_t n = 0; n < batch; ++n) {
              const Real* src = self.grad.data() + (n * channels + channel_offset) * plane;
              Real* dst = g.data() + n * block;
              for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
            }
          }
          channel_offset += in->shape.c;
        }
      });
}

template <typename Real>
Tensor<Real> sum(const Tensor<Real>& input) {
  Real total = 0;
  for (Real v : input.data()) total += v;
  return detail::make_result<Real>(Shape{1, 1, 1, 1}, {total}, {input.node()},
                                   [](detail::Node<Real>& self) {
                                     auto& g = self.inputs[0]->ensure_grad();
                                     for (auto& v : g) v += self.grad[0];
                                   });
}

template <typename Real>
Tensor<Real> pick(const Tensor<Real>& input, std::size_t n, std::size_t c, std::size_t y,
                  std::size_t x) {
  const Shape& s = input.shape();
  if (n >= s.n || c >= s.c || y >= s.h || x >= s.w) {
    throw std::out_of_range("pick: index (" + std::to_string(n) + ", " + std::to_string(c) +
                            ", " + std::to_string(y) + ", " + std::to_string(x) +
                            ") outside " + to_string(s));
  }
  const std::size_t index = s.offset(n, c, y, x);
  return detail::make_result<Real>(Shape{1, 1, 1, 1}, {input.data()[index]}, {input.node()},
                                   [index](detail::Node<Real>& self) {
                                     self.inputs[0]->ensure_grad()[index] += self.grad[0];
                                   });
}

template <typename Real>
Tensor<Real> softmax_cross_entropy(const Tensor<Real>& logits, const LabelMap& target) {
  const Shape& s = logits.shape();
  if (target.batch != s.n || target.height != s.h || target.width != s.w) {
    throw std::invalid_argument("softmax_cross_entropy: target map " +
                                std::to_string(target.batch) + "x" +
                                std::to_string(target.height) + "x" +
                                std::to_string(target.width) + " does not match logits " +
                                to_string(s));
  }
  const std::size_t classes = s.c;
  const std::size_t plane = s.plane();
  const auto z = logits.data();
  std::vector<Real> prob(z.size());
  double total = 0;
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t p = 0; p < plane; ++p) {
      const std::int32_t label = target.values[n * plane + p];
      if (label < 0 || static_cast<std::size_t>(label) >= classes) {
        throw std::invalid_argument("softmax_cross_entropy: class index " +
                                    std::to_string(label) + " outside [0, " +
                                    std::to_string(classes) + ")");
      }
      const std::size_t base = n * classes * plane + p;
      Real peak = -std::numeric_limits<Real>::infinity();
      for (std::size_t c = 0; c < classes; ++c) peak = std::max(peak, z[base + c * plane]);
      Real denom = 0;
      for (std::size_t c = 0; c < classes; ++c) {
        const Real e = std::exp(z[base + c * plane] - peak);
        prob[base + c * plane] = e;
        denom += e;
      }
      for (std::size_t c = 0; c < classes; ++c) prob[base + c * plane] /= denom;
      total += static_cast<double>(peak + std::log(denom) - z[base + label * plane]);
    }
  }
  const std::size_t count = s.n * plane;
  const Real loss = static_cast<Real>(total / static_cast<double>(count));
  return detail::make_result<Real>(
      Shape{1, 1, 1, 1}, {loss}, {logits.node()},
      [prob = std::move(prob), labels = target.values, classes, plane,
       count](detail::Node<Real>& self) {
        auto& g = self.inputs[0]->ensure_grad();
        const Real scale = self.grad[0] / static_cast<Real>(count);
        const std::size_t batch = self.inputs[0]->shape.n;
        for (std::size_t n = 0; n < batch; ++n) {
          for (std::size_t p = 0; p < plane; ++p) {
            const std::size_t base = n * classes * plane + p;
            const auto label = static_cast<std::size_t>(labels[n * plane + p]);
            for (std::size_t c = 0; c < classes; ++c) {
              const Real indicator = c == label ? Real(1) : Real(0);
              g[base + c * plane] += scale * (prob[base + c * plane] - indicator);
            }
          }
        }
      });
}

template <typename Real>
LabelMap argmax_channels(const Tensor<Real>& logits) {
  const Shape& s = logits.shape();
  LabelMap out(s.n, s.h, s.w);
  const auto z = logits.data();
  const std::size_t plane = s.plane();
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t p = 0; p < plane; ++p) {
      const std::size_t base = n * s.c * plane + p;
      std::size_t best = 0;
      for (std::size_t c = 1; c < s.c; ++c) {
        if (z[base + c * plane] > z[base + best * plane]) best = c;
      }
      out.values[n * plane + p] = static_cast<std::int32_t>(best);
    }
  }
  return out;
}

#define TSC_INSTANTIATE_OPS(Real)                                                            \
  template Tensor<Real> conv2d(const Tensor<Real>&, const ConvSpec<Real>&);                  \
  template Tensor<Real> conv2d_transposed(const Tensor<Real>&, const ConvSpec<Real>&);       \
  template Tensor<Real> maxpool2d(const Tensor<Real>&);                                      \
  template Tensor<Real> add(const Tensor<Real>&, const Tensor<Real>&);                       \
  template Tensor<Real> relu(const Tensor<Real>&);                                           \
  template Tensor<Real> concat_channels(const std::vector<Tensor<Real>>&);                   \
  template Tensor<Real> sum(const Tensor<Real>&);                                            \
  template Tensor<Real> pick(const Tensor<Real>&, std::size_t, std::size_t, std::size_t,     \
                             std::size_t);                                                   \
  template Tensor<Real> softmax_cross_entropy(const Tensor<Real>&, const LabelMap&);         \
  template LabelMap argmax_channels(const Tensor<Real>&);

TSC_INSTANTIATE_OPS(float)
TSC_INSTANTIATE_OPS(double)

#undef TSC_INSTANTIATE_OPS

}  // namespace tsc
