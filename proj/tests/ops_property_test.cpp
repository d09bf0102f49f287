#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "tsc/gradcheck.hpp"
#include "tsc/ops.hpp"

namespace tsc {
namespace {

using testing::max_abs_diff;
using testing::random_tensor;

struct ConvCase {
  Shape input;
  std::size_t cout = 1;
  std::size_t k = 3;
  int stride = 1;
  int dilation = 1;
  int padding = 0;
};

// Random geometry with shapes up to 2x4x16x16 and a non-empty output.
ConvCase random_case(std::mt19937_64& rng) {
  for (;;) {
    ConvCase c;
    c.input = Shape{1 + rng() % 2, 1 + rng() % 4, 1 + rng() % 16, 1 + rng() % 16};
    c.cout = 1 + rng() % 4;
    c.k = 1 + rng() % 3;
    c.stride = 1 + static_cast<int>(rng() % 2);
    c.dilation = 1 + static_cast<int>(rng() % 3);
    c.padding = static_cast<int>(rng() % 3);
    const long span = static_cast<long>(c.dilation) * (static_cast<long>(c.k) - 1);
    if (static_cast<long>(c.input.h) + 2 * c.padding > span &&
        static_cast<long>(c.input.w) + 2 * c.padding > span) {
      return c;
    }
  }
}

TEST(ConvOracle, RandomizedConv2d) {
  std::mt19937_64 rng(101);
  int strides[3] = {}, dilations[4] = {};
  for (int trial = 0; trial < 300; ++trial) {
    const ConvCase c = random_case(rng);
    ++strides[c.stride];
    ++dilations[c.dilation];
    const auto x = random_tensor(c.input, rng);
    const auto k = random_tensor(Shape{c.cout, c.input.c, c.k, c.k}, rng);
    const auto b = random_tensor(Shape{1, 1, 1, c.cout}, rng);
    Shape expected_shape;
    const auto expected = testing::naive_conv(x, k, &b, c.stride, c.dilation, c.padding, expected_shape);
    const auto y = conv2d(x, ConvSpec<double>{k, b, c.stride, c.dilation, c.padding});
    ASSERT_EQ(y.shape(), expected_shape) << "trial " << trial;
    ASSERT_LE(max_abs_diff(y.data(), expected), 1e-12) << "trial " << trial;
  }
  EXPECT_GT(strides[1] * strides[2], 0);
  EXPECT_GT(dilations[1] * dilations[2] * dilations[3], 0);
}

TEST(ConvOracle, RandomizedConv2dTransposed) {
  std::mt19937_64 rng(102);
  for (int trial = 0; trial < 300; ++trial) {
    ConvCase c = random_case(rng);
    const long k = static_cast<long>(c.k);
    const long oh = c.stride * (static_cast<long>(c.input.h) - 1) + c.dilation * (k - 1) + 1 - 2 * c.padding;
    const long ow = c.stride * (static_cast<long>(c.input.w) - 1) + c.dilation * (k - 1) + 1 - 2 * c.padding;
    if (oh < 1 || ow < 1) {
      --trial;
      continue;
    }
    const auto x = random_tensor(c.input, rng);
    const auto w = random_tensor(Shape{c.input.c, c.cout, c.k, c.k}, rng);
    const auto b = random_tensor(Shape{1, 1, 1, c.cout}, rng);
    Shape expected_shape;
    const auto expected =
        testing::naive_conv_transposed(x, w, &b, c.stride, c.dilation, c.padding, expected_shape);
    const auto y = conv2d_transposed(x, ConvSpec<double>{w, b, c.stride, c.dilation, c.padding});
    ASSERT_EQ(y.shape(), expected_shape) << "trial " << trial;
    ASSERT_LE(max_abs_diff(y.data(), expected), 1e-12) << "trial " << trial;
  }
}

TEST(ConvOracle, RandomizedMaxpool) {
  std::mt19937_64 rng(103);
  for (int trial = 0; trial < 300; ++trial) {
    const Shape s{1 + rng() % 2, 1 + rng() % 4, 2 * (1 + rng() % 8), 2 * (1 + rng() % 8)};
    const auto x = random_tensor(s, rng);
    const auto y = maxpool2d(x);
    ASSERT_EQ(y.shape(), (Shape{s.n, s.c, s.h / 2, s.w / 2}));
    ASSERT_EQ(max_abs_diff(y.data(), testing::naive_maxpool(x)), 0.0);
  }
}

// Compatible pairs: the transposed operator maps the convolution's output
// shape back onto exactly the input shape, which holds when
// (H + 2p - d(k - 1) - 1) is a multiple of the stride.
TEST(ConvAdjoint, InnerProductIdentity) {
  std::mt19937_64 rng(104);
  int accepted = 0;
  while (accepted < 100) {
    const ConvCase c = random_case(rng);
    const long span = static_cast<long>(c.dilation) * (static_cast<long>(c.k) - 1);
    const long rows = static_cast<long>(c.input.h) + 2 * c.padding - span - 1;
    const long cols = static_cast<long>(c.input.w) + 2 * c.padding - span - 1;
    if (rows % c.stride != 0 || cols % c.stride != 0) continue;
    ++accepted;
    const auto a = random_tensor(c.input, rng);
    const auto k = random_tensor(Shape{c.cout, c.input.c, c.k, c.k}, rng);
    const ConvSpec<double> spec{k, {}, c.stride, c.dilation, c.padding};
    const auto conv_a = conv2d(a, spec);
    const auto b = random_tensor(conv_a.shape(), rng);
    // The kernel storage is shared: read as (Cin, Cout) of the transposed
    // operator it maps Cout channels back to Cin.
    const auto back = conv2d_transposed(b, spec);
    ASSERT_EQ(back.shape(), a.shape());
    const double lhs = testing::dot(conv_a.data(), b.data());
    const double rhs = testing::dot(a.data(), back.data());
    EXPECT_LE(std::abs(lhs - rhs), 1e-10 * std::max(1.0, std::abs(lhs)));
  }
}

GradCheckOptions checks() { return GradCheckOptions{}; }

// Random labels turn any feature map into a non-linear scalar loss whose
// gradient varies per element.
Tensor<double> label_loss(const Tensor<double>& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Shape s = y.shape();
  LabelMap labels(s.n, s.h, s.w);
  for (auto& v : labels.values) v = static_cast<int>(rng() % s.c);
  return softmax_cross_entropy(y, labels);
}

TEST(OpGradients, Conv2dAllInputs) {
  std::mt19937_64 rng(105);
  double worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    ConvCase c = random_case(rng);
    c.input.h = std::min<std::size_t>(c.input.h + 4, 9);
    c.input.w = std::min<std::size_t>(c.input.w + 4, 9);
    std::vector<Tensor<double>> params = {
        random_tensor(c.input, rng, -1, 1, true),
        random_tensor(Shape{c.cout, c.input.c, c.k, c.k}, rng, -1, 1, true),
        random_tensor(Shape{1, 1, 1, c.cout}, rng, -1, 1, true)};
    const std::uint64_t seed = rng();
    const auto loss = [&] {
      return label_loss(conv2d(params[0], ConvSpec<double>{params[1], params[2], c.stride,
                                                           c.dilation, c.padding}),
                        seed);
    };
    worst = std::max(worst, finite_difference_check(loss, params, checks()));
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(OpGradients, Conv2dTransposedAllInputs) {
  std::mt19937_64 rng(106);
  double worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const ConvCase c = random_case(rng);
    const long k = static_cast<long>(c.k);
    Shape in = c.input;
    in.h = std::min<std::size_t>(in.h, 6);
    in.w = std::min<std::size_t>(in.w, 6);
    const long oh = c.stride * (static_cast<long>(in.h) - 1) + c.dilation * (k - 1) + 1 - 2 * c.padding;
    const long ow = c.stride * (static_cast<long>(in.w) - 1) + c.dilation * (k - 1) + 1 - 2 * c.padding;
    if (oh < 1 || ow < 1) {
      --trial;
      continue;
    }
    std::vector<Tensor<double>> params = {
        random_tensor(in, rng, -1, 1, true),
        random_tensor(Shape{in.c, c.cout, c.k, c.k}, rng, -1, 1, true),
        random_tensor(Shape{1, 1, 1, c.cout}, rng, -1, 1, true)};
    const std::uint64_t seed = rng();
    const auto loss = [&] {
      return label_loss(conv2d_transposed(params[0], ConvSpec<double>{params[1], params[2], c.stride,
                                                                      c.dilation, c.padding}),
                        seed);
    };
    worst = std::max(worst, finite_difference_check(loss, params, checks()));
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(OpGradients, Maxpool) {
  std::mt19937_64 rng(107);
  double worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const Shape s{1 + rng() % 2, 2 + rng() % 3, 2 * (1 + rng() % 4), 2 * (1 + rng() % 4)};
    const auto x = random_tensor(s, rng);
    const std::uint64_t seed = rng();
    worst = std::max(worst, finite_difference_check(
                                [&](const Tensor<double>& t) { return label_loss(maxpool2d(t), seed); }, x,
                                checks()));
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(OpGradients, AddAndRelu) {
  std::mt19937_64 rng(108);
  double worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const Shape s{1 + rng() % 2, 2 + rng() % 3, 1 + rng() % 5, 1 + rng() % 5};
    Tensor<double> a = random_tensor(s, rng, -1, 1, true);
    Tensor<double> b = random_tensor(s, rng, -1, 1, true);
    // Keep relu inputs away from the kink by more than the step.
    for (std::size_t i = 0; i < s.numel(); ++i) {
      const double total = a.data()[i] + b.data()[i];
      if (std::abs(total) < 0.05) a.mutable_data()[i] += 0.1;
    }
    const std::uint64_t seed = rng();
    std::vector<Tensor<double>> params = {a, b};
    worst = std::max(worst, finite_difference_check([&] { return label_loss(relu(add(params[0], params[1])), seed); },
                                                    params, checks()));
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(OpGradients, ConcatChannels) {
  std::mt19937_64 rng(109);
  double worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng() % 2, h = 1 + rng() % 4, w = 1 + rng() % 4;
    std::vector<Tensor<double>> params;
    for (std::size_t p = 0; p < 1 + rng() % 4; ++p) {
      params.push_back(random_tensor(Shape{n, 1 + rng() % 3, h, w}, rng, -1, 1, true));
    }
    const std::uint64_t seed = rng();
    worst = std::max(worst, finite_difference_check([&] { return label_loss(concat_channels(params), seed); },
                                                    params, checks()));
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(OpGradients, SoftmaxCrossEntropy) {
  std::mt19937_64 rng(110);
  double worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const Shape s{1 + rng() % 2, 2 + rng() % 4, 1 + rng() % 5, 1 + rng() % 5};
    const auto x = random_tensor(s, rng, -3, 3);
    const std::uint64_t seed = rng();
    worst = std::max(worst, finite_difference_check(
                                [&](const Tensor<double>& t) { return label_loss(t, seed); }, x, checks()));
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(OpGradients, SumAndPick) {
  std::mt19937_64 rng(111);
  double worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const Shape s{1 + rng() % 2, 1 + rng() % 3, 1 + rng() % 4, 1 + rng() % 4};
    const auto x = random_tensor(s, rng);
    const std::size_t n = rng() % s.n, c = rng() % s.c, y = rng() % s.h, xx = rng() % s.w;
    worst = std::max(worst, finite_difference_check([](const Tensor<double>& t) { return sum(t); }, x, checks()));
    worst = std::max(worst, finite_difference_check(
                                [&](const Tensor<double>& t) { return pick(t, n, c, y, xx); }, x, checks()));
  }
  EXPECT_LT(worst, 1e-4);
}

}  // namespace
}  // namespace tsc
