#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "tsc/architecture.hpp"
#include "tsc/gradcheck.hpp"

namespace tsc {
namespace {

using testing::random_tensor;

ArchitectureSpec tiny(Variant variant, int depth, bool ote = false) {
  ArchitectureSpec spec;
  spec.variant = variant;
  spec.depth = depth;
  spec.base_channels = 2;
  spec.num_classes = 3;
  spec.ote = ote;
  spec.width_policy = WidthPolicy::Exact;
  return spec;
}

TEST(Variant, NamesRoundTrip) {
  for (const Variant v : kAllVariants) EXPECT_EQ(parse_variant(to_string(v)), v);
  EXPECT_THROW(parse_variant("vnet"), std::invalid_argument);
  EXPECT_EQ(dilation_rate(Variant::Dilated2), 2);
  EXPECT_EQ(dilation_rate(Variant::Dilated3), 3);
  EXPECT_EQ(dilation_rate(Variant::UNet), 1);
}

TEST(ArchitectureSpec, InvalidSpecsAreRejectedAtBuild) {
  ArchitectureSpec spec;
  spec.depth = 0;
  EXPECT_THROW(build<double>(spec, 1), std::invalid_argument);
  spec = ArchitectureSpec{};
  spec.widths = {4, 8};
  EXPECT_THROW(build<double>(spec, 1), std::invalid_argument);
  spec = ArchitectureSpec{};
  spec.num_classes = 0;
  EXPECT_THROW(build<double>(spec, 1), std::invalid_argument);
}

TEST(Build, UNetShapeContract) {
  ArchitectureSpec spec;
  spec.depth = 2;
  spec.base_channels = 4;
  spec.num_classes = 2;
  const auto g = build<double>(spec, 1);
  std::mt19937_64 rng(1);
  const auto logits = g.forward(random_tensor(Shape{1, 3, 16, 16}, rng));
  EXPECT_EQ(logits.shape(), (Shape{1, 2, 16, 16}));
}

TEST(Build, ShapeRoundTripForEveryVariant) {
  std::mt19937_64 rng(2);
  for (const Variant v : kAllVariants) {
    for (int depth : {2, 3}) {
      for (bool ote : {false, true}) {
        const auto g = build<double>(tiny(v, depth, ote), 3);
        for (std::size_t side : {8u, 16u, 24u}) {
          const auto x = random_tensor(Shape{2, 3, side, 2 * side}, rng);
          EXPECT_EQ(g.forward(x).shape(), (Shape{2, 3, side, 2 * side}))
              << to_string(v) << " D=" << depth;
        }
      }
    }
  }
}

TEST(Build, IndivisibleInputFailsAtForward) {
  const auto g = build<double>(tiny(Variant::UNet, 3), 1);
  EXPECT_THROW(g.forward(Tensor<double>(Shape{1, 3, 12, 16})), std::invalid_argument);
}

TEST(Build, WrongChannelCountNamesTheProblem) {
  const auto g = build<double>(tiny(Variant::TscNet, 2, true), 1);
  try {
    g.forward(Tensor<double>(Shape{1, 5, 8, 8}));
    FAIL() << "expected an error";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("channels"), std::string::npos) << e.what();
  }
}

TEST(Build, TscFactorsFollowLevelOverDepthPlusOne) {
  const auto g = build<double>(tiny(Variant::TscNet, 2), 1);
  const GraphOp& deep = g.ops()[static_cast<std::size_t>(g.find("dec1.tsc"))];
  const GraphOp& shallow = g.ops()[static_cast<std::size_t>(g.find("dec0.tsc"))];
  ASSERT_TRUE(deep.translation && shallow.translation);
  EXPECT_EQ(deep.translation->factor(), (Fraction{1, 3}));
  EXPECT_EQ(shallow.translation->factor(), (Fraction{2, 3}));

  const auto g5 = build<double>(tiny(Variant::TscNet, 5), 1);
  for (int level = 0; level < 5; ++level) {
    const GraphOp& op = g5.ops()[static_cast<std::size_t>(g5.find("dec" + std::to_string(level) + ".tsc"))];
    EXPECT_EQ(op.translation->factor(), (Fraction{5 - level, 6}));
  }
}

TEST(Build, DownsamplingMatchesVariant) {
  const auto unet = build<double>(tiny(Variant::UNet, 2), 1);
  const auto bnet = build<double>(tiny(Variant::BNet, 2), 1);
  EXPECT_GE(unet.find("enc0.pool"), 0);
  EXPECT_LT(unet.find("enc0.down"), 0);
  EXPECT_GE(bnet.find("enc1.down"), 0);
  EXPECT_LT(bnet.find("enc1.pool"), 0);
  for (const auto& layer : bnet.layers()) {
    if (layer.name.ends_with(".down")) {
      EXPECT_EQ(layer.geometry.kernel, 2);
      EXPECT_EQ(layer.geometry.stride, 2);
    }
    if (layer.name.ends_with(".up")) {
      EXPECT_TRUE(layer.geometry.transposed);
      EXPECT_EQ(layer.geometry.stride, 2);
    }
  }
}

TEST(Build, DilatedVariantsDilateEveryThreeByThree) {
  for (const Variant v : {Variant::Dilated2, Variant::Dilated3}) {
    const auto g = build<double>(tiny(v, 3), 1);
    for (const auto& layer : g.layers()) {
      if (layer.geometry.kernel == 3) {
        EXPECT_EQ(layer.geometry.dilation, dilation_rate(v)) << layer.name;
        EXPECT_EQ(layer.geometry.padding, dilation_rate(v)) << layer.name;
      } else {
        EXPECT_EQ(layer.geometry.dilation, 1) << layer.name;
      }
    }
  }
}

TEST(Build, SameSeedSameWeights) {
  const auto a = build<double>(tiny(Variant::TscNet, 3, true), 42);
  const auto b = build<double>(tiny(Variant::TscNet, 3, true), 42);
  const auto c = build<double>(tiny(Variant::TscNet, 3, true), 43);
  const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  bool any_difference = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    for (std::size_t j = 0; j < pa[i].numel(); ++j) {
      ASSERT_EQ(pa[i].data()[j], pb[i].data()[j]);
      any_difference |= pa[i].data()[j] != pc[i].data()[j];
    }
  }
  EXPECT_TRUE(any_difference);
}

TEST(Build, InitialisationScaleFollowsFanIn) {
  ArchitectureSpec spec;
  spec.base_channels = 16;
  const auto g = build<double>(spec, 5);
  for (const auto& layer : g.layers()) {
    const auto& geo = layer.geometry;
    if (geo.transposed || geo.kernel != 3) continue;
    const double fan_in = static_cast<double>(geo.in_channels * 9);
    double sq = 0;
    const auto w = layer.spec.kernel.data();
    for (double v : w) sq += v * v;
    const double variance = sq / static_cast<double>(w.size());
    EXPECT_NEAR(variance * fan_in / 2.0, 1.0, 0.25) << layer.name;
    for (double b : layer.spec.bias.data()) EXPECT_EQ(b, 0.0);
  }
}

TEST(Forward, ZerosGiveFiniteLogits) {
  for (const Variant v : kAllVariants) {
    const auto g = build<double>(tiny(v, 3, true), 7);
    for (double value : g.forward(Tensor<double>(Shape{1, 3, 16, 16}, 0.0)).data()) {
      ASSERT_TRUE(std::isfinite(value));
    }
  }
}

TEST(Forward, BatchItemsAreIndependent) {
  std::mt19937_64 rng(3);
  const auto one = random_tensor(Shape{1, 3, 16, 16}, rng);
  std::vector<double> twice(one.data().begin(), one.data().end());
  twice.insert(twice.end(), one.data().begin(), one.data().end());
  for (const Variant v : kAllVariants) {
    const auto g = build<double>(tiny(v, 2, true), 9);
    const auto y = g.forward(Tensor<double>(Shape{2, 3, 16, 16}, twice));
    const std::size_t half = y.numel() / 2;
    for (std::size_t i = 0; i < half; ++i) ASSERT_EQ(y.data()[i], y.data()[half + i]);
  }
}

// Cyclic shift of the input by a multiple of the total pooling stride shifts
// the logits by the same amount wherever the receptive field touches neither
// the zero padding nor the wrap-around seam.
TEST(Forward, UNetIsTranslationEquivariantOnTheInterior) {
  const auto g = build<double>(tiny(Variant::UNet, 2), 11);
  constexpr std::size_t side = 64, shift = 8;
  // D = 2 has a 44 pixel receptive field: 22 pixels reach on either side.
  constexpr std::size_t reach = 22;
  std::mt19937_64 rng(4);
  const auto x = random_tensor(Shape{1, 3, side, side}, rng);
  const Fraction f{shift, side};
  const auto a = g.forward(x);
  const auto b = g.forward(translate(x, Direction::DiagUpLeft, f));
  std::size_t checked = 0;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = reach; y + shift + reach < side; ++y)
      for (std::size_t xx = reach; xx + shift + reach < side; ++xx) {
        ASSERT_NEAR(b.at(0, c, y, xx), a.at(0, c, y + shift, xx + shift), 1e-12);
        ++checked;
      }
  EXPECT_EQ(checked, 3u * 12 * 12);
}

TEST(CountParams, SingleConvClosedForm) {
  LayerGraph<double> g(3);
  g.set_output(g.add_conv(g.input(), LayerGeometry{3, 8, 3, 1, 1, 1, false}, "c"));
  EXPECT_EQ(count_params(g), 3u * 8 * 9 + 8);
}

TEST(CountParams, DilationAddsNoParameters) {
  for (int depth : {2, 3, 4}) {
    ArchitectureSpec spec;
    spec.depth = depth;
    spec.variant = Variant::UNet;
    const auto unet = count_params(spec);
    spec.variant = Variant::Dilated2;
    EXPECT_EQ(count_params(spec), unet);
    spec.variant = Variant::Dilated3;
    EXPECT_EQ(count_params(spec), unet);
  }
}

TEST(CountParams, BNetExceedsUNetAtEqualWidths) {
  ArchitectureSpec spec;
  const auto unet = count_params(spec);
  spec.variant = Variant::BNet;
  const auto bnet = count_params(spec);
  EXPECT_GT(bnet, unet);
  // Each downsampling conv holds w*w*4 weights and w biases.
  std::size_t extra = 0;
  for (int level = 0; level < spec.depth; ++level) {
    const std::size_t w = static_cast<std::size_t>(spec.base_channels) << level;
    extra += w * w * 4 + w;
  }
  EXPECT_EQ(bnet - unet, extra);
}

TEST(CountParams, DefaultTscNetIsBelowBNet) {
  ArchitectureSpec spec;
  spec.variant = Variant::BNet;
  const auto bnet = count_params(spec);
  spec.variant = Variant::TscNet;
  const auto tsc = count_params(spec);
  EXPECT_LT(tsc, bnet);
  spec.ote = true;
  EXPECT_LT(count_params(spec), bnet);
  // The graph built from the spec agrees with the spec-level count.
  EXPECT_EQ(count_params(build<float>(spec, 1)), count_params(spec));
}

TEST(CountParams, ExactPolicyKeepsRequestedWidths) {
  ArchitectureSpec spec;
  spec.variant = Variant::TscNet;
  spec.width_policy = WidthPolicy::Exact;
  EXPECT_EQ(resolve_widths(spec), (std::vector<int>{8, 16, 32, 64}));
}

// White-box: the TSC merge sees 4x the encoder channels and its translated
// slices are translate() of the encoder output.
TEST(TscWiring, TappedActivationsMatchEquationOne) {
  ArchitectureSpec spec = tiny(Variant::TscNet, 3, true);
  const auto g = build<double>(spec, 13);
  std::mt19937_64 rng(5);
  const auto x = random_tensor(Shape{1, 3, 16, 16}, rng);
  std::vector<Tensor<double>> taps;
  g.forward(x, &taps);
  for (int level = 0; level < spec.depth; ++level) {
    const std::string name = "dec" + std::to_string(level);
    const auto& op = g.ops()[static_cast<std::size_t>(g.find(name + ".tsc"))];
    const Tensor<double>& merged = taps[static_cast<std::size_t>(g.find(name + ".tsc"))];
    const Tensor<double>& up = taps[static_cast<std::size_t>(op.inputs[0])];
    const Tensor<double>& skip = taps[static_cast<std::size_t>(op.inputs[1])];
    EXPECT_EQ(g.ops()[static_cast<std::size_t>(op.inputs[1])].name, "enc" + std::to_string(level) + ".relu2");
    const Shape s = skip.shape();
    ASSERT_EQ(merged.shape().c, 4 * s.c);
    const Fraction f{spec.depth - level, spec.depth + 1};
    const Tensor<double> parts[3] = {translate(skip, Direction::Left, f), translate(skip, Direction::Up, f),
                                     translate(skip, Direction::DiagUpLeft, f)};
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t y = 0; y < s.h; ++y)
        for (std::size_t xx = 0; xx < s.w; ++xx) {
          ASSERT_EQ(merged.at(0, c, y, xx), up.at(0, c, y, xx) + skip.at(0, c, y, xx));
          for (std::size_t p = 0; p < 3; ++p) {
            ASSERT_EQ(merged.at(0, (p + 1) * s.c + c, y, xx), parts[p].at(0, c, y, xx));
          }
        }
  }
}

TEST(TscWiring, OteAddsTwoInputChannels) {
  const auto g = build<double>(tiny(Variant::TscNet, 2, true), 1);
  EXPECT_EQ(g.input_channels(), 3u);
  EXPECT_EQ(g.layers().front().geometry.in_channels, 5u);
  const auto plain = build<double>(tiny(Variant::TscNet, 2, false), 1);
  EXPECT_EQ(plain.layers().front().geometry.in_channels, 3u);
}

TEST(EndToEndGradient, EveryVariantAtTinyWidth) {
  std::mt19937_64 rng(6);
  for (const Variant v : kAllVariants) {
    for (bool ote : {false, true}) {
      ArchitectureSpec spec = tiny(v, 2, ote);
      const auto g = build<double>(spec, 17);
      const auto x = random_tensor(Shape{1, 3, 8, 8}, rng);
      LabelMap labels(1, 8, 8);
      for (auto& value : labels.values) value = static_cast<int>(rng() % 3);
      // Zero biases put dead units exactly on the ReLU kink, where the one-
      // sided slopes differ; check at a generic point instead.
      auto params = g.parameters();
      std::uniform_real_distribution<double> jitter(-0.1, 0.1);
      for (std::size_t p = 1; p < params.size(); p += 2) {
        for (double& b : params[p].mutable_data()) b = jitter(rng);
      }
      const double err = finite_difference_check(
          [&] { return softmax_cross_entropy(g.forward(x), labels); }, params);
      EXPECT_LT(err, 1e-4) << to_string(v) << (ote ? "+ote" : "");
    }
  }
}

}  // namespace
}  // namespace tsc
