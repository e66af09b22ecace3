#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "delnet/autograd.hpp"
#include "delnet/kernels.hpp"
#include "oracles.hpp"

using namespace delnet;

namespace {
Tensor<double> randn(Shape s, std::mt19937_64& rng) { return Tensor<double>::normal(std::move(s), rng); }
}  // namespace

TEST(Conv2d, OneByOneIdentity) {
  std::mt19937_64 rng(1);
  auto x = randn({2, 1, 5, 4}, rng);
  auto y = kernels::conv2d(x, Tensor<double>({1, 1, 1, 1}, 1.0), Tensor<double>({1}), {});
  EXPECT_EQ(y, x);
}

TEST(Conv2d, MatchesNestedLoopSamePadding) {
  std::mt19937_64 rng(2);
  auto x = randn({1, 2, 5, 5}, rng);
  auto w = randn({3, 2, 3, 3}, rng);
  auto b = randn({3}, rng);
  auto y = kernels::conv2d(x, w, b, {1, 1, 1});
  auto ref = oracle::conv2d(x, w, b, 1, 1, 1);
  ASSERT_EQ(y.shape(), (Shape{1, 3, 5, 5}));
  EXPECT_LT(max_abs_diff(y, ref), 1e-12);
}

TEST(Conv2d, DilatedImpulseResponse) {
  Tensor<double> x({1, 1, 7, 7});
  x.at(0, 0, 3, 3) = 1.0;
  Tensor<double> w({1, 1, 3, 3}, 1.0);
  auto y = kernels::conv2d(x, w, Tensor<double>({1}), {1, 2, 2});
  for (std::size_t r = 0; r < 7; ++r) {
    for (std::size_t c = 0; c < 7; ++c) {
      const bool tap = (r == 1 || r == 3 || r == 5) && (c == 1 || c == 3 || c == 5);
      EXPECT_EQ(y.at(0, 0, r, c), tap ? 1.0 : 0.0) << r << "," << c;
    }
  }
}

TEST(Conv2d, OutputExtentFormula) {
  EXPECT_EQ(conv_out_extent(7, 3, {2, 1, 1}), 4u);
  EXPECT_EQ(conv_out_extent(7, 3, {1, 0, 3}), 1u);
  EXPECT_EQ(conv_out_extent(8, 3, {2, 1, 1}), 4u);
}

TEST(Conv2d, ChannelMismatchNamesBothShapes) {
  try {
    kernels::conv2d(Tensor<double>({1, 2, 4, 4}), Tensor<double>({1, 3, 3, 3}), Tensor<double>({1}), {1, 1, 1});
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[1,2,4,4]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[1,3,3,3]"), std::string::npos) << msg;
  }
}

TEST(Conv2d, RandomShapesMatchOracle) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::size_t> ext(1, 7), ch(1, 3), kd(0, 2), st(1, 3), dl(1, 3);
  int run = 0;
  for (int i = 0; i < 300 && run < 100; ++i) {
    const std::size_t k = 2 * kd(rng) + 1, s = st(rng), d = dl(rng);
    const std::size_t h = ext(rng), w = ext(rng);
    const std::size_t pad = std::uniform_int_distribution<std::size_t>(0, d * (k - 1) / 2)(rng);
    if (h + 2 * pad < d * (k - 1) + 1 || w + 2 * pad < d * (k - 1) + 1) continue;
    auto x = randn({ch(rng), ch(rng), h, w}, rng);
    auto wt = randn({ch(rng), x.dim(1), k, k}, rng);
    auto b = randn({wt.dim(0)}, rng);
    auto y = kernels::conv2d(x, wt, b, {s, pad, d});
    EXPECT_LT(max_abs_diff(y, oracle::conv2d(x, wt, b, s, pad, d)), 1e-10);
    ++run;
  }
  EXPECT_EQ(run, 100);
}

TEST(Conv2d, RejectsKernelLargerThanPaddedInput) {
  EXPECT_THROW(kernels::conv2d(Tensor<double>({1, 1, 2, 2}), Tensor<double>({1, 1, 5, 5}), Tensor<double>({1}), {}),
               ShapeError);
}

TEST(PRelu, Examples) {
  auto x = Tensor<double>({1, 1, 1, 2}, std::vector<double>{2.0, -4.0});
  auto y = kernels::prelu(x, Tensor<double>({1}, 0.25));
  EXPECT_EQ(y[0], 2.0);
  EXPECT_EQ(y[1], -1.0);
  std::mt19937_64 rng(4);
  auto r = randn({2, 3, 3, 3}, rng);
  EXPECT_EQ(kernels::prelu(r, Tensor<double>({3}, 1.0)), r);
  EXPECT_THROW(kernels::prelu(r, Tensor<double>({2}, 1.0)), ShapeError);
}

TEST(Sigmoid, StableAndSymmetric) {
  EXPECT_EQ(kernels::sigmoid_scalar(0.0), 0.5);
  EXPECT_EQ(kernels::sigmoid_scalar(800.0), 1.0);
  EXPECT_EQ(kernels::sigmoid_scalar(-800.0), 0.0);
  EXPECT_TRUE(std::isfinite(kernels::sigmoid_scalar(-700.0)));
  for (double x : {0.3, 2.0, 17.0, 40.0}) {
    EXPECT_NEAR(kernels::sigmoid_scalar(-x), 1.0 - kernels::sigmoid_scalar(x), 1e-15);
  }
}

TEST(GlobalAvgPool, Examples) {
  auto x = Tensor<double>({1, 2, 2, 2}, std::vector<double>{1, 2, 3, 4, 7, 7, 7, 7});
  auto y = kernels::global_avg_pool(x);
  EXPECT_EQ(y.shape(), (Shape{1, 2, 1, 1}));
  EXPECT_EQ(y[0], 2.5);
  EXPECT_EQ(y[1], 7.0);
}

TEST(GlobalAvgPool, GradientIsUniform) {
  Tape<double> tape;
  std::mt19937_64 rng(5);
  auto x = tape.variable(randn({1, 2, 3, 4}, rng));
  tape.backward(sum(global_avg_pool(x)));
  const auto g = tape.grad(x);
  for (double v : g.values()) EXPECT_DOUBLE_EQ(v, 1.0 / 12.0);
}

TEST(ChannelPool, Examples) {
  std::mt19937_64 rng(6);
  auto one = randn({2, 1, 3, 3}, rng);
  EXPECT_EQ(kernels::channel_pool(one, ChannelPoolMode::kMean), one);
  EXPECT_EQ(kernels::channel_pool(one, ChannelPoolMode::kMax), one);
  auto x = Tensor<double>({1, 2, 1, 1}, std::vector<double>{-1.0, 3.0});
  EXPECT_EQ(kernels::channel_pool(x, ChannelPoolMode::kMean)[0], 1.0);
  EXPECT_EQ(kernels::channel_pool(x, ChannelPoolMode::kMax)[0], 3.0);
}

TEST(ChannelPool, MaxGradientGoesToArgmaxLowestOnTies) {
  Tape<double> tape;
  auto x = tape.variable(Tensor<double>({1, 3, 1, 2}, std::vector<double>{5, 1, 2, 4, 5, 4}));
  tape.backward(sum(channel_pool(x, ChannelPoolMode::kMax)));
  const auto& g = tape.grad(x);
  // Pixel 0: channels (5, 2, 5) tie between 0 and 2 -> channel 0.
  EXPECT_EQ(g[0], 1.0);
  EXPECT_EQ(g[2], 0.0);
  EXPECT_EQ(g[4], 0.0);
  // Pixel 1: channels (1, 4, 4) tie between 1 and 2 -> channel 1.
  EXPECT_EQ(g[1], 0.0);
  EXPECT_EQ(g[3], 1.0);
  EXPECT_EQ(g[5], 0.0);
}

TEST(Elementwise, IdentitiesAndBroadcast) {
  std::mt19937_64 rng(7);
  auto a = randn({2, 3, 4, 4}, rng);
  auto plus = [](double p, double q) { return p + q; };
  auto times = [](double p, double q) { return p * q; };
  EXPECT_EQ(kernels::binary("add", a, Tensor<double>(a.shape()), plus), a);
  EXPECT_EQ(kernels::binary("mul", a, Tensor<double>(a.shape(), 1.0), times), a);
  auto half = kernels::binary("mul", a, Tensor<double>({2, 3, 1, 1}, 0.5), times);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(half[i], a[i] * 0.5);
  auto spatial = Tensor<double>({2, 1, 4, 4}, 2.0);
  EXPECT_EQ(kernels::binary("mul", a, spatial, times).shape(), a.shape());
  EXPECT_THROW(kernels::binary("add", a, Tensor<double>({2, 2, 4, 4}), plus), ShapeError);
}

TEST(Concat, StacksInArgumentOrder) {
  std::mt19937_64 rng(8);
  auto a = randn({1, 2, 3, 3}, rng);
  auto b = randn({1, 3, 3, 3}, rng);
  auto c = kernels::concat_channels<double>({&a, &b});
  EXPECT_EQ(c.shape(), (Shape{1, 5, 3, 3}));
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(c[i], a[i]);
  for (std::size_t i = 0; i < b.numel(); ++i) EXPECT_EQ(c[a.numel() + i], b[i]);
  auto bad = randn({1, 1, 2, 3}, rng);
  EXPECT_THROW(kernels::concat_channels<double>({&a, &bad}), ShapeError);
}

TEST(Resample, NearestUpsampleOfConstantIsConstant) {
  auto y = kernels::upsample_nearest2x(Tensor<double>({1, 2, 3, 2}, 0.75));
  EXPECT_EQ(y, Tensor<double>({1, 2, 6, 4}, 0.75));
}

TEST(Resample, DownUpShapes) {
  Tape<double> tape;
  std::mt19937_64 rng(9);
  auto x = tape.constant(randn({1, 2, 4, 4}, rng));
  auto down = downsample(x, tape.constant(randn({3, 2, 3, 3}, rng)), tape.constant(randn({3}, rng)));
  EXPECT_EQ(down.shape(), (Shape{1, 3, 2, 2}));
  for (std::size_t h : {2u, 6u, 10u}) {
    for (std::size_t w : {4u, 8u}) {
      auto xi = tape.constant(randn({1, 2, h, w}, rng));
      auto d = downsample(xi, tape.constant(randn({4, 2, 3, 3}, rng)), tape.constant(randn({4}, rng)));
      auto u = upsample(d, tape.constant(randn({2, 4, 3, 3}, rng)), tape.constant(randn({2}, rng)));
      EXPECT_EQ(u.shape(), xi.shape());
    }
  }
  auto odd = tape.constant(randn({1, 2, 5, 4}, rng));
  EXPECT_THROW(downsample(odd, tape.constant(randn({3, 2, 3, 3}, rng)), tape.constant(randn({3}, rng))), ShapeError);
}

TEST(AvgPool, HalvesAndAverages) {
  auto x = Tensor<double>({1, 1, 2, 4}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8});
  auto y = kernels::avg_pool2x2(x);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 1, 2}));
  EXPECT_EQ(y[0], 3.5);
  EXPECT_EQ(y[1], 5.5);
}

TEST(Kernels, PureAndRepeatable) {
  std::mt19937_64 rng(10);
  auto x = randn({2, 3, 6, 6}, rng);
  auto w = randn({4, 3, 3, 3}, rng);
  auto b = randn({4}, rng);
  const auto x0 = x, w0 = w;
  auto y1 = kernels::conv2d(x, w, b, {1, 1, 1});
  auto y2 = kernels::conv2d(x, w, b, {1, 1, 1});
  EXPECT_EQ(y1, y2);
  EXPECT_EQ(x, x0);
  EXPECT_EQ(w, w0);
}

TEST(Kernels, ThreadCountDoesNotChangeResults) {
  std::mt19937_64 rng(11);
  auto x = Tensor<float>::normal({2, 4, 12, 12}, rng);
  auto w = Tensor<float>::normal({5, 4, 3, 3}, rng);
  auto b = Tensor<float>::normal({5}, rng);
  set_num_threads(1);
  auto y1 = kernels::conv2d(x, w, b, {1, 1, 1});
  set_num_threads(4);
  auto y4 = kernels::conv2d(x, w, b, {1, 1, 1});
  set_num_threads(0);
  EXPECT_EQ(y1, y4);
}

TEST(MacCount, ScopesNestAndCountConvs) {
  MacCountScope outer;
  {
    MacCountScope inner;
    kernels::conv2d(Tensor<float>({1, 2, 4, 4}), Tensor<float>({3, 2, 3, 3}), Tensor<float>({3}), {1, 1, 1});
    EXPECT_EQ(inner.count(), 4u * 4 * 3 * 2 * 9);
  }
  EXPECT_EQ(outer.count(), 4u * 4 * 3 * 2 * 9);
}
