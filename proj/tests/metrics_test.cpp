#include <gtest/gtest.h>

#include <fstream>
#include <random>
#include <sstream>

#include "delnet/metrics.hpp"
#include "oracles.hpp"

using namespace delnet;

namespace {
Tensor<double> smooth_image(std::mt19937_64& rng, std::size_t c, std::size_t h, std::size_t w) {
  // Low-frequency content plus fine texture, in [0, 1].
  std::uniform_real_distribution<double> u(0, 1);
  const double fx = 1 + 4 * u(rng), fy = 1 + 4 * u(rng), ph = 6.28 * u(rng);
  Tensor<double> t({1, c, h, w});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        t.at(0, ch, y, x) = std::clamp(0.5 + 0.3 * std::sin(fx * x / w * 6.28 + ph + ch) * std::cos(fy * y / h * 6.28) +
                                           0.1 * (u(rng) - 0.5),
                                       0.0, 1.0);
  return t;
}

Tensor<double> noisy(const Tensor<double>& t, double sigma, std::mt19937_64& rng) {
  auto out = t;
  std::normal_distribution<double> n(0, sigma);
  for (auto& v : out.values()) v = std::clamp(v + n(rng), 0.0, 1.0);
  return out;
}
}  // namespace

TEST(Psnr, AnalyticCases) {
  Tensor<double> zeros({1, 3, 4, 4}), ones({1, 3, 4, 4}, 1.0), half({1, 3, 4, 4}, 0.5);
  EXPECT_EQ(psnr(zeros, zeros), 100.0);
  EXPECT_NEAR(psnr(zeros, ones), 0.0, 1e-9);
  EXPECT_NEAR(psnr(zeros, half), 6.020599913279624, 1e-9);
  EXPECT_THROW(psnr(zeros, Tensor<double>({1, 3, 4, 5})), ShapeError);
  EXPECT_THROW(psnr(zeros, Tensor<double>({1, 3, 4, 4}, 1.5)), RangeError);
}

TEST(Psnr, SymmetricAndDecreasingInNoise) {
  std::mt19937_64 rng(1);
  auto a = smooth_image(rng, 3, 32, 32);
  double last = 1e9;
  for (double s : {0.01, 0.05, 0.1, 0.2}) {
    std::mt19937_64 nrng(2);
    auto b = noisy(a, s, nrng);
    EXPECT_EQ(psnr(a, b), psnr(b, a));
    EXPECT_LT(psnr(a, b), last);
    last = psnr(a, b);
  }
}

TEST(Ssim, IdenticalIsOne) {
  std::mt19937_64 rng(3);
  auto a = smooth_image(rng, 3, 64, 64);
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-9);
  EXPECT_NEAR(ms_ssim(a, a), 1.0, 1e-9);
}

TEST(Ssim, InvertedCheckerboardIsNegative) {
  Tensor<double> a({1, 1, 16, 16});
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t x = 0; x < 16; ++x) a.at(0, 0, y, x) = (x + y) % 2;
  auto b = a;
  for (auto& v : b.values()) v = 1 - v;
  EXPECT_LT(ssim(a, b), 0.0);
}

TEST(Ssim, MatchesLiteralImplementation) {
  std::mt19937_64 rng(4);
  auto a = smooth_image(rng, 3, 40, 36);
  auto b = noisy(a, 0.05, rng);
  EXPECT_NEAR(ssim(a, b), oracle::ssim(a, b), 1e-10);
}

TEST(MsSsim, MatchesLiteralImplementationOn256) {
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    std::mt19937_64 rng(seed);
    auto a = smooth_image(rng, 3, 256, 256);
    auto b = noisy(a, 0.03 * static_cast<double>(seed - 10), rng);
    EXPECT_NEAR(ms_ssim(a, b), oracle::ms_ssim(a, b, 5), 1e-6);
  }
}

TEST(MsSsim, ScaleCountAdapts) {
  EXPECT_EQ(ms_ssim_scale_count(176, 300), 5u);
  EXPECT_EQ(ms_ssim_scale_count(175, 300), 4u);
  EXPECT_EQ(ms_ssim_scale_count(64, 64), 3u);
  EXPECT_EQ(ms_ssim_scale_count(11, 11), 1u);
  EXPECT_EQ(ms_ssim_scale_count(4, 4), 1u);
  EXPECT_THROW(ms_ssim_scale_count(64, 64, 4), ShapeError);
  EXPECT_EQ(ms_ssim_scale_count(64, 64, 2), 2u);
}

TEST(MsSsim, ExplicitScalesMatchOracle) {
  std::mt19937_64 rng(5);
  auto a = smooth_image(rng, 1, 48, 48);
  auto b = noisy(a, 0.1, rng);
  for (std::size_t s : {1u, 2u}) EXPECT_NEAR(ms_ssim(a, b, s), oracle::ms_ssim(a, b, s), 1e-10);
}

TEST(MsSsim, FlipInvariant) {
  std::mt19937_64 rng(6);
  auto a = smooth_image(rng, 3, 64, 64);
  auto b = noisy(a, 0.05, rng);
  auto flip = [](const Tensor<double>& t) {
    Tensor<double> f(t.shape());
    for (std::size_t c = 0; c < t.dim(1); ++c)
      for (std::size_t y = 0; y < t.dim(2); ++y)
        for (std::size_t x = 0; x < t.dim(3); ++x) f.at(0, c, y, x) = t.at(0, c, y, t.dim(3) - 1 - x);
    return f;
  };
  EXPECT_NEAR(ms_ssim(a, b), ms_ssim(flip(a), flip(b)), 1e-12);
  EXPECT_NEAR(ssim(a, b), ssim(flip(a), flip(b)), 1e-12);
}

TEST(Ciede2000, VerificationPairs) {
  std::ifstream in(std::string(DELNET_TEST_DATA) + "/ciede2000_pairs.txt");
  ASSERT_TRUE(in);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    Lab a, b;
    double expected;
    ss >> a.l >> a.a >> a.b >> b.l >> b.a >> b.b >> expected;
    EXPECT_NEAR(ciede2000(a, b), expected, 1e-4) << "pair " << n + 1;
    EXPECT_NEAR(ciede2000(b, a), expected, 1e-4) << "pair " << n + 1;
    ++n;
  }
  EXPECT_EQ(n, 34);
}

TEST(Ciede2000, ImagesIdenticalAndSymmetric) {
  std::mt19937_64 rng(7);
  auto a = Tensor<double>::uniform({3, 5, 5}, rng);
  auto b = Tensor<double>::uniform({3, 5, 5}, rng);
  EXPECT_EQ(ciede2000(a, a), 0.0);
  EXPECT_NEAR(ciede2000(a, b), ciede2000(b, a), 1e-12);
  EXPECT_GT(ciede2000(a, b), 0.0);
  EXPECT_THROW(ciede2000(Tensor<double>({2, 5, 5}), Tensor<double>({2, 5, 5})), ShapeError);
}

TEST(Ciede2000, SrgbWhiteIsLabWhite) {
  auto w = srgb_to_lab(1.0, 1.0, 1.0);
  EXPECT_NEAR(w.l, 100.0, 1e-3);
  EXPECT_NEAR(w.a, 0.0, 1e-3);
  EXPECT_NEAR(w.b, 0.0, 1e-3);
}

TEST(Evaluate, ReportFields) {
  std::mt19937_64 rng(8);
  auto a = smooth_image(rng, 3, 32, 32);
  auto r = evaluate(a, a);
  EXPECT_EQ(r.psnr, 100.0);
  EXPECT_NEAR(r.ssim, 1.0, 1e-9);
  EXPECT_NEAR(r.ms_ssim, 1.0, 1e-9);
  EXPECT_EQ(r.delta_e00, 0.0);
}
