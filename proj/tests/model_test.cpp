#include <gtest/gtest.h>

#include <random>
#include <set>

#include "delnet/complexity.hpp"
#include "delnet/model.hpp"
#include "delnet/params.hpp"

using namespace delnet;

namespace {
ArchConfig three_level() {
  ArchConfig c;
  c.stem_width = 4;
  c.eam_count = 2;
  c.eam_dilations = {1, 2};
  c.unet_levels = 3;
  c.unet_widths = {4, 8, 16};
  c.sca_per_level = 1;
  return c;
}

template <typename T>
ModelParams<T> zero_like(const ModelParams<T>& p) {
  ModelParams<T> z;
  for (const auto& [n, t] : p) z.add(n, Tensor<T>::zeros(t.shape()));
  return z;
}

// Random block parameters built from the layout helpers.
ModelParams<double> random_slots(const std::vector<ParamSlot>& slots, std::mt19937_64& rng) {
  ModelParams<double> p;
  for (const auto& s : slots) p.add(s.name, Tensor<double>::normal(s.shape, rng));
  return p;
}
}  // namespace

TEST(Forward, ShapeAndRange) {
  const auto c = three_level();
  auto p = init_params<float>(c, 1);
  // Random parameters so the clamp is exercised.
  std::mt19937_64 rng(2);
  for (auto& [n, t] : p) t = Tensor<float>::normal(t.shape(), rng);
  auto raw = Tensor<float>::uniform({1, 1, 64, 64}, rng);
  auto y = forward(raw, c, p);
  EXPECT_EQ(y.shape(), (Shape{1, 3, 64, 64}));
  for (float v : y.values()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Forward, ShapeContractOverSizes) {
  const auto c = three_level();
  const auto p = init_params<float>(c, 1);
  std::mt19937_64 rng(3);
  for (std::size_t h : {4u, 8u, 20u}) {
    for (std::size_t w : {4u, 12u}) {
      auto y = forward(Tensor<float>::uniform({1, 1, h, w}, rng), c, p);
      EXPECT_EQ(y.shape(), (Shape{1, 3, h, w}));
    }
  }
}

TEST(Forward, RejectsBadInputs) {
  const auto c = three_level();
  const auto p = init_params<float>(c, 1);
  EXPECT_THROW(forward(Tensor<float>({1, 1, 6, 8}, 0.5f), c, p), ShapeError);
  EXPECT_THROW(forward(Tensor<float>({1, 3, 8, 8}, 0.5f), c, p), ShapeError);
  EXPECT_THROW(forward(Tensor<float>({1, 1, 8, 8}, 1.5f), c, p), RangeError);
  EXPECT_THROW(forward(Tensor<float>({1, 1, 8, 8}, -0.1f), c, p), RangeError);
}

TEST(Forward, Deterministic) {
  const auto c = three_level();
  const auto p = init_params<float>(c, 9);
  std::mt19937_64 rng(4);
  auto raw = Tensor<float>::uniform({1, 1, 16, 16}, rng);
  EXPECT_EQ(forward(raw, c, p), forward(raw, c, p));
}

TEST(Params, InitIsDeterministicAndSlopesAreQuarter) {
  const auto c = three_level();
  EXPECT_EQ(init_params<float>(c, 3), init_params<float>(c, 3));
  EXPECT_FALSE(init_params<float>(c, 3) == init_params<float>(c, 4));
  for (const auto& [n, t] : init_params<float>(c, 3)) {
    if (n.size() > 6 && n.substr(n.size() - 6) == ".slope") {
      for (float v : t.values()) EXPECT_EQ(v, 0.25f) << n;
    }
    if (n.size() > 5 && n.substr(n.size() - 5) == ".bias" && n != "head.bias") {
      for (float v : t.values()) EXPECT_EQ(v, 0.0f) << n;
    }
  }
}

TEST(Params, HeScaledWeights) {
  ArchConfig c;
  const auto p = init_params<double>(c, 11);
  const auto& w = p.at("dec.0.merge.weight");  // fan-in 2 * 8
  double ss = 0;
  for (double v : w.values()) ss += v * v;
  EXPECT_NEAR(std::sqrt(ss / w.numel()), std::sqrt(2.0 / 16.0), 0.05);
}

TEST(Params, CountMatchesCounterForEveryVariant) {
  for (auto v : kAllVariants) {
    for (const auto& base : {ArchConfig{}, three_level()}) {
      const auto c = base.with_variant(v);
      EXPECT_EQ(init_params<float>(c, 1).scalar_count(), count_params(c)) << variant_name(v);
    }
  }
}

TEST(Params, NamesAreUniqueAndStable) {
  const auto c = three_level();
  const auto names = init_params<float>(c, 1).names();
  EXPECT_EQ(std::set<std::string>(names.begin(), names.end()).size(), names.size());
  EXPECT_EQ(names, init_params<float>(c, 2).names());
}

TEST(Params, UNetVariantHasNoEamOrAttentionParams) {
  const auto c = three_level().with_variant(Variant::kUNet);
  for (const auto& n : init_params<float>(c, 1).names()) {
    EXPECT_NE(n.rfind("eam.", 0), 0u) << n;
    EXPECT_EQ(n.find(".ca."), std::string::npos) << n;
    EXPECT_EQ(n.find(".sa."), std::string::npos) << n;
  }
}

TEST(Blocks, ZeroWeightScaIsIdentity) {
  std::mt19937_64 rng(5);
  std::vector<ParamSlot> slots;
  detail::block_slots(slots, "b", 6, true);
  const auto p = zero_like(random_slots(slots, rng));
  for (int trial = 0; trial < 5; ++trial) {
    Tape<double> tape;
    BoundParams<double> bound(tape, p, false);
    auto x = Tensor<double>::normal({2, 6, 8, 8}, rng, 0.0, 3.0);
    EXPECT_EQ(blocks::sca_block(tape.constant(x), bound, "b").value(), x);
  }
}

TEST(Blocks, ZeroWeightEamIsIdentity) {
  std::mt19937_64 rng(6);
  std::vector<ParamSlot> slots;
  detail::eam_slots(slots, "e", 5, {1, 2, 3});
  const auto p = zero_like(random_slots(slots, rng));
  for (int trial = 0; trial < 5; ++trial) {
    Tape<double> tape;
    BoundParams<double> bound(tape, p, false);
    auto x = Tensor<double>::normal({1, 5, 9, 7}, rng, 0.0, 3.0);
    EXPECT_EQ(blocks::eam_block(tape.constant(x), bound, "e", {1, 2, 3}).value(), x);
  }
}

TEST(Blocks, WidthMismatchThrows) {
  std::mt19937_64 rng(7);
  std::vector<ParamSlot> slots;
  detail::block_slots(slots, "b", 4, true);
  const auto p = random_slots(slots, rng);
  Tape<double> tape;
  BoundParams<double> bound(tape, p, false);
  EXPECT_THROW(blocks::sca_block(tape.constant(Tensor<double>({1, 3, 4, 4})), bound, "b"), ShapeError);
}

TEST(Blocks, ShapePreserved) {
  std::mt19937_64 rng(8);
  std::vector<ParamSlot> slots;
  detail::eam_slots(slots, "e", 3, {1, 2});
  detail::block_slots(slots, "b", 3, true);
  const auto p = random_slots(slots, rng);
  for (int trial = 0; trial < 5; ++trial) {
    Tape<double> tape;
    BoundParams<double> bound(tape, p, false);
    std::uniform_int_distribution<std::size_t> ext(3, 9);
    auto x = tape.constant(Tensor<double>::normal({1, 3, ext(rng), ext(rng)}, rng));
    EXPECT_EQ(blocks::sca_block(x, bound, "b").shape(), x.shape());
    EXPECT_EQ(blocks::eam_block(x, bound, "e", {1, 2}).shape(), x.shape());
  }
}

TEST(Blocks, EamReceptiveFieldOnImpulse) {
  // With all-positive weights, the response to a centre impulse covers the
  // union of dilated taps through the merge and the residual conv pair.
  std::vector<ParamSlot> slots;
  detail::eam_slots(slots, "e", 1, {1, 2});
  ModelParams<double> p;
  for (const auto& s : slots) {
    const bool bias = s.name.size() > 5 && s.name.substr(s.name.size() - 5) == ".bias";
    p.add(s.name, Tensor<double>(s.shape, bias ? 0.0 : 0.1));
  }
  Tape<double> tape;
  BoundParams<double> bound(tape, p, false);
  Tensor<double> x({1, 1, 21, 21});
  x.at(0, 0, 10, 10) = 1.0;
  auto y = blocks::eam_block(tape.constant(x), bound, "e", {1, 2}).value();
  std::size_t lo = 21, hi = 0;
  for (std::size_t r = 0; r < 21; ++r) {
    for (std::size_t c = 0; c < 21; ++c) {
      if (y.at(0, 0, r, c) != x.at(0, 0, r, c)) {
        lo = std::min(lo, c);
        hi = std::max(hi, c);
      }
    }
  }
  ASSERT_LE(lo, hi);
  EXPECT_GE(hi - lo + 1, 9u);
}
