#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <functional>

#include "hybridmatch/loss_kernels.hpp"
#include "hybridmatch/reference.hpp"
#include "hybridmatch/rng.hpp"
#include "hybridmatch/selfcheck.hpp"

namespace hm {
namespace {

using T3 = Tensor<float>;

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no hm::Error thrown";
  return ErrorKind::InvalidArgument;
}

T3 random_tensor(SplitMix64& rng, std::vector<std::size_t> shape, double lo = -1, double hi = 1) {
  T3 t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

std::array<FlowField<float>, kPyramidLevels> zero_flows(std::size_t h, std::size_t w) {
  return {FlowField<float>(h, w), FlowField<float>(h, w), FlowField<float>(h, w), FlowField<float>(h, w)};
}

TEST(CganIou, HalfProbabilities) {
  const T3 half({1, 3, 3}, 0.5f);
  const T3 mask({1, 3, 3}, 1.0f);
  const auto l = cgan_iou_loss(half, half, mask, mask, 1.0f);
  EXPECT_NEAR(l.l_cgan, -1.386294, 1e-6);
  EXPECT_NEAR(l.l_iou, 0.0, 1e-5);
  EXPECT_NEAR(l.combined, l.l_cgan + l.l_iou, 1e-7);
}

TEST(CganIou, DisjointAndHalfOverlap) {
  const T3 prob({1, 1, 1}, 0.5f);
  T3 a({1, 4, 4}), b({1, 4, 4});
  a.at(0, 0, 0) = 1;
  b.at(0, 3, 3) = 1;
  EXPECT_NEAR(cgan_iou_loss(prob, prob, a, b, 1.0f).l_iou, 1.0, 1e-5);

  // 2x2 squares shifted by one column: intersection 2, union 6.
  T3 p({1, 4, 4}), g({1, 4, 4});
  for (std::size_t y = 0; y < 2; ++y) {
    p.at(0, y, 0) = p.at(0, y, 1) = 1;
    g.at(0, y, 1) = g.at(0, y, 2) = 1;
  }
  EXPECT_NEAR(cgan_iou_loss(prob, prob, p, g, 1.0f).l_iou, 1.0 - 1.0 / 3.0, 1e-5);
}

TEST(CganIou, ValueFunctionNonPositiveAndMaskShapes) {
  SplitMix64 rng(1);
  for (int i = 0; i < 50; ++i) {
    const auto real = random_tensor(rng, {1, 3, 3}, 0, 1);
    const auto fake = random_tensor(rng, {1, 3, 3}, 0, 1);
    const auto m = random_tensor(rng, {1, 3, 3}, 0, 1);
    const auto l = cgan_iou_loss(real, fake, m, m, 0.5f);
    EXPECT_LE(l.l_cgan, 0.0f);
    EXPECT_GE(l.l_iou, 0.0f);
  }
  const T3 a({1, 2, 2}), b({1, 3, 2});
  EXPECT_EQ(kind_of([&] { cgan_iou_loss(a, a, a, b, 1.0f); }), ErrorKind::ShapeMismatch);
}

TEST(Concat, BlockLayoutAndInverse) {
  const T3 q({1, 2, 2}, std::vector<float>{1, 2, 3, 4});
  const T3 m({1, 2, 2}, std::vector<float>{5, 6, 7, 8});
  const auto out = concat_condition(q, m);
  EXPECT_EQ(out.shape(), (std::vector<std::size_t>{2, 2, 2}));
  EXPECT_EQ(std::vector<float>(out.values().begin(), out.values().end()),
            (std::vector<float>{1, 2, 3, 4, 5, 6, 7, 8}));
}

TEST(Concat, ControlInputShape) {
  const T3 q({128, 64, 64}, 0.25f);
  const T3 m({128, 64, 64}, -0.5f);
  const auto out = concat_condition(q, m);
  EXPECT_EQ(out.shape(), (std::vector<std::size_t>{256, 64, 64}));
  const std::size_t half = q.size();
  for (std::size_t i = 0; i < out.size(); ++i) ASSERT_EQ(out[i], i < half ? 0.25f : -0.5f);
}

TEST(Concat, SpatialMismatch) {
  EXPECT_EQ(kind_of([] { concat_condition(T3({1, 2, 2}), T3({1, 2, 3})); }), ErrorKind::ShapeMismatch);
}

// A dense linear block y = M x over the flattened tensor.
Block<float> linear_block(const std::vector<float>& m, std::vector<std::size_t> shape) {
  return [m, shape](const T3& x) {
    const std::size_t n = x.size();
    T3 out(shape);
    for (std::size_t r = 0; r < out.size(); ++r) {
      float acc = 0;
      for (std::size_t c = 0; c < n; ++c) acc += m[r * n + c] * x[c];
      out[r] = acc;
    }
    return out;
  };
}

TEST(ControlForward, ZeroInitIsBaseBitwise) {
  SplitMix64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const std::vector<std::size_t> shape{2, 2, 2};
    const auto x = random_tensor(rng, shape);
    const auto ec = random_tensor(rng, {4, 2, 2});
    std::vector<float> mb(64), mc(64);
    for (auto& v : mb) v = static_cast<float>(rng.uniform(-1, 1));
    for (auto& v : mc) v = static_cast<float>(rng.uniform(-1, 1));
    ControlAssembly<float> a{linear_block(mb, shape), linear_block(mc, shape), ZeroConv<float>::zeros(4, 2),
                             ZeroConv<float>::zeros(2, 2)};
    for (auto& v : a.zero_conv_1.weight) v = static_cast<float>(rng.uniform(-1, 1));
    EXPECT_EQ(control_forward(x, ec, a), a.base_block(x));
  }
}

TEST(ControlForward, ZeroFirstConvWithSharedBlock) {
  SplitMix64 rng(3);
  const std::vector<std::size_t> shape{2, 2, 2};
  const auto x = random_tensor(rng, shape);
  const auto ec = random_tensor(rng, {4, 2, 2});
  std::vector<float> mb(64);
  for (auto& v : mb) v = static_cast<float>(rng.uniform(-1, 1));
  auto z2 = ZeroConv<float>::zeros(2, 2);
  for (auto& v : z2.weight) v = static_cast<float>(rng.uniform(-1, 1));
  for (auto& v : z2.bias) v = static_cast<float>(rng.uniform(-1, 1));
  const ControlAssembly<float> a{linear_block(mb, shape), linear_block(mb, shape), ZeroConv<float>::zeros(4, 2), z2};
  const auto fx = a.base_block(x);
  const auto want = add(fx, z2(fx));
  const auto got = control_forward(x, ec, a);
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_FLOAT_EQ(got[i], want[i]);
}

TEST(ControlForward, MatchesDenseOracle) {
  SplitMix64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t cx = 1 + rng.below(3), ce = 1 + rng.below(4), h = 1 + rng.below(3), w = 1 + rng.below(3);
    const std::size_t n = cx * h * w;
    const std::vector<std::size_t> shape{cx, h, w};
    const auto x = random_tensor(rng, shape);
    const auto ec = random_tensor(rng, {ce, h, w});
    std::vector<float> mb(n * n), mc(n * n);
    for (auto& v : mb) v = static_cast<float>(rng.uniform(-1, 1));
    for (auto& v : mc) v = static_cast<float>(rng.uniform(-1, 1));
    auto z1 = ZeroConv<float>::zeros(ce, cx);
    auto z2 = ZeroConv<float>::zeros(cx, cx);
    for (auto* v : {&z1.weight, &z1.bias, &z2.weight, &z2.bias})
      for (auto& e : *v) e = static_cast<float>(rng.uniform(-1, 1));
    const ControlAssembly<float> a{linear_block(mb, shape), linear_block(mc, shape), z1, z2};
    const auto got = control_forward(x, ec, a);

    auto vec = [](auto const& src) { return reference::Vec(src.begin(), src.end()); };
    const auto want = reference::control_forward_dense(vec(x.values()), vec(ec.values()), cx, ce, h * w, vec(mb),
                                                       vec(mc), cx, vec(z1.weight), vec(z1.bias), vec(z2.weight),
                                                       vec(z2.bias));
    for (std::size_t i = 0; i < got.size(); ++i)
      ASSERT_NEAR(got[i], want[i], 1e-6 * std::max(1.0, std::abs(want[i])));
  }
}

TEST(Schedule, LinearBetasAndDecreasingAlphaBar) {
  const auto s = DiffusionSchedule::linear();
  ASSERT_EQ(s.steps, 1000);
  EXPECT_DOUBLE_EQ(s.betas.front(), 1e-4);
  EXPECT_DOUBLE_EQ(s.betas.back(), 0.02);
  for (std::size_t i = 1; i < s.alpha_bars.size(); ++i) ASSERT_LT(s.alpha_bars[i], s.alpha_bars[i - 1]);
  for (int t : {1, 10, 500, 1000}) EXPECT_NEAR(s.alpha_bar(t), reference::alpha_bar(t), 1e-12);
  EXPECT_EQ(kind_of([&] { s.alpha_bar(0); }), ErrorKind::BadTimestep);
  EXPECT_EQ(kind_of([&] { s.alpha_bar(1001); }), ErrorKind::BadTimestep);
}

TEST(ForwardNoise, LimitsAndZeroNoise) {
  SplitMix64 rng(5);
  const auto s = DiffusionSchedule::linear();
  const auto x0 = random_tensor(rng, {2, 3, 3});
  const auto eps = random_tensor(rng, {2, 3, 3});
  const auto out = forward_noise(x0, 1, eps, s);
  double eps_max = 0;
  for (float e : eps.values()) eps_max = std::max(eps_max, static_cast<double>(std::abs(e)));
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_LT(std::abs(out[i] - x0[i]), 0.02 * eps_max + 1e-4);

  const T3 zero(x0.shape());
  const auto clean = forward_noise(x0, 700, zero, s);
  const float a = static_cast<float>(std::sqrt(s.alpha_bar(700)));
  for (std::size_t i = 0; i < clean.size(); ++i) EXPECT_FLOAT_EQ(clean[i], a * x0[i]);
  EXPECT_EQ(kind_of([&] { forward_noise(x0, 0, eps, s); }), ErrorKind::BadTimestep);
}

TEST(ForwardNoise, MonteCarloVariance) {
  SplitMix64 rng(6);
  const auto s = DiffusionSchedule::linear();
  for (int t : {5, 100, 400, 1000}) {
    const T3 x0({1, 1, 10000});
    T3 eps({1, 1, 10000});
    for (auto& v : eps.values()) v = static_cast<float>(rng.gaussian());
    const auto out = forward_noise(x0, t, eps, s);
    double mean = 0, sq = 0;
    for (float v : out.values()) mean += v;
    mean /= 10000.0;
    for (float v : out.values()) sq += (v - mean) * (v - mean);
    const double var = sq / 9999.0;
    EXPECT_NEAR(var / (1.0 - s.alpha_bar(t)), 1.0, 0.05) << "t=" << t;
  }
}

TEST(Denoising, ValuesAndGradient) {
  const T3 eps({1, 2, 2});
  const T3 ones({1, 2, 2}, 1.0f);
  EXPECT_EQ(denoising_loss(eps, eps), 0.0f);
  EXPECT_FLOAT_EQ(denoising_loss(eps, ones), 1.0f);

  SplitMix64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor<double> e({2, 3, 2}), p({2, 3, 2});
    for (auto& v : e.values()) v = rng.uniform(-1, 1);
    for (auto& v : p.values()) v = rng.uniform(-1, 1);
    const auto g = denoising_loss_grad(e, p);
    for (std::size_t i = 0; i < p.size(); ++i) {
      auto up = p, down = p;
      up[i] += 1e-5;
      down[i] -= 1e-5;
      const double fd = (denoising_loss(e, up) - denoising_loss(e, down)) / 2e-5;
      EXPECT_NEAR(g[i], fd, 1e-5);
      EXPECT_NEAR(g[i], 2.0 * (p[i] - e[i]) / static_cast<double>(p.size()), 1e-15);
    }
  }
}

TEST(TotalVariation, Examples) {
  FlowField<float> f(2, 2);
  EXPECT_EQ(tv_loss(f), 0.0f);
  f.dx(0, 1) = 1;
  f.dx(1, 1) = 1;
  EXPECT_FLOAT_EQ(tv_loss(f), 2.0f);
  EXPECT_EQ(kind_of([] { tv_loss(FlowField<float>(1, 5)); }), ErrorKind::DegenerateGrid);
}

TEST(TotalVariation, OracleAndTranslationInvariance) {
  SplitMix64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    FlowField<double> f(8, 8);
    for (auto& v : f.tensor().values()) v = rng.uniform(-3, 3);
    const reference::Vec flat(f.tensor().values().begin(), f.tensor().values().end());
    EXPECT_NEAR(tv_loss(f), reference::tv(flat, 8, 8), 1e-9);
    auto shifted = f;
    const double c = rng.uniform(-5, 5);
    for (auto& v : shifted.tensor().values()) v += c;
    EXPECT_NEAR(tv_loss(shifted), tv_loss(f), 1e-9);
  }
}

TEST(Warp, ZeroFlowIsIdentity) {
  SplitMix64 rng(9);
  const auto src = random_tensor(rng, {3, 4, 5});
  const auto r = warp(src, FlowField<float>(4, 5));
  EXPECT_EQ(r.warped, src);
  for (float m : r.overlap_mask.values()) EXPECT_EQ(m, 1.0f);
}

TEST(Warp, IntegerShift) {
  const T3 row({1, 1, 4}, std::vector<float>{10, 20, 30, 40});
  FlowField<float> f(1, 4);
  for (std::size_t x = 0; x < 4; ++x) f.dx(0, x) = 1;
  const auto r = warp(row, f);
  EXPECT_EQ(std::vector<float>(r.warped.values().begin(), r.warped.values().end()),
            (std::vector<float>{20, 30, 40, 0}));
  EXPECT_EQ(std::vector<float>(r.overlap_mask.values().begin(), r.overlap_mask.values().end()),
            (std::vector<float>{1, 1, 1, 0}));
}

TEST(Warp, SubPixelMatchesOracle) {
  SplitMix64 rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t c = 1 + rng.below(3), h = 2 + rng.below(5), w = 2 + rng.below(5);
    const auto src = random_tensor(rng, {c, h, w});
    const FlowField<float> flow(random_tensor(rng, {2, h, w}, -1.5, 1.5));
    const auto r = warp(src, flow);
    reference::Vec mask;
    const auto want = reference::warp(reference::Vec(src.values().begin(), src.values().end()), c, h, w,
                                      reference::Vec(flow.tensor().values().begin(), flow.tensor().values().end()),
                                      &mask);
    for (std::size_t i = 0; i < want.size(); ++i) ASSERT_NEAR(r.warped[i], want[i], 1e-5);
    for (std::size_t i = 0; i < mask.size(); ++i) ASSERT_EQ(r.overlap_mask[i], mask[i]);
  }
}

TEST(Warp, OverlapShrinksWithLargerShifts) {
  const T3 src({1, 6, 6}, 1.0f);
  double previous = 1e9;
  for (int shift = 0; shift <= 7; ++shift) {
    FlowField<float> f(6, 6);
    for (std::size_t y = 0; y < 6; ++y)
      for (std::size_t x = 0; x < 6; ++x) {
        f.dx(y, x) = static_cast<float>(shift);
        f.dy(y, x) = static_cast<float>(-shift) / 2;
      }
    double total = 0;
    const auto r = warp(src, f);
    for (float m : r.overlap_mask.values()) total += m;
    EXPECT_LE(total, previous);
    previous = total;
  }
  EXPECT_EQ(previous, 0.0);
}

TEST(L1Warp, ZeroCase) {
  SplitMix64 rng(11);
  const auto m = random_tensor(rng, {1, 4, 4}, 0, 1);
  EXPECT_EQ(l1_warp_loss(m, zero_flows(4, 4), m, m, {1.0f, 0.5f, 0.25f, 0.125f}), 0.0f);
}

TEST(L1Warp, SingleShiftTerm) {
  const T3 cloth({1, 1, 4}, std::vector<float>{1, 2, 3, 4});
  const T3 target({1, 1, 4}, std::vector<float>{0, 0, 0, 0});
  auto flows = zero_flows(1, 4);
  for (std::size_t x = 0; x < 4; ++x) flows[0].dx(0, x) = 1;
  // Warped [2,3,4,0] against zeros: 9. Fused == target adds nothing.
  EXPECT_FLOAT_EQ(l1_warp_loss(cloth, flows, target, target, {1.0f, 0.0f, 0.0f, 0.0f}), 9.0f);
  EXPECT_FLOAT_EQ(l1_warp_loss(cloth, flows, target, cloth, {1.0f, 0.0f, 0.0f, 0.0f}), 19.0f);
}

TEST(Perceptual, IdenticalImagesAndConstantShift) {
  SplitMix64 rng(12);
  const auto img = random_tensor(rng, {2, 8, 8}, 0, 1);
  const auto ext = pyramid_extractor<float>();
  const std::array<float, kPyramidLevels> w{1, 1, 1, 1};
  EXPECT_EQ(perceptual_loss(img, img, img, ext, zero_flows(8, 8), w), 0.0f);

  const T3 a({1, 8, 8}, 0.2f), b({1, 8, 8}, 0.2f + 0.1f);
  // Three levels, each contributing delta, for the fused term only.
  EXPECT_NEAR(perceptual_loss(b, b, a, ext, zero_flows(8, 8), w), 3 * 0.1, 1e-6);
}

TEST(Perceptual, IdentityExtractorReducesToMeanL1) {
  SplitMix64 rng(13);
  const FeatureExtractor<float> identity = [](const T3& x) { return std::vector<T3>{x}; };
  for (int trial = 0; trial < 20; ++trial) {
    const auto cloth = random_tensor(rng, {1, 5, 5});
    const auto target = random_tensor(rng, {1, 5, 5});
    const auto fused = random_tensor(rng, {1, 5, 5});
    std::array<FlowField<float>, kPyramidLevels> flows{FlowField<float>(random_tensor(rng, {2, 5, 5})),
                                                       FlowField<float>(random_tensor(rng, {2, 5, 5})),
                                                       FlowField<float>(random_tensor(rng, {2, 5, 5})),
                                                       FlowField<float>(random_tensor(rng, {2, 5, 5}))};
    const std::array<float, kPyramidLevels> w{0.4f, 0.3f, 0.2f, 0.1f};
    const double l1 = l1_warp_loss(cloth, flows, target, fused, w);
    EXPECT_NEAR(perceptual_loss(cloth, target, fused, identity, flows, w), l1 / 25.0, 1e-5);
  }
}

TEST(ConditionGenerator, Arithmetic) {
  EXPECT_EQ(condition_generator_loss(1.0f, 1.0f, 1.0f, 1.0f, 1.0f), 3.0f);
  EXPECT_EQ(condition_generator_loss(5.0f, 2.5f, 7.0f, 0.0f, 0.0f), 2.5f);
  SplitMix64 rng(14);
  for (int i = 0; i < 50; ++i) {
    const double l1 = rng.uniform(0, 5), vgg = rng.uniform(0, 5), tv = rng.uniform(0, 5);
    const double a = rng.uniform(0, 2), b = rng.uniform(0, 2);
    EXPECT_NEAR(condition_generator_loss(l1, vgg, tv, a, b), a * l1 + vgg + b * tv, 1e-12);
  }
}

TEST(SelfCheck, EveryKernelPasses) {
  const auto results = run_kernel_selfcheck<float>(3, 100);
  EXPECT_GE(results.size(), 10u);
  for (const auto& r : results) EXPECT_TRUE(r.passed) << r.name << " err=" << r.max_error;
}

}  // namespace
}  // namespace hm
