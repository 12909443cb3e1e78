#pragma once

// Randomized comparison of every loss kernel against its naive reference.
// Backs `kernels selfcheck` and the kernel acceptance criterion.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "hybridmatch/loss_kernels.hpp"
#include "hybridmatch/reference.hpp"
#include "hybridmatch/rng.hpp"

namespace hm {

struct CheckResult {
  std::string name;
  int instances = 0;
  double max_error = 0.0;  // relative to max(1, |reference|)
  double tolerance = 0.0;
  bool passed = false;
};

namespace selfcheck_detail {

inline double rel_err(double got, double want) { return std::fabs(got - want) / std::max(1.0, std::fabs(want)); }

template <class T>
Tensor<T> random_tensor(SplitMix64& rng, std::vector<std::size_t> shape, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

template <class T>
reference::Vec to_vec(const Tensor<T>& t) {
  return reference::Vec(t.values().begin(), t.values().end());
}

template <class T>
FlowField<T> random_flow(SplitMix64& rng, std::size_t h, std::size_t w, double magnitude) {
  return FlowField<T>(random_tensor<T>(rng, {2, h, w}, -magnitude, magnitude));
}

template <class T>
std::vector<T> random_values(SplitMix64& rng, std::size_t n) {
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(rng.uniform(-1.0, 1.0));
  return v;
}

/// Dense linear block over the flattened tensor.
template <class T>
Block<T> dense_block(const std::vector<T>& m, std::vector<std::size_t> out_shape) {
  return [m, out_shape](const Tensor<T>& x) {
    Tensor<T> y(out_shape);
    const std::size_t n_in = x.size();
    for (std::size_t r = 0; r < y.size(); ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < n_in; ++c) s += static_cast<double>(m[r * n_in + c]) * x[c];
      y[r] = static_cast<T>(s);
    }
    return y;
  };
}

class Tracker {
 public:
  Tracker(std::string name, double tol) { r_.name = std::move(name), r_.tolerance = tol; }
  void observe(double got, double want) { r_.max_error = std::max(r_.max_error, rel_err(got, want)); }
  void fail() { failed_ = true; }
  void next() { ++r_.instances; }
  CheckResult done() {
    r_.passed = !failed_ && r_.max_error <= r_.tolerance;
    return r_;
  }

 private:
  CheckResult r_;
  bool failed_ = false;
};

}  // namespace selfcheck_detail

/// Runs each kernel on `instances` seeded random problems and compares it to
/// the reference. Tolerances are relative to max(1, |reference|).
template <class T = float>
std::vector<CheckResult> run_kernel_selfcheck(std::uint64_t seed = 0, int instances = 100) {
  using namespace selfcheck_detail;
  SplitMix64 rng(seed);
  std::vector<CheckResult> results;
  const double tight = std::is_same_v<T, float> ? 1e-6 : 1e-9;

  {
    Tracker tr("cgan_iou_loss", 1e-6);
    for (int i = 0; i < instances; ++i, tr.next()) {
      const std::size_t h = 2 + rng.below(6), w = 2 + rng.below(6);
      auto real = random_tensor<T>(rng, {1, h, w}, 0.0, 1.0);
      auto fake = random_tensor<T>(rng, {1, h, w}, 0.0, 1.0);
      auto pred = random_tensor<T>(rng, {1, h, w}, 0.0, 1.0);
      auto gt = random_tensor<T>(rng, {1, h, w}, 0.0, 1.0);
      for (auto& v : gt.values()) v = v > T(0.5) ? T(1) : T(0);
      const T lambda = static_cast<T>(rng.uniform(0.0, 5.0));
      const auto got = cgan_iou_loss(real, fake, pred, gt, lambda);
      const double c = reference::cgan_value(to_vec(real), to_vec(fake));
      const double iou = reference::soft_iou_loss(to_vec(pred), to_vec(gt));
      tr.observe(got.l_cgan, c);
      tr.observe(got.l_iou, iou);
      tr.observe(got.combined, c + static_cast<double>(lambda) * iou);
    }
    results.push_back(tr.done());
  }
  {
    Tracker tr("concat_condition", 0.0);
    for (int i = 0; i < instances; ++i, tr.next()) {
      const std::size_t c1 = 1 + rng.below(4), c2 = 1 + rng.below(4), h = 1 + rng.below(5), w = 1 + rng.below(5);
      auto a = random_tensor<T>(rng, {c1, h, w});
      auto b = random_tensor<T>(rng, {c2, h, w});
      const auto out = concat_condition(a, b);
      if (out.shape() != std::vector<std::size_t>{c1 + c2, h, w}) tr.fail();
      for (std::size_t ch = 0; ch < c1 + c2; ++ch)
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x) {
            const T want = ch < c1 ? a.at(ch, y, x) : b.at(ch - c1, y, x);
            if (std::memcmp(&want, &out.at(ch, y, x), sizeof(T)) != 0) tr.fail();
          }
    }
    results.push_back(tr.done());
  }
  {
    Tracker tr("control_forward", tight);
    Tracker zero("control_forward_zero_init_bitwise", 0.0);
    for (int i = 0; i < instances; ++i, tr.next(), zero.next()) {
      const std::size_t cx = 1 + rng.below(3), ce = 1 + rng.below(4), co = 1 + rng.below(3);
      const std::size_t h = 1 + rng.below(3), w = 1 + rng.below(3), hw = h * w;
      auto x = random_tensor<T>(rng, {cx, h, w});
      auto ec = random_tensor<T>(rng, {ce, h, w});
      const auto m_base = random_values<T>(rng, co * hw * cx * hw);
      const auto m_clone = random_values<T>(rng, co * hw * cx * hw);
      ControlAssembly<T> asm_{dense_block<T>(m_base, {co, h, w}), dense_block<T>(m_clone, {co, h, w}),
                              ZeroConv<T>{ce, cx, random_values<T>(rng, cx * ce), random_values<T>(rng, cx)},
                              ZeroConv<T>{co, co, random_values<T>(rng, co * co), random_values<T>(rng, co)}};
      const auto got = control_forward(x, ec, asm_);
      const auto d = [](const std::vector<T>& v) { return reference::Vec(v.begin(), v.end()); };
      const auto want = reference::control_forward_dense(
          to_vec(x), to_vec(ec), cx, ce, hw, d(m_base), d(m_clone), co, d(asm_.zero_conv_1.weight),
          d(asm_.zero_conv_1.bias), d(asm_.zero_conv_2.weight), d(asm_.zero_conv_2.bias));
      for (std::size_t k = 0; k < want.size(); ++k) tr.observe(got[k], want[k]);

      // Zero-initialized output convolution: the control branch is inert.
      asm_.zero_conv_2 = ZeroConv<T>::zeros(co, co);
      const auto inert = control_forward(x, ec, asm_);
      const auto base = asm_.base_block(x);
      if (inert.size() != base.size() ||
          std::memcmp(inert.values().data(), base.values().data(), base.size() * sizeof(T)) != 0)
        zero.fail();
    }
    results.push_back(tr.done());
    results.push_back(zero.done());
  }
  const auto sched = DiffusionSchedule::linear();
  {
    Tracker tr("forward_noise", tight);
    for (int i = 0; i < instances; ++i, tr.next()) {
      const int t = 1 + static_cast<int>(rng.below(1000));
      auto x0 = random_tensor<T>(rng, {1 + rng.below(3), 1 + rng.below(4), 1 + rng.below(4)});
      auto eps = random_tensor<T>(rng, x0.shape(), -3.0, 3.0);
      const auto got = forward_noise(x0, t, eps, sched);
      const double ab = reference::alpha_bar(t);
      for (std::size_t k = 0; k < got.size(); ++k)
        tr.observe(got[k], std::sqrt(ab) * static_cast<double>(x0[k]) + std::sqrt(1 - ab) * static_cast<double>(eps[k]));
    }
    results.push_back(tr.done());
  }
  {
    // Sample variance of sqrt(1 - ab) eps over 10^4 draws, relative to 1 - ab.
    Tracker tr("forward_noise_variance", 0.05);
    for (int t : {10, 250, 500, 1000}) {
      const int draws = 10000;
      Tensor<T> zero_x0({draws});
      Tensor<T> eps({draws});
      for (auto& v : eps.values()) v = static_cast<T>(rng.gaussian());
      const auto out = forward_noise(zero_x0, t, eps, sched);
      double mean = 0, sq = 0;
      for (T v : out.values()) mean += v;
      mean /= draws;
      for (T v : out.values()) sq += (v - mean) * (v - mean);
      const double var = sq / (draws - 1);
      const double want = 1 - sched.alpha_bar(t);
      tr.observe(var / want, 1.0);
      tr.next();
    }
    results.push_back(tr.done());
  }
  {
    Tracker tr("denoising_loss", tight);
    for (int i = 0; i < instances; ++i, tr.next()) {
      auto eps = random_tensor<T>(rng, {1 + rng.below(4), 1 + rng.below(6), 1 + rng.below(6)}, -3.0, 3.0);
      auto pred = random_tensor<T>(rng, eps.shape(), -3.0, 3.0);
      tr.observe(denoising_loss(eps, pred), reference::mse(to_vec(eps), to_vec(pred)));
    }
    results.push_back(tr.done());
  }
  {
    Tracker tr("tv_loss", tight);
    for (int i = 0; i < instances; ++i, tr.next()) {
      const std::size_t h = 2 + rng.below(7), w = 2 + rng.below(7);
      const auto flow = random_flow<T>(rng, h, w, 2.0);
      tr.observe(tv_loss(flow), reference::tv(to_vec(flow.tensor()), h, w));
    }
    results.push_back(tr.done());
  }
  {
    Tracker tr("warp", 1e-5);
    for (int i = 0; i < instances; ++i, tr.next()) {
      const std::size_t c = 1 + rng.below(3), h = 2 + rng.below(6), w = 2 + rng.below(6);
      auto src = random_tensor<T>(rng, {c, h, w});
      const auto flow = random_flow<T>(rng, h, w, 1.5);
      const auto got = warp(src, flow);
      reference::Vec mask;
      const auto want = reference::warp(to_vec(src), c, h, w, to_vec(flow.tensor()), &mask);
      for (std::size_t k = 0; k < want.size(); ++k) tr.observe(got.warped[k], want[k]);
      for (std::size_t k = 0; k < mask.size(); ++k)
        if (static_cast<double>(got.overlap_mask[k]) != mask[k]) tr.fail();
    }
    results.push_back(tr.done());
  }
  {
    Tracker tr("l1_warp_loss", 1e-5);
    for (int i = 0; i < instances; ++i, tr.next()) {
      const std::size_t h = 2 + rng.below(6), w = 2 + rng.below(6);
      auto cloth = random_tensor<T>(rng, {1, h, w}, 0.0, 1.0);
      auto target = random_tensor<T>(rng, {1, h, w}, 0.0, 1.0);
      auto fused = random_tensor<T>(rng, {1, h, w}, 0.0, 1.0);
      std::array<FlowField<T>, kPyramidLevels> flows{random_flow<T>(rng, h, w, 1.5), random_flow<T>(rng, h, w, 1.5),
                                                     random_flow<T>(rng, h, w, 1.5), random_flow<T>(rng, h, w, 1.5)};
      std::array<T, kPyramidLevels> weights{};
      for (auto& v : weights) v = static_cast<T>(rng.uniform(0.0, 2.0));
      double want = reference::l1_sum(to_vec(fused), to_vec(target));
      for (std::size_t l = 0; l < kPyramidLevels; ++l)
        want += static_cast<double>(weights[l]) *
                reference::l1_sum(reference::warp(to_vec(cloth), 1, h, w, to_vec(flows[l].tensor())), to_vec(target));
      tr.observe(l1_warp_loss(cloth, flows, target, fused, weights), want);
    }
    results.push_back(tr.done());
  }
  {
    Tracker tr("perceptual_loss", 1e-5);
    const auto extractor = pyramid_extractor<T>();
    for (int i = 0; i < instances; ++i, tr.next()) {
      const std::size_t c = 1 + rng.below(3), h = 4 + rng.below(6), w = 4 + rng.below(6);
      auto cloth = random_tensor<T>(rng, {c, h, w}, 0.0, 1.0);
      auto target = random_tensor<T>(rng, {c, h, w}, 0.0, 1.0);
      auto fused = random_tensor<T>(rng, {c, h, w}, 0.0, 1.0);
      std::array<FlowField<T>, kPyramidLevels> flows{random_flow<T>(rng, h, w, 1.5), random_flow<T>(rng, h, w, 1.5),
                                                     random_flow<T>(rng, h, w, 1.5), random_flow<T>(rng, h, w, 1.5)};
      std::array<T, kPyramidLevels> weights{};
      for (auto& v : weights) v = static_cast<T>(rng.uniform(0.0, 2.0));
      double want = reference::pyramid_phi(to_vec(fused), to_vec(target), c, h, w);
      for (std::size_t l = 0; l < kPyramidLevels; ++l)
        want += static_cast<double>(weights[l]) *
                reference::pyramid_phi(reference::warp(to_vec(cloth), c, h, w, to_vec(flows[l].tensor())),
                                       to_vec(target), c, h, w);
      tr.observe(perceptual_loss(cloth, target, fused, extractor, flows, weights), want);
    }
    results.push_back(tr.done());
  }
  {
    Tracker tr("condition_generator_loss", tight);
    for (int i = 0; i < instances; ++i, tr.next()) {
      const double l1 = rng.uniform(0, 10), vgg = rng.uniform(0, 10), tv = rng.uniform(0, 10);
      const double a = rng.uniform(0, 5), b = rng.uniform(0, 5);
      const T got = condition_generator_loss<T>(static_cast<T>(l1), static_cast<T>(vgg), static_cast<T>(tv),
                                                static_cast<T>(a), static_cast<T>(b));
      // Reference on the same rounded inputs.
      const double want = static_cast<double>(static_cast<T>(a)) * static_cast<T>(l1) + static_cast<T>(vgg) +
                          static_cast<double>(static_cast<T>(b)) * static_cast<T>(tv);
      tr.observe(got, want);
    }
    results.push_back(tr.done());
  }
  return results;
}

}  // namespace hm
