#pragma once

// Reference kernels for the generative and try-on training objectives: mask
// GAN + IoU, control-input concatenation, zero-convolution control injection,
// DDPM forward noising and denoising loss, and the try-on condition losses
// (flow TV, masked L1 warp, multi-level perceptual, weighted combination).
// All reductions accumulate in double.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <vector>

#include "hybridmatch/error.hpp"
#include "hybridmatch/tensor.hpp"

namespace hm {

template <class T>
struct CganIouLoss {
  T l_cgan{};
  T l_iou{};
  T combined{};
};

inline constexpr double kProbClamp = 1e-7;
inline constexpr double kIouEpsilon = 1e-6;

/// l_cgan = mean ln D(real) + mean ln(1 - D(fake)), probabilities clamped to
/// [1e-7, 1 - 1e-7]; l_iou = 1 - (sum min + eps) / (sum max + eps);
/// combined = l_cgan + lambda * l_iou.
template <class T>
CganIouLoss<T> cgan_iou_loss(const Tensor<T>& d_real, const Tensor<T>& d_fake, const Tensor<T>& mask_pred,
                             const Tensor<T>& mask_gt, T lambda) {
  require_same_shape(mask_pred, mask_gt, "cgan_iou_loss masks");
  auto clamp = [](T p) { return std::clamp<double>(p, kProbClamp, 1.0 - kProbClamp); };
  double real = 0.0, fake = 0.0;
  for (T p : d_real.values()) real += std::log(clamp(p));
  for (T p : d_fake.values()) fake += std::log(1.0 - clamp(p));
  double inter = 0.0, uni = 0.0;
  for (std::size_t i = 0; i < mask_pred.size(); ++i) {
    inter += std::min<double>(mask_pred[i], mask_gt[i]);
    uni += std::max<double>(mask_pred[i], mask_gt[i]);
  }
  CganIouLoss<T> out;
  const double cgan = real / static_cast<double>(d_real.size()) + fake / static_cast<double>(d_fake.size());
  const double iou = 1.0 - (inter + kIouEpsilon) / (uni + kIouEpsilon);
  out.l_cgan = static_cast<T>(cgan);
  out.l_iou = static_cast<T>(iou);
  out.combined = static_cast<T>(cgan + static_cast<double>(lambda) * iou);
  return out;
}

/// Channel-axis concatenation, query channels first.
template <class T>
Tensor<T> concat_condition(const Tensor<T>& e_query, const Tensor<T>& e_mask) {
  require_rank3(e_query, "concat_condition query");
  require_rank3(e_mask, "concat_condition mask");
  if (e_query.dim(1) != e_mask.dim(1) || e_query.dim(2) != e_mask.dim(2))
    throw Error(ErrorKind::ShapeMismatch, "concat_condition: spatial sizes differ");
  Tensor<T> out({e_query.dim(0) + e_mask.dim(0), e_query.dim(1), e_query.dim(2)});
  std::copy(e_query.values().begin(), e_query.values().end(), out.values().begin());
  std::copy(e_mask.values().begin(), e_mask.values().end(),
            out.values().begin() + static_cast<std::ptrdiff_t>(e_query.size()));
  return out;
}

/// 1x1 convolution: out[o] = sum_i weight[o][i] * in[i] + bias[o], per pixel.
template <class T>
struct ZeroConv {
  std::size_t c_in = 0;
  std::size_t c_out = 0;
  std::vector<T> weight;  // c_out x c_in
  std::vector<T> bias;    // c_out

  /// Weight and bias initialized to zero.
  static ZeroConv zeros(std::size_t c_in, std::size_t c_out) {
    return {c_in, c_out, std::vector<T>(c_in * c_out, T{}), std::vector<T>(c_out, T{})};
  }

  Tensor<T> operator()(const Tensor<T>& in) const {
    require_rank3(in, "zero conv input");
    if (in.dim(0) != c_in || weight.size() != c_in * c_out || bias.size() != c_out)
      throw Error(ErrorKind::ShapeMismatch, "zero conv channel mismatch");
    const std::size_t hw = in.dim(1) * in.dim(2);
    Tensor<T> out({c_out, in.dim(1), in.dim(2)});
    for (std::size_t o = 0; o < c_out; ++o) {
      for (std::size_t p = 0; p < hw; ++p) {
        T acc = bias[o];
        for (std::size_t i = 0; i < c_in; ++i) acc += weight[o * c_in + i] * in[i * hw + p];
        out[o * hw + p] = acc;
      }
    }
    return out;
  }
};

template <class T>
using Block = std::function<Tensor<T>(const Tensor<T>&)>;

/// Locked base block, its trainable clone, and the two zero convolutions.
template <class T>
struct ControlAssembly {
  Block<T> base_block;
  Block<T> clone_block;
  ZeroConv<T> zero_conv_1;  // condition channels -> x channels
  ZeroConv<T> zero_conv_2;  // clone output channels -> base output channels
};

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  Tensor<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

/// F(x; base) + Z(F(x + Z(e_c; z1); clone); z2).
template <class T>
Tensor<T> control_forward(const Tensor<T>& x, const Tensor<T>& e_c, const ControlAssembly<T>& asm_) {
  const Tensor<T> base = asm_.base_block(x);
  const Tensor<T> injected = asm_.zero_conv_1(e_c);
  require_same_shape(x, injected, "control_forward x vs Z(e_c)");
  const Tensor<T> control = asm_.zero_conv_2(asm_.clone_block(add(x, injected)));
  return add(base, control);
}

/// Linear beta schedule; alpha_bar_t = prod_{s<=t} (1 - beta_s). Index t is 1-based.
struct DiffusionSchedule {
  int steps = 0;
  std::vector<double> betas;
  std::vector<double> alpha_bars;

  static DiffusionSchedule linear(int steps = 1000, double beta_start = 1e-4, double beta_end = 0.02) {
    if (steps < 1) throw Error(ErrorKind::InvalidArgument, "schedule needs at least one step");
    if (!(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end))
      throw Error(ErrorKind::InvalidArgument, "betas must satisfy 0 < start <= end < 1");
    DiffusionSchedule s;
    s.steps = steps;
    s.betas.resize(static_cast<std::size_t>(steps));
    s.alpha_bars.resize(static_cast<std::size_t>(steps));
    double prod = 1.0;
    for (int i = 0; i < steps; ++i) {
      const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
      s.betas[static_cast<std::size_t>(i)] = beta_start + (beta_end - beta_start) * frac;
      prod *= 1.0 - s.betas[static_cast<std::size_t>(i)];
      s.alpha_bars[static_cast<std::size_t>(i)] = prod;
    }
    return s;
  }

  double alpha_bar(int t) const {
    if (t < 1 || t > steps)
      throw Error(ErrorKind::BadTimestep, "t=" + std::to_string(t) + " outside [1, " + std::to_string(steps) + "]");
    return alpha_bars[static_cast<std::size_t>(t - 1)];
  }
};

/// sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps.
template <class T>
Tensor<T> forward_noise(const Tensor<T>& x0, int t, const Tensor<T>& eps, const DiffusionSchedule& sched) {
  const double ab = sched.alpha_bar(t);
  require_same_shape(x0, eps, "forward_noise");
  const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
  Tensor<T> out(x0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(a * x0[i] + b * eps[i]);
  return out;
}

/// Mean over elements of (eps - eps_pred)^2.
template <class T>
T denoising_loss(const Tensor<T>& eps, const Tensor<T>& eps_pred) {
  require_same_shape(eps, eps_pred, "denoising_loss");
  double s = 0.0;
  for (std::size_t i = 0; i < eps.size(); ++i) {
    const double d = static_cast<double>(eps[i]) - eps_pred[i];
    s += d * d;
  }
  return static_cast<T>(s / static_cast<double>(eps.size()));
}

/// d denoising_loss / d eps_pred = 2 (eps_pred - eps) / N.
template <class T>
Tensor<T> denoising_loss_grad(const Tensor<T>& eps, const Tensor<T>& eps_pred) {
  require_same_shape(eps, eps_pred, "denoising_loss_grad");
  Tensor<T> g(eps.shape());
  const double scale = 2.0 / static_cast<double>(eps.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = static_cast<T>(scale * (eps_pred[i] - eps[i]));
  return g;
}

/// Anisotropic total variation: sum of |forward differences| along x and y,
/// over both flow channels.
template <class T>
T tv_loss(const FlowField<T>& flow) {
  const std::size_t h = flow.height(), w = flow.width();
  if (h < 2 || w < 2) throw Error(ErrorKind::DegenerateGrid, "tv_loss needs h, w >= 2");
  const Tensor<T>& f = flow.tensor();
  double s = 0.0;
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x + 1 < w; ++x) s += std::abs(static_cast<double>(f.at(c, y, x + 1)) - f.at(c, y, x));
    for (std::size_t y = 0; y + 1 < h; ++y)
      for (std::size_t x = 0; x < w; ++x) s += std::abs(static_cast<double>(f.at(c, y + 1, x)) - f.at(c, y, x));
  }
  return static_cast<T>(s);
}

template <class T>
struct WarpResult {
  Tensor<T> warped;        // c x h x w
  Tensor<T> overlap_mask;  // 1 x h x w, 1 where the sample point lies on the grid
};

/// Bilinear sampling of src at (x + dx, y + dy). Sample points outside
/// [0, w-1] x [0, h-1] give 0 and mask 0, which removes non-overlapping regions.
template <class T>
WarpResult<T> warp(const Tensor<T>& src, const FlowField<T>& flow) {
  require_rank3(src, "warp source");
  const std::size_t c = src.dim(0), h = src.dim(1), w = src.dim(2);
  if (flow.height() != h || flow.width() != w) throw Error(ErrorKind::ShapeMismatch, "warp: flow size differs");
  WarpResult<T> out{Tensor<T>({c, h, w}), Tensor<T>({1, h, w})};
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double sx = static_cast<double>(x) + flow.dx(y, x);
      const double sy = static_cast<double>(y) + flow.dy(y, x);
      if (sx < 0.0 || sy < 0.0 || sx > static_cast<double>(w - 1) || sy > static_cast<double>(h - 1)) continue;
      out.overlap_mask.at(0, y, x) = T{1};
      const auto x0 = static_cast<std::size_t>(std::floor(sx));
      const auto y0 = static_cast<std::size_t>(std::floor(sy));
      const double fx = sx - static_cast<double>(x0), fy = sy - static_cast<double>(y0);
      const std::size_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double v = (1 - fx) * (1 - fy) * src.at(ch, y0, x0) + fx * (1 - fy) * src.at(ch, y0, x1) +
                         (1 - fx) * fy * src.at(ch, y1, x0) + fx * fy * src.at(ch, y1, x1);
        out.warped.at(ch, y, x) = static_cast<T>(v);
      }
    }
  }
  return out;
}

template <class T>
double l1_distance(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "l1 distance");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(static_cast<double>(a[i]) - b[i]);
  return s;
}

inline constexpr std::size_t kPyramidLevels = 4;

/// sum_i w_i || D(cloth_mask, flow_i) - target ||_1 + || fused - target ||_1,
/// with || . ||_1 the element sum of absolute values.
template <class T>
T l1_warp_loss(const Tensor<T>& cloth_mask, const std::array<FlowField<T>, kPyramidLevels>& flows,
               const Tensor<T>& target_mask, const Tensor<T>& fused_mask,
               const std::array<T, kPyramidLevels>& weights) {
  require_same_shape(cloth_mask, target_mask, "l1_warp_loss cloth vs target");
  require_same_shape(fused_mask, target_mask, "l1_warp_loss fused vs target");
  double s = 0.0;
  for (std::size_t i = 0; i < kPyramidLevels; ++i)
    s += static_cast<double>(weights[i]) * l1_distance(warp(cloth_mask, flows[i]).warped, target_mask);
  s += l1_distance(fused_mask, target_mask);
  return static_cast<T>(s);
}

/// Non-overlapping k x k average pooling (floor on ragged edges).
template <class T>
Tensor<T> avg_pool(const Tensor<T>& in, std::size_t k) {
  require_rank3(in, "avg_pool input");
  const std::size_t c = in.dim(0), h = in.dim(1) / k, w = in.dim(2) / k;
  if (h == 0 || w == 0) throw Error(ErrorKind::ShapeMismatch, "avg_pool window larger than image");
  Tensor<T> out({c, h, w});
  const double inv = 1.0 / static_cast<double>(k * k);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double s = 0.0;
        for (std::size_t dy = 0; dy < k; ++dy)
          for (std::size_t dx = 0; dx < k; ++dx) s += in.at(ch, y * k + dy, x * k + dx);
        out.at(ch, y, x) = static_cast<T>(s * inv);
      }
  return out;
}

/// Maps an image to a list of feature maps, one per level. Stands in for a
/// pretrained network.
template <class T>
using FeatureExtractor = std::function<std::vector<Tensor<T>>(const Tensor<T>&)>;

/// Levels: identity, 2x2 average pool, 4x4 average pool.
template <class T>
FeatureExtractor<T> pyramid_extractor() {
  return [](const Tensor<T>& img) { return std::vector<Tensor<T>>{img, avg_pool(img, 2), avg_pool(img, 4)}; };
}

/// phi(a, b) = sum over levels of mean |F_level(a) - F_level(b)|.
template <class T>
double perceptual_distance(const Tensor<T>& a, const Tensor<T>& b, const FeatureExtractor<T>& extractor) {
  const auto fa = extractor(a);
  const auto fb = extractor(b);
  if (fa.size() != fb.size()) throw Error(ErrorKind::ShapeMismatch, "extractor level count differs");
  double s = 0.0;
  for (std::size_t l = 0; l < fa.size(); ++l) s += l1_distance(fa[l], fb[l]) / static_cast<double>(fa[l].size());
  return s;
}

/// sum_i w_i phi(D(cloth, flow_i), target) + phi(fused, target).
template <class T>
T perceptual_loss(const Tensor<T>& cloth, const Tensor<T>& target, const Tensor<T>& fused,
                  const FeatureExtractor<T>& extractor, const std::array<FlowField<T>, kPyramidLevels>& flows,
                  const std::array<T, kPyramidLevels>& weights) {
  require_same_shape(cloth, target, "perceptual_loss cloth vs target");
  require_same_shape(fused, target, "perceptual_loss fused vs target");
  double s = 0.0;
  for (std::size_t i = 0; i < kPyramidLevels; ++i)
    s += static_cast<double>(weights[i]) * perceptual_distance(warp(cloth, flows[i]).warped, target, extractor);
  s += perceptual_distance(fused, target, extractor);
  return static_cast<T>(s);
}

/// lambda_l1 * l1 + vgg + lambda_tv * tv.
template <class T>
T condition_generator_loss(T l1, T vgg, T tv, T lambda_l1, T lambda_tv) {
  return lambda_l1 * l1 + vgg + lambda_tv * tv;
}

}  // namespace hm
