#pragma once

// Naive reference versions of the loss kernels, written directly from the
// formulas with flat index arithmetic over std::vector<double>. Nothing here
// calls into loss_kernels.hpp; these are the oracles the kernels are checked
// against (selfcheck, unit tests, acceptance).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace hm::reference {

using Vec = std::vector<double>;

inline double cgan_value(const Vec& real, const Vec& fake) {
  double a = 0, b = 0;
  for (double p : real) a += std::log(std::min(std::max(p, 1e-7), 1 - 1e-7));
  for (double p : fake) b += std::log(1 - std::min(std::max(p, 1e-7), 1 - 1e-7));
  return a / real.size() + b / fake.size();
}

inline double soft_iou_loss(const Vec& pred, const Vec& gt) {
  double inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    inter += pred[i] < gt[i] ? pred[i] : gt[i];
    uni += pred[i] > gt[i] ? pred[i] : gt[i];
  }
  return 1 - (inter + 1e-6) / (uni + 1e-6);
}

/// out[o*hw + p] = sum_i w[o*cin + i] * in[i*hw + p] + b[o].
inline Vec conv1x1(const Vec& in, std::size_t cin, std::size_t cout, std::size_t hw, const Vec& w, const Vec& b) {
  Vec out(cout * hw);
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t p = 0; p < hw; ++p) {
      double s = b[o];
      for (std::size_t i = 0; i < cin; ++i) s += w[o * cin + i] * in[i * hw + p];
      out[o * hw + p] = s;
    }
  return out;
}

/// y = M x for a row-major n_out x n_in matrix.
inline Vec matvec(const Vec& m, const Vec& x, std::size_t n_out) {
  Vec y(n_out, 0.0);
  const std::size_t n_in = x.size();
  for (std::size_t r = 0; r < n_out; ++r)
    for (std::size_t c = 0; c < n_in; ++c) y[r] += m[r * n_in + c] * x[c];
  return y;
}

/// Dense-block control composition: M_base x + Z2(M_clone (x + Z1(e_c))).
inline Vec control_forward_dense(const Vec& x, const Vec& ec, std::size_t c_x, std::size_t c_e, std::size_t hw,
                                 const Vec& m_base, const Vec& m_clone, std::size_t c_out, const Vec& z1w,
                                 const Vec& z1b, const Vec& z2w, const Vec& z2b) {
  const Vec injected = conv1x1(ec, c_e, c_x, hw, z1w, z1b);
  Vec sum(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) sum[i] = x[i] + injected[i];
  const Vec cloned = matvec(m_clone, sum, c_out * hw);
  const Vec ctrl = conv1x1(cloned, c_out, c_out, hw, z2w, z2b);
  const Vec base = matvec(m_base, x, c_out * hw);
  Vec out(base.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = base[i] + ctrl[i];
  return out;
}

inline double alpha_bar(int t, int steps = 1000, double b0 = 1e-4, double b1 = 0.02) {
  double prod = 1;
  for (int s = 1; s <= t; ++s) prod *= 1 - (b0 + (b1 - b0) * (s - 1) / (steps - 1));
  return prod;
}

inline double mse(const Vec& a, const Vec& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / a.size();
}

/// flow laid out as [dx plane, dy plane], each h*w.
inline double tv(const Vec& flow, std::size_t h, std::size_t w) {
  double s = 0;
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double v = flow[c * h * w + y * w + x];
        if (x + 1 < w) s += std::fabs(flow[c * h * w + y * w + x + 1] - v);
        if (y + 1 < h) s += std::fabs(flow[c * h * w + (y + 1) * w + x] - v);
      }
  return s;
}

/// Bilinear warp summing the four neighbours with tent weights
/// (1 - |sx - xi|)(1 - |sy - yi|); sample points off the grid give 0.
inline Vec warp(const Vec& src, std::size_t c, std::size_t h, std::size_t w, const Vec& flow, Vec* mask = nullptr) {
  Vec out(c * h * w, 0.0);
  if (mask) mask->assign(h * w, 0.0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double sx = x + flow[y * w + x];
      const double sy = y + flow[h * w + y * w + x];
      if (sx < 0 || sy < 0 || sx > w - 1.0 || sy > h - 1.0) continue;
      if (mask) (*mask)[y * w + x] = 1;
      const double fx = std::floor(sx), fy = std::floor(sy);
      for (double yi : {fy, fy + 1})
        for (double xi : {fx, fx + 1}) {
          const double wt = (1 - std::fabs(sx - xi)) * (1 - std::fabs(sy - yi));
          if (wt <= 0 || xi > w - 1.0 || yi > h - 1.0) continue;
          for (std::size_t ch = 0; ch < c; ++ch)
            out[ch * h * w + y * w + x] += wt * src[ch * h * w + static_cast<std::size_t>(yi) * w + static_cast<std::size_t>(xi)];
        }
    }
  return out;
}

inline double l1_sum(const Vec& a, const Vec& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::fabs(a[i] - b[i]);
  return s;
}

inline Vec pool(const Vec& in, std::size_t c, std::size_t h, std::size_t w, std::size_t k) {
  const std::size_t oh = h / k, ow = w / k;
  Vec out(c * oh * ow, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < oh * k; ++y)
      for (std::size_t x = 0; x < ow * k; ++x)
        out[ch * oh * ow + (y / k) * ow + x / k] += in[ch * h * w + y * w + x] / static_cast<double>(k * k);
  return out;
}

/// Three-level pyramid distance: identity, 2x2 and 4x4 pooling, mean |.| per level.
inline double pyramid_phi(const Vec& a, const Vec& b, std::size_t c, std::size_t h, std::size_t w) {
  double s = l1_sum(a, b) / a.size();
  for (std::size_t k : {2u, 4u}) {
    const Vec pa = pool(a, c, h, w, k), pb = pool(b, c, h, w, k);
    s += l1_sum(pa, pb) / pa.size();
  }
  return s;
}

}  // namespace hm::reference
