#pragma once

#include <pnvr/core/error.hpp>
#include <pnvr/network/field_eval.hpp>

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

namespace pnvr {

// Plane of h x w scalars, row-major.
struct Plane {
  int h = 0, w = 0;
  std::vector<double> v;
  Plane() = default;
  Plane(int h_, int w_, double fill = 0.0) : h(h_), w(w_), v(std::size_t(h_) * w_, fill) {}
  double& operator()(int y, int x) { return v[std::size_t(y) * w + x]; }
  double operator()(int y, int x) const { return v[std::size_t(y) * w + x]; }
};

namespace proxy {

inline constexpr double kStdEps = 1e-6;
inline constexpr double kGradEps = 1e-6;
inline constexpr int kScales = 3;

// 3x3 box mean with replicated borders.
inline Plane box3(const Plane& x) {
  Plane y(x.h, x.w);
  for (int i = 0; i < x.h; ++i)
    for (int j = 0; j < x.w; ++j) {
      double s = 0;
      for (int di = -1; di <= 1; ++di)
        for (int dj = -1; dj <= 1; ++dj)
          s += x(std::clamp(i + di, 0, x.h - 1), std::clamp(j + dj, 0, x.w - 1));
      y(i, j) = s / 9.0;
    }
  return y;
}

inline void box3_adjoint(const Plane& gy, Plane& gx) {
  for (int i = 0; i < gy.h; ++i)
    for (int j = 0; j < gy.w; ++j) {
      const double g = gy(i, j) / 9.0;
      for (int di = -1; di <= 1; ++di)
        for (int dj = -1; dj <= 1; ++dj) gx(std::clamp(i + di, 0, gy.h - 1), std::clamp(j + dj, 0, gy.w - 1)) += g;
    }
}

// 2x2 average pooling; an odd trailing row/column is dropped.
inline Plane pool2(const Plane& x) {
  Plane y(x.h / 2, x.w / 2);
  for (int i = 0; i < y.h; ++i)
    for (int j = 0; j < y.w; ++j)
      y(i, j) = 0.25 * (x(2 * i, 2 * j) + x(2 * i + 1, 2 * j) + x(2 * i, 2 * j + 1) + x(2 * i + 1, 2 * j + 1));
  return y;
}

inline void pool2_adjoint(const Plane& gy, Plane& gx) {
  for (int i = 0; i < gy.h; ++i)
    for (int j = 0; j < gy.w; ++j) {
      const double g = 0.25 * gy(i, j);
      gx(2 * i, 2 * j) += g;
      gx(2 * i + 1, 2 * j) += g;
      gx(2 * i, 2 * j + 1) += g;
      gx(2 * i + 1, 2 * j + 1) += g;
    }
}

struct Stats {
  Plane mean, m2, stdev, gx, gy, grad;
};

inline Stats stats(const Plane& x) {
  Stats s;
  s.mean = box3(x);
  Plane sq = x;
  for (auto& v : sq.v) v *= v;
  s.m2 = box3(sq);
  s.stdev = Plane(x.h, x.w);
  for (std::size_t i = 0; i < x.v.size(); ++i)
    s.stdev.v[i] = std::sqrt(std::max(s.m2.v[i] - s.mean.v[i] * s.mean.v[i], 0.0) + kStdEps);
  s.gx = Plane(x.h, x.w);
  s.gy = Plane(x.h, x.w);
  s.grad = Plane(x.h, x.w);
  for (int i = 0; i < x.h; ++i)
    for (int j = 0; j < x.w; ++j) {
      s.gx(i, j) = j + 1 < x.w ? x(i, j + 1) - x(i, j) : 0.0;
      s.gy(i, j) = i + 1 < x.h ? x(i + 1, j) - x(i, j) : 0.0;
      s.grad(i, j) = std::sqrt(s.gx(i, j) * s.gx(i, j) + s.gy(i, j) * s.gy(i, j) + kGradEps);
    }
  return s;
}

struct Terms {
  double mean = 0, stdev = 0, grad = 0;
  double total() const { return mean + stdev + grad; }
};

// Adds to `terms` the three map MSEs (each divided by `norm`) and, when
// ga is non-null, their gradient w.r.t. plane a.
inline void compare(const Plane& a, const Plane& b, double norm, Terms& terms, Plane* ga) {
  const Stats sa = stats(a), sb = stats(b);
  const std::size_t n = a.v.size();
  Plane dmean(a.h, a.w), dm2(a.h, a.w);
  Plane dgx(a.h, a.w), dgy(a.h, a.w);
  for (std::size_t i = 0; i < n; ++i) {
    const double em = sa.mean.v[i] - sb.mean.v[i];
    const double es = sa.stdev.v[i] - sb.stdev.v[i];
    const double eg = sa.grad.v[i] - sb.grad.v[i];
    terms.mean += em * em / norm;
    terms.stdev += es * es / norm;
    terms.grad += eg * eg / norm;
    if (!ga) continue;
    dmean.v[i] = 2 * em / norm;
    const double var = sa.m2.v[i] - sa.mean.v[i] * sa.mean.v[i];
    if (var > 0) {
      const double dvar = 2 * es / norm / (2 * sa.stdev.v[i]);
      dm2.v[i] = dvar;
      dmean.v[i] -= 2 * sa.mean.v[i] * dvar;
    }
    const double dg = 2 * eg / norm / sa.grad.v[i];
    dgx.v[i] = dg * sa.gx.v[i];
    dgy.v[i] = dg * sa.gy.v[i];
  }
  if (!ga) return;
  box3_adjoint(dmean, *ga);
  Plane tmp(a.h, a.w);
  box3_adjoint(dm2, tmp);
  for (std::size_t i = 0; i < n; ++i) ga->v[i] += 2 * a.v[i] * tmp.v[i];
  for (int i = 0; i < a.h; ++i)
    for (int j = 0; j < a.w; ++j) {
      if (j + 1 < a.w) {
        (*ga)(i, j + 1) += dgx(i, j);
        (*ga)(i, j) -= dgx(i, j);
      }
      if (i + 1 < a.h) {
        (*ga)(i + 1, j) += dgy(i, j);
        (*ga)(i, j) -= dgy(i, j);
      }
    }
}

}  // namespace proxy

struct RgbLoss {
  double mse = 0;
  double proxy = 0;
  proxy::Terms proxy_terms;
};

// Pixel MSE and the multi-scale structure proxy between a rendered patch and
// its ground truth (h x w x 3 interleaved). Masked-out ground truth is
// replaced by the background. Gradients w.r.t. the rendered patch go to
// grad_mse / grad_proxy when non-empty.
inline RgbLoss rgb_loss(std::span<const double> rendered, std::span<const double> gt, std::span<const double> mask,
                        int h, int w, const double background[3], std::span<double> grad_mse = {},
                        std::span<double> grad_proxy = {}) {
  const std::size_t n = static_cast<std::size_t>(h) * w;
  if (rendered.size() != 3 * n || gt.size() != 3 * n || (!mask.empty() && mask.size() != n))
    throw DimensionError("rgb_loss patch shapes disagree");
  RgbLoss out;
  std::vector<double> target(3 * n);
  for (std::size_t p = 0; p < n; ++p)
    for (int c = 0; c < 3; ++c) target[3 * p + c] = (mask.empty() || mask[p] > 0.5) ? gt[3 * p + c] : background[c];
  for (std::size_t i = 0; i < 3 * n; ++i) {
    const double e = rendered[i] - target[i];
    out.mse += e * e;
    if (!grad_mse.empty()) grad_mse[i] = 2 * e / (3.0 * n);
  }
  out.mse /= 3.0 * n;

  if (!grad_proxy.empty()) std::fill(grad_proxy.begin(), grad_proxy.end(), 0.0);
  for (int c = 0; c < 3; ++c) {
    std::vector<Plane> pa{Plane(h, w)}, pb{Plane(h, w)};
    for (std::size_t p = 0; p < n; ++p) {
      pa[0].v[p] = rendered[3 * p + c];
      pb[0].v[p] = target[3 * p + c];
    }
    for (int s = 1; s < proxy::kScales; ++s) {
      if (pa.back().h < 2 || pa.back().w < 2) break;
      pa.push_back(proxy::pool2(pa.back()));
      pb.push_back(proxy::pool2(pb.back()));
    }
    // Backward runs from the coarsest scale down, folding pooled gradients.
    Plane carry;
    for (int s = static_cast<int>(pa.size()) - 1; s >= 0; --s) {
      const double norm = 3.0 * pa[s].v.size();
      Plane g(pa[s].h, pa[s].w);
      proxy::compare(pa[s], pb[s], norm, out.proxy_terms, grad_proxy.empty() ? nullptr : &g);
      if (grad_proxy.empty()) continue;
      if (s + 1 < static_cast<int>(pa.size())) proxy::pool2_adjoint(carry, g);
      carry = std::move(g);
    }
    if (!grad_proxy.empty())
      for (std::size_t p = 0; p < n; ++p) grad_proxy[3 * p + c] = carry.v[p];
  }
  out.proxy = out.proxy_terms.total();
  return out;
}

// Distortion of one ray's weights. Midpoints and interval lengths are in
// normalized ray distance (near -> 0, far -> 1):
//   sum_ij w_i w_j |m_i - m_j| + 1/3 sum_i w_i^2 delta_i,
// evaluated in O(N) with prefix sums. grad receives dL/dw when non-empty.
template <typename Real>
double distortion_loss(std::span<const Real> w, std::span<const double> depths, double near, double far,
                       std::span<double> grad = {}) {
  const std::size_t n = w.size();
  if (depths.size() != n) throw DimensionError("distortion: weight and depth counts differ");
  if (n == 0) return 0.0;
  const double len = far - near;
  std::vector<double> m(n), d(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double a = (depths[i] - near) / len;
    const double b = i + 1 < n ? (depths[i + 1] - near) / len : 1.0;
    m[i] = 0.5 * (a + b);
    d[i] = b - a;
  }
  double W = 0, S = 0, loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double wi = w[i];
    loss += 2 * wi * (m[i] * W - S) + wi * wi * d[i] / 3.0;
    W += wi;
    S += wi * m[i];
  }
  if (!grad.empty()) {
    double Wl = 0, Sl = 0;
    const double Wt = W, St = S;
    for (std::size_t k = 0; k < n; ++k) {
      const double wk = w[k];
      const double Wr = Wt - Wl - wk, Sr = St - Sl - wk * m[k];
      grad[k] = 2 * (m[k] * Wl - Sl + Sr - m[k] * Wr) + 2.0 / 3.0 * wk * d[k];
      Wl += wk;
      Sl += wk * m[k];
    }
  }
  return loss;
}

struct DeformationLoss {
  double magnitude = 0;
  double smoothness = 0;
};

inline constexpr double kSmoothEps = 1e-2;

// Magnitude and finite-difference smoothness of the residual field at the
// given normalized coordinates (count x coord_dims, extras per row as in
// ResidualBatch). Gradients, scaled by the weights, go into grads when given.
template <typename Real>
DeformationLoss deformation_regularizer(const FieldModel<Real>& model, int frame, std::span<const Real> coords,
                                        std::span<const Real> extras, FieldModel<Real>* grads = nullptr,
                                        double w_mag = 1.0, double w_smooth = 1.0) {
  const auto& cfg = model.config();
  const int D = cfg.residual_coord_dims();
  const int X = cfg.residual_extra_dims();
  const int n = static_cast<int>(coords.size()) / D;
  if (n == 0) throw DimensionError("deformation regularizer needs a nonempty batch");
  if (coords.size() != static_cast<std::size_t>(n) * D || extras.size() != static_cast<std::size_t>(n) * X)
    throw DimensionError("deformation regularizer batch shape mismatch");
  // Rows: n base points, then n shifted copies per axis.
  ResidualBatch<Real> b;
  b.frame = frame;
  b.count = n * (1 + D);
  b.coords.resize(static_cast<std::size_t>(b.count) * D);
  b.extras.resize(static_cast<std::size_t>(b.count) * X);
  for (int a = -1; a < D; ++a)
    for (int i = 0; i < n; ++i) {
      const std::size_t r = static_cast<std::size_t>(a + 1) * n + i;
      for (int d = 0; d < D; ++d) b.coords[r * D + d] = coords[std::size_t(i) * D + d];
      if (a >= 0) b.coords[r * D + a] += static_cast<Real>(kSmoothEps);
      for (int e = 0; e < X; ++e) b.extras[r * X + e] = extras[std::size_t(i) * X + e];
    }
  residual_forward(model, b);
  DeformationLoss out;
  std::vector<Real> dout(grads ? b.offset.size() : 0, Real(0));
  const double inv_e2 = 1.0 / (kSmoothEps * kSmoothEps);
  for (int i = 0; i < n; ++i) {
    const Real* base = b.offset.data() + 3 * std::size_t(i);
    for (int c = 0; c < 3; ++c) {
      out.magnitude += double(base[c]) * base[c] / n;
      if (grads) dout[3 * std::size_t(i) + c] += static_cast<Real>(w_mag * 2 * base[c] / n);
    }
    for (int a = 0; a < D; ++a) {
      const std::size_t r = static_cast<std::size_t>(a + 1) * n + i;
      const Real* sh = b.offset.data() + 3 * r;
      for (int c = 0; c < 3; ++c) {
        const double e = double(sh[c]) - base[c];
        out.smoothness += e * e * inv_e2 / n;
        if (grads) {
          const Real g = static_cast<Real>(w_smooth * 2 * e * inv_e2 / n);
          dout[3 * r + c] += g;
          dout[3 * std::size_t(i) + c] -= g;
        }
      }
    }
  }
  if (grads) residual_backward(model, b, std::span<const Real>(dout), *grads);
  return out;
}

}  // namespace pnvr
