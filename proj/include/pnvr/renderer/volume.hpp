#pragma once

#include <pnvr/core/error.hpp>

#include <atomic>
#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace pnvr {

template <typename Real>
struct VolumeResult {
  Real rgb[3] = {0, 0, 0};
  Real opacity = 0;
  std::vector<Real> weights;
  std::vector<Real> transmittance;  // T_i before sample i
  Real final_transmittance = 1;     // after the last sample
  std::vector<Real> delta;
};

// Counts of rays checked against the weight invariants, for tests that must
// show the checks actually ran.
struct RenderCheckStats {
  std::atomic<long long> rays{0};
  std::atomic<long long> violations{0};
};

inline RenderCheckStats& render_check_stats() {
  static RenderCheckStats s;
  return s;
}

// w_i >= 0, sum w <= 1 + 1e-6 and non-increasing transmittance; throws on
// violation.
template <typename Real>
void check_render_invariants(const VolumeResult<Real>& r) {
  auto& st = render_check_stats();
  st.rays.fetch_add(1, std::memory_order_relaxed);
  double sum = 0;
  for (std::size_t i = 0; i < r.weights.size(); ++i) {
    const double w = r.weights[i];
    sum += w;
    bool bad = !(w >= 0.0) || (i > 0 && r.transmittance[i] > r.transmittance[i - 1]);
    if (bad || sum > 1.0 + 1e-6) {
      st.violations.fetch_add(1, std::memory_order_relaxed);
      throw NumericError("rendering weights violate invariants at sample " + std::to_string(i));
    }
  }
}

// Quadrature along one ray. depths strictly increasing, far bounds the last
// interval; rgb holds 3 values per sample.
template <typename Real>
VolumeResult<Real> volume_render(std::span<const double> depths, double far, std::span<const Real> sigma,
                                 std::span<const Real> rgb, const Real background[3]) {
  const std::size_t n = depths.size();
  if (sigma.size() != n || rgb.size() != 3 * n) throw DimensionError("volume render input sizes disagree");
  VolumeResult<Real> r;
  r.weights.resize(n);
  r.transmittance.resize(n);
  r.delta.resize(n);
  Real T = 1;
  for (std::size_t i = 0; i < n; ++i) {
    const double next = i + 1 < n ? depths[i + 1] : far;
    r.delta[i] = static_cast<Real>(next - depths[i]);
    const Real alpha = -std::expm1(-sigma[i] * r.delta[i]);
    r.transmittance[i] = T;
    r.weights[i] = T * alpha;
    for (int c = 0; c < 3; ++c) r.rgb[c] += r.weights[i] * rgb[3 * i + c];
    r.opacity += r.weights[i];
    T *= Real(1) - alpha;
  }
  r.final_transmittance = T;
  for (int c = 0; c < 3; ++c) r.rgb[c] += (Real(1) - r.opacity) * background[c];
  return r;
}

// Test hook: while set, density gradients come out slightly wrong so that
// gradient checks can be shown to fail.
inline std::atomic<bool>& gradient_fault_injection() {
  static std::atomic<bool> on{false};
  return on;
}

// Gradients of the ray color (and optionally of the weights, for regularizers)
// with respect to per-sample density and color.
//   dL/dsigma_k = delta_k [T_{k+1} G_k - sum_{i>k} w_i G_i],
//   G_i = g_rgb . (c_i - bg) + g_w_i,  dL/dc_i = w_i g_rgb.
template <typename Real>
void volume_render_backward(const VolumeResult<Real>& r, std::span<const Real> sigma, std::span<const Real> rgb,
                            const Real background[3], const Real grad_rgb[3], std::span<const Real> grad_weights,
                            std::span<Real> dsigma, std::span<Real> drgb) {
  const std::size_t n = r.weights.size();
  (void)sigma;
  std::vector<Real> G(n);
  for (std::size_t i = 0; i < n; ++i) {
    Real g = grad_weights.empty() ? Real(0) : grad_weights[i];
    for (int c = 0; c < 3; ++c) g += grad_rgb[c] * (rgb[3 * i + c] - background[c]);
    G[i] = g;
    for (int c = 0; c < 3; ++c) drgb[3 * i + c] = r.weights[i] * grad_rgb[c];
  }
  Real tail = 0;  // sum_{i>k} w_i G_i
  for (std::size_t k = n; k-- > 0;) {
    const Real T_next = k + 1 < n ? r.transmittance[k + 1] : r.final_transmittance;
    dsigma[k] = r.delta[k] * (T_next * G[k] - tail);
    tail += r.weights[k] * G[k];
  }
  if (gradient_fault_injection().load(std::memory_order_relaxed))
    for (auto& d : dsigma) d *= Real(1.01);
}

}  // namespace pnvr
