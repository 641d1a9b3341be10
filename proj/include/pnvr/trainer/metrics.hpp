#pragma once

#include <pnvr/core/error.hpp>
#include <pnvr/core/image.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

namespace pnvr {

inline constexpr double kPsnrCap = 99.0;

// Square dilation of a binary mask (values > 0.5 are foreground).
inline std::vector<char> dilate_mask(const Image& mask, int radius) {
  std::vector<char> out(mask.pixel_count(), 0);
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) {
      if (!(mask.at(x, y) > 0.5f)) continue;
      for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx) {
          const int xx = x + dx, yy = y + dy;
          if (xx >= 0 && yy >= 0 && xx < mask.width && yy < mask.height) out[std::size_t(yy) * mask.width + xx] = 1;
        }
    }
  return out;
}

inline double psnr_from_mse(double mse) {
  if (!(mse > 0)) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

// PSNR over pixels inside the dilated ground-truth mask. An empty mask (or
// no mask) scores every pixel.
inline double psnr(const Image& render, const Image& gt, const Image* mask = nullptr, int dilation = 2) {
  if (!render.same_shape(gt)) throw DimensionError("psnr: image shapes differ");
  std::vector<char> sel(render.pixel_count(), 1);
  if (mask) {
    if (mask->width != gt.width || mask->height != gt.height) throw DimensionError("psnr: mask shape differs");
    auto d = dilate_mask(*mask, dilation);
    if (std::any_of(d.begin(), d.end(), [](char c) { return c != 0; })) sel = std::move(d);
  }
  double se = 0;
  std::size_t n = 0;
  for (std::size_t p = 0; p < sel.size(); ++p) {
    if (!sel[p]) continue;
    for (int c = 0; c < render.channels; ++c) {
      const double e = double(render.data[p * render.channels + c]) - gt.data[p * gt.channels + c];
      se += e * e;
    }
    n += render.channels;
  }
  return psnr_from_mse(se / static_cast<double>(n));
}

// Mean SSIM over all valid 11x11 Gaussian windows (sigma 1.5) and channels,
// with C1 = 0.01^2 and C2 = 0.03^2 for a unit dynamic range. Separable
// filtering.
inline double ssim(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw DimensionError("ssim: image shapes differ");
  constexpr int kWin = 11;
  constexpr double kSigma = 1.5, C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
  if (a.width < kWin || a.height < kWin) throw DimensionError("ssim: image smaller than the 11x11 window");
  double kernel[kWin], ks = 0;
  for (int i = 0; i < kWin; ++i) {
    const double d = i - kWin / 2;
    kernel[i] = std::exp(-d * d / (2 * kSigma * kSigma));
    ks += kernel[i];
  }
  for (double& k : kernel) k /= ks;
  const int W = a.width, H = a.height, OW = W - kWin + 1, OH = H - kWin + 1;
  // Filters a full-size plane down to the valid region.
  auto filter = [&](const std::vector<double>& p) {
    std::vector<double> rows(std::size_t(H) * OW), out(std::size_t(OH) * OW);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < OW; ++x) {
        double s = 0;
        for (int k = 0; k < kWin; ++k) s += kernel[k] * p[std::size_t(y) * W + x + k];
        rows[std::size_t(y) * OW + x] = s;
      }
    for (int y = 0; y < OH; ++y)
      for (int x = 0; x < OW; ++x) {
        double s = 0;
        for (int k = 0; k < kWin; ++k) s += kernel[k] * rows[std::size_t(y + k) * OW + x];
        out[std::size_t(y) * OW + x] = s;
      }
    return out;
  };
  double total = 0;
  for (int c = 0; c < a.channels; ++c) {
    std::vector<double> pa(a.pixel_count()), pb(a.pixel_count()), aa(a.pixel_count()), bb(a.pixel_count()),
        ab(a.pixel_count());
    for (std::size_t p = 0; p < a.pixel_count(); ++p) {
      pa[p] = a.data[p * a.channels + c];
      pb[p] = b.data[p * b.channels + c];
      aa[p] = pa[p] * pa[p];
      bb[p] = pb[p] * pb[p];
      ab[p] = pa[p] * pb[p];
    }
    const auto ma = filter(pa), mb = filter(pb), saa = filter(aa), sbb = filter(bb), sab = filter(ab);
    double sum = 0;
    for (std::size_t i = 0; i < ma.size(); ++i) {
      const double va = saa[i] - ma[i] * ma[i], vb = sbb[i] - mb[i] * mb[i], cov = sab[i] - ma[i] * mb[i];
      sum += ((2 * ma[i] * mb[i] + C1) * (2 * cov + C2)) / ((ma[i] * ma[i] + mb[i] * mb[i] + C1) * (va + vb + C2));
    }
    total += sum / static_cast<double>(ma.size());
  }
  return total / a.channels;
}

}  // namespace pnvr
