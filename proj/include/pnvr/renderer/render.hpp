#pragma once

#include <pnvr/core/image.hpp>
#include <pnvr/core/rng.hpp>
#include <pnvr/network/field_eval.hpp>
#include <pnvr/renderer/camera.hpp>
#include <pnvr/renderer/volume.hpp>

#include <array>
#include <span>
#include <vector>

namespace pnvr {

struct RenderOptions {
  int samples = 64;
  std::array<double, 3> background{1.0, 1.0, 1.0};
  std::uint64_t seed = 0;
  // Extra key mixed into per-ray seeds (e.g. the camera index).
  std::uint64_t stream = 0;
#ifdef NDEBUG
  bool check_invariants = false;
#else
  bool check_invariants = true;
#endif
  int tile = 32;
  FieldEvalOptions field;
};

template <typename Real>
struct RayTrace {
  bool hit = false;   // false: ray missed the bounds and shows background
  int first = 0;      // index of the first sample in the patch field batch
  int count = 0;
  double near = 0.0, far = 0.0;
  std::vector<double> depths;
  VolumeResult<Real> volume;
};

template <typename Real>
struct PatchRender {
  PixelRect rect;
  int frame = 0;
  std::vector<Real> rgb;      // pixels x 3, row-major within the rect
  std::vector<Real> opacity;  // pixels
  std::vector<RayTrace<Real>> rays;
  FieldBatch<Real> field;
};

// Per-ray generator, keyed by absolute pixel so tiling never changes samples.
inline SplitMix64 ray_rng(const RenderOptions& opt, int frame, const Camera& cam, int px, int py) {
  return SplitMix64(mix_seed(opt.seed, static_cast<std::uint64_t>(frame), opt.stream,
                             static_cast<std::uint64_t>(py) * cam.width + px));
}

template <typename Real>
PatchRender<Real> render_patch(const FieldModel<Real>& model, const SkinnedBody& body, const FrameGeometry& geom,
                               const Camera& cam, const PixelRect& rect, const RenderOptions& opt) {
  PatchRender<Real> out;
  out.rect = rect;
  out.frame = geom.frame;
  const auto rays = generate_rays(cam, rect);
  const int R = static_cast<int>(rays.size());
  out.rays.resize(R);
  auto& fb = out.field;
  fb.frame = geom.frame;
  for (int i = 0; i < R; ++i) {
    auto& tr = out.rays[i];
    const auto b = ray_bounds(rays[i].origin, rays[i].dir, geom.render_bounds);
    if (!b) continue;
    tr.hit = true;
    tr.near = b->first;
    tr.far = b->second;
    auto rng = ray_rng(opt, geom.frame, cam, rays[i].px, rays[i].py);
    tr.depths = sample_stratified(tr.near, tr.far, opt.samples, rng);
    tr.first = fb.size();
    tr.count = opt.samples;
    for (double s : tr.depths) {
      fb.x.push_back(rays[i].origin + s * rays[i].dir);
      fb.dir.push_back(rays[i].dir);
    }
  }
  evaluate_field(model, body, geom, fb, opt.field);

  const Real bg[3] = {static_cast<Real>(opt.background[0]), static_cast<Real>(opt.background[1]),
                      static_cast<Real>(opt.background[2])};
  out.rgb.resize(static_cast<std::size_t>(R) * 3);
  out.opacity.assign(R, Real(0));
  for (int i = 0; i < R; ++i) {
    auto& tr = out.rays[i];
    if (!tr.hit) {
      for (int c = 0; c < 3; ++c) out.rgb[3 * std::size_t(i) + c] = bg[c];
      continue;
    }
    tr.volume = volume_render(std::span<const double>(tr.depths), tr.far,
                              std::span<const Real>(fb.sigma.data() + tr.first, tr.count),
                              std::span<const Real>(fb.rgb.data() + 3 * std::size_t(tr.first), 3 * std::size_t(tr.count)), bg);
    if (opt.check_invariants) check_render_invariants(tr.volume);
    for (int c = 0; c < 3; ++c) out.rgb[3 * std::size_t(i) + c] = tr.volume.rgb[c];
    out.opacity[i] = tr.volume.opacity;
  }
  return out;
}

// Backpropagates pixel-color gradients (pixels x 3) and optional per-sample
// weight gradients (indexed like the field batch) into the model gradients.
template <typename Real>
void backward_patch(const FieldModel<Real>& model, const PatchRender<Real>& pr, std::span<const Real> grad_rgb,
                    std::span<const Real> grad_weights, const RenderOptions& opt, FieldModel<Real>& grads) {
  const auto& fb = pr.field;
  const int S = fb.size();
  std::vector<Real> dsigma(S, Real(0)), drgb(static_cast<std::size_t>(S) * 3, Real(0));
  const Real bg[3] = {static_cast<Real>(opt.background[0]), static_cast<Real>(opt.background[1]),
                      static_cast<Real>(opt.background[2])};
  for (std::size_t i = 0; i < pr.rays.size(); ++i) {
    const auto& tr = pr.rays[i];
    if (!tr.hit) continue;
    const std::span<const Real> gw =
        grad_weights.empty() ? std::span<const Real>() : grad_weights.subspan(tr.first, tr.count);
    volume_render_backward(tr.volume, std::span<const Real>(fb.sigma.data() + tr.first, tr.count),
                           std::span<const Real>(fb.rgb.data() + 3 * std::size_t(tr.first), 3 * std::size_t(tr.count)),
                           bg, grad_rgb.data() + 3 * i, gw, std::span<Real>(dsigma.data() + tr.first, tr.count),
                           std::span<Real>(drgb.data() + 3 * std::size_t(tr.first), 3 * std::size_t(tr.count)));
  }
  backward_field(model, fb, std::span<const Real>(dsigma), std::span<const Real>(drgb), grads);
}

struct RenderedImage {
  Image color;    // 3 channels
  Image opacity;  // 1 channel
};

// Renders the full frame tile by tile.
template <typename Real>
RenderedImage render_image(const FieldModel<Real>& model, const SkinnedBody& body, const FrameGeometry& geom,
                           const Camera& cam, const RenderOptions& opt) {
  RenderedImage img{Image(cam.width, cam.height, 3), Image(cam.width, cam.height, 1)};
  const int tile = std::max(opt.tile, 1);
  for (int y0 = 0; y0 < cam.height; y0 += tile)
    for (int x0 = 0; x0 < cam.width; x0 += tile) {
      const PixelRect rect{x0, y0, std::min(tile, cam.width - x0), std::min(tile, cam.height - y0)};
      const auto pr = render_patch(model, body, geom, cam, rect, opt);
      for (int y = 0; y < rect.height; ++y)
        for (int x = 0; x < rect.width; ++x) {
          const std::size_t i = static_cast<std::size_t>(y) * rect.width + x;
          for (int c = 0; c < 3; ++c) img.color.at(x0 + x, y0 + y, c) = static_cast<float>(pr.rgb[3 * i + c]);
          img.opacity.at(x0 + x, y0 + y) = static_cast<float>(pr.opacity[i]);
        }
    }
  return img;
}

}  // namespace pnvr
