#pragma once

#include <pnvr/core/image.hpp>
#include <pnvr/core/parallel.hpp>
#include <pnvr/core/rng.hpp>
#include <pnvr/geometry/parts.hpp>
#include <pnvr/network/field_eval.hpp>
#include <pnvr/network/field_model.hpp>
#include <pnvr/renderer/render.hpp>
#include <pnvr/synthdata/dataset.hpp>
#include <pnvr/trainer/adam.hpp>
#include <pnvr/trainer/checkpoint.hpp>
#include <pnvr/trainer/config.hpp>
#include <pnvr/trainer/losses.hpp>
#include <pnvr/trainer/metrics.hpp>

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace pnvr {

struct LossBreakdown {
  double mse = 0;
  double proxy = 0;
  double distortion = 0;
  double deform_magnitude = 0;
  double deform_smoothness = 0;
  double total = 0;
};

inline nlohmann::json to_json(const LossBreakdown& l) {
  return {{"mse", l.mse},
          {"proxy", l.proxy},
          {"distortion", l.distortion},
          {"deform_magnitude", l.deform_magnitude},
          {"deform_smoothness", l.deform_smoothness},
          {"total", l.total}};
}

// Per-dataset state shared by every iteration: part split, posed geometry per
// frame and the training camera's mask boxes.
struct TrainScene {
  const Dataset* data = nullptr;
  std::vector<PartMesh> parts;
  std::vector<FrameGeometry> geoms;
  int train_camera = 0;
  std::vector<std::array<int, 4>> mask_boxes;  // x0, y0, x1, y1 inclusive; x1 < x0 when empty
};

inline std::array<int, 4> mask_box(const Image& mask) {
  std::array<int, 4> b{mask.width, mask.height, -1, -1};
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      if (mask.at(x, y) > 0.5f) {
        b[0] = std::min(b[0], x);
        b[1] = std::min(b[1], y);
        b[2] = std::max(b[2], x);
        b[3] = std::max(b[3], y);
      }
  return b;
}

inline std::vector<FrameGeometry> build_all_geometry(const SkinnedBody& body, const std::vector<PartMesh>& parts,
                                                     const std::vector<Pose>& poses, double cull_radius,
                                                     int threads) {
  std::vector<FrameGeometry> g(poses.size());
  const int F = static_cast<int>(poses.size());
  parallel_for(poses.size(), threads, [&](std::size_t a, std::size_t b) {
    for (std::size_t f = a; f < b; ++f) g[f] = build_frame_geometry(body, parts, poses[f], F, cull_radius);
  });
  return g;
}

inline TrainScene make_train_scene(const Dataset& d, const FieldConfig& fc, int threads = 1) {
  if (d.frame_count() != fc.frame_count) throw ConfigError("dataset frame count does not match the model");
  for (const auto& set : fc.part_sets)
    for (int j : set)
      if (j < 0 || j >= d.body.joint_count()) throw ConfigError("model part sets do not match the dataset body");
  for (int f = 0; f < d.frame_count(); ++f) {
    if (d.frames[f].pose.frame_index != f) throw DataError("frame " + std::to_string(f) + " has a mismatched pose index");
    if (static_cast<int>(d.frames[f].pose.rotations.size()) != d.body.joint_count())
      throw ConfigError("pose joint count does not match the dataset body");
  }
  TrainScene s;
  s.data = &d;
  s.parts = decompose_parts(d.body, fc.part_sets, fc.part_names);
  s.geoms = build_all_geometry(d.body, s.parts, d.poses(), fc.cull_radius, threads);
  const auto train = d.cameras_with_role("train");
  if (train.empty()) throw DataError("dataset has no training camera");
  s.train_camera = train.front();
  for (const auto& fr : d.frames) s.mask_boxes.push_back(mask_box(fr.masks[s.train_camera]));
  return s;
}

struct StepInput {
  int frame = 0;
  PixelRect rect;
  std::uint64_t render_seed = 0;
  std::uint64_t reg_seed = 0;
  bool residual_enabled = true;
};

// Patch centered near the training mask of a random frame.
inline StepInput sample_step(const TrainScene& s, const TrainConfig& c, int iter) {
  const Camera& cam = s.data->cameras[s.train_camera];
  const int p = c.patch;
  if (p > cam.width || p > cam.height) throw ConfigError("patch size exceeds the training image");
  SplitMix64 rng(mix_seed(c.seed, 0x70617463ull, static_cast<std::uint64_t>(iter)));
  StepInput in;
  in.frame = static_cast<int>(rng.below(static_cast<std::uint64_t>(s.data->frame_count())));
  const auto& b = s.mask_boxes[in.frame];
  double lo_x = 0, hi_x = cam.width, lo_y = 0, hi_y = cam.height;
  if (b[2] >= b[0]) {
    lo_x = b[0] - p / 4.0;
    hi_x = b[2] + 1 + p / 4.0;
    lo_y = b[1] - p / 4.0;
    hi_y = b[3] + 1 + p / 4.0;
  }
  const double cx = lo_x + rng.uniform() * (hi_x - lo_x);
  const double cy = lo_y + rng.uniform() * (hi_y - lo_y);
  in.rect.width = p;
  in.rect.height = p;
  in.rect.x0 = std::clamp(static_cast<int>(std::floor(cx - p / 2.0)), 0, cam.width - p);
  in.rect.y0 = std::clamp(static_cast<int>(std::floor(cy - p / 2.0)), 0, cam.height - p);
  in.render_seed = mix_seed(c.seed, 0x72656e64ull, static_cast<std::uint64_t>(iter));
  in.reg_seed = mix_seed(c.seed, 0x72656775ull, static_cast<std::uint64_t>(iter));
  in.residual_enabled = iter >= c.warmup_iters;
  return in;
}

inline RenderOptions train_render_options(const TrainConfig& c, const Dataset& d, int threads) {
  RenderOptions ro;
  ro.samples = c.samples;
  ro.background = d.background;
  ro.field.threads = threads;
  return ro;
}

// Full training objective for one patch. With grads non-null, the gradient of
// the total is accumulated into grads.
template <typename Real>
LossBreakdown training_loss(const FieldModel<Real>& model, const TrainScene& s, const TrainConfig& c,
                            const StepInput& in, FieldModel<Real>* grads, int threads = 1) {
  const Dataset& d = *s.data;
  const Camera& cam = d.cameras[s.train_camera];
  RenderOptions ro = train_render_options(c, d, threads);
  ro.seed = in.render_seed;
  ro.field.residual_enabled = in.residual_enabled;
  const auto pr = render_patch(model, d.body, s.geoms[in.frame], cam, in.rect, ro);

  const int h = in.rect.height, w = in.rect.width;
  const std::size_t n = static_cast<std::size_t>(h) * w;
  std::vector<double> rendered(3 * n), gt(3 * n), mask(n);
  const Image& img = d.frames[in.frame].images[s.train_camera];
  const Image& msk = d.frames[in.frame].masks[s.train_camera];
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * w + x;
      for (int ch = 0; ch < 3; ++ch) {
        rendered[3 * p + ch] = pr.rgb[3 * p + ch];
        gt[3 * p + ch] = img.at(in.rect.x0 + x, in.rect.y0 + y, ch);
      }
      mask[p] = msk.at(in.rect.x0 + x, in.rect.y0 + y);
    }
  std::vector<double> g_mse, g_proxy;
  if (grads) {
    g_mse.resize(3 * n);
    g_proxy.resize(3 * n);
  }
  LossBreakdown L;
  const auto rl = rgb_loss(rendered, gt, mask, h, w, d.background.data(), g_mse, g_proxy);
  L.mse = rl.mse;
  L.proxy = rl.proxy;

  // Distortion, averaged over all rays of the patch.
  const auto& fb = pr.field;
  std::vector<Real> g_weights(grads ? fb.size() : 0, Real(0));
  std::vector<double> gd;
  for (const auto& tr : pr.rays) {
    if (!tr.hit) continue;
    gd.assign(grads ? tr.count : 0, 0.0);
    L.distortion += distortion_loss(std::span<const Real>(tr.volume.weights), std::span<const double>(tr.depths),
                                    tr.near, tr.far, std::span<double>(gd)) / static_cast<double>(n);
    if (grads)
      for (int k = 0; k < tr.count; ++k)
        g_weights[tr.first + k] = static_cast<Real>(c.lambda_dist * gd[k] / static_cast<double>(n));
  }

  if (grads) {
    std::vector<Real> g_rgb(3 * n);
    for (std::size_t i = 0; i < 3 * n; ++i) g_rgb[i] = static_cast<Real>(g_mse[i] + c.lambda_perc * g_proxy[i]);
    backward_patch(model, pr, std::span<const Real>(g_rgb), std::span<const Real>(g_weights), ro, *grads);
  }

  // Deformation regularizer on a random subset of the winning surface pairs.
  if (fb.residual_used) {
    std::vector<int> rows;
    for (int smp = 0; smp < fb.size(); ++smp)
      if (fb.winner[smp] >= 0) rows.push_back(fb.winner[smp]);
    SplitMix64 rng(in.reg_seed);
    const int m = std::min<int>(c.reg_batch, static_cast<int>(rows.size()));
    for (int i = 0; i < m; ++i) std::swap(rows[i], rows[i + rng.below(rows.size() - i)]);
    rows.resize(m);
    if (m > 0) {
      const auto& cfg = model.config();
      const int D = cfg.residual_coord_dims(), X = cfg.residual_extra_dims();
      std::vector<Real> coords(static_cast<std::size_t>(m) * D), extras(static_cast<std::size_t>(m) * X);
      for (int i = 0; i < m; ++i) {
        std::copy_n(fb.residual.coords.data() + std::size_t(rows[i]) * D, D, coords.data() + std::size_t(i) * D);
        std::copy_n(fb.residual.extras.data() + std::size_t(rows[i]) * X, X, extras.data() + std::size_t(i) * X);
      }
      const auto dl = deformation_regularizer(model, in.frame, std::span<const Real>(coords),
                                              std::span<const Real>(extras), grads, c.lambda_mag, c.lambda_smooth);
      L.deform_magnitude = dl.magnitude;
      L.deform_smoothness = dl.smoothness;
    }
  }
  L.total = L.mse + c.lambda_perc * L.proxy + c.lambda_dist * L.distortion + c.lambda_mag * L.deform_magnitude +
            c.lambda_smooth * L.deform_smoothness;
  return L;
}

struct ViewMetrics {
  int frame = 0;
  std::string camera;
  double psnr = 0;
  double ssim = 0;
};

struct EvalReport {
  std::vector<ViewMetrics> views;
  double mean_psnr = 0;
  double mean_ssim = 0;
};

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j;
  j["mean_psnr"] = r.mean_psnr;
  j["mean_ssim"] = r.mean_ssim;
  j["views"] = nlohmann::json::array();
  for (const auto& v : r.views) j["views"].push_back({{"frame", v.frame}, {"camera", v.camera}, {"psnr", v.psnr}, {"ssim", v.ssim}});
  return j;
}

inline std::vector<int> eval_frames(int frame_count, int stride) {
  std::vector<int> f;
  for (int t = 0; t < frame_count; t += std::max(stride, 1)) f.push_back(t);
  return f;
}

// Render options for evaluation and for the render command; identical inputs
// give identical images.
inline RenderOptions eval_render_options(const TrainConfig& c, const std::array<double, 3>& background,
                                         int camera_index, int threads) {
  RenderOptions ro;
  ro.samples = c.samples;
  ro.background = background;
  ro.seed = mix_seed(c.seed, 0x6576616cull);
  ro.stream = static_cast<std::uint64_t>(camera_index);
  ro.field.threads = threads;
  return ro;
}

template <typename Real>
RenderedImage render_view(const FieldModel<Real>& model, const SkinnedBody& body, const FrameGeometry& geom,
                          const Camera& cam, const TrainConfig& c, const std::array<double, 3>& background,
                          int camera_index, int threads) {
  return render_image(model, body, geom, cam, eval_render_options(c, background, camera_index, threads));
}

// PSNR and SSIM on the held-out cameras for the given frames. Rendered views
// are appended to `renders` when given, in the order of the report.
// Scores one image per (frame, held-out camera); `image(f, ci)` supplies it.
template <typename Fn>
EvalReport score_held_out(const Dataset& d, const std::vector<int>& frames, Fn&& image) {
  const auto cams = d.cameras_with_role("eval");
  if (cams.empty()) throw DataError("dataset has no held-out cameras");
  EvalReport r;
  for (int f : frames) {
    if (f < 0 || f >= d.frame_count()) throw ConfigError("evaluation frame " + std::to_string(f) + " out of range");
    for (int ci : cams) {
      const Image& img = image(f, ci);
      if (!img.same_shape(d.frames[f].images[ci]))
        throw DimensionError("render of frame " + std::to_string(f) + ", camera " + d.cameras[ci].name +
                             " does not match the ground-truth shape");
      ViewMetrics v;
      v.frame = f;
      v.camera = d.cameras[ci].name;
      v.psnr = psnr(img, d.frames[f].images[ci], &d.frames[f].masks[ci]);
      v.ssim = ssim(img, d.frames[f].images[ci]);
      r.views.push_back(v);
    }
  }
  for (const auto& v : r.views) {
    r.mean_psnr += v.psnr / r.views.size();
    r.mean_ssim += v.ssim / r.views.size();
  }
  return r;
}

template <typename Real>
EvalReport evaluate(const FieldModel<Real>& model, const TrainScene& s, const TrainConfig& c,
                    const std::vector<int>& frames, int threads = 1, std::vector<RenderedImage>* renders = nullptr) {
  const Dataset& d = *s.data;
  RenderedImage img;
  return score_held_out(d, frames, [&](int f, int ci) -> const Image& {
    img = render_view(model, d.body, s.geoms[f], d.cameras[ci], c, d.background, ci, threads);
    if (renders) renders->push_back(img);
    return img.color;
  });
}

// <dir>/renders/<frame>_<camera>.png
inline std::string render_path(const std::string& dir, int frame, const std::string& camera) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d", frame);
  return (std::filesystem::path(dir) / "renders" / (std::string(buf) + "_" + camera + ".png")).string();
}

struct EvalPoint {
  int iter = 0;
  double psnr = 0;
};

struct TrainResult {
  int iterations = 0;  // steps actually taken
  int skipped_steps = 0;
  std::vector<EvalPoint> history;
  EvalReport final_eval;
  double wall_seconds = 0;
};

struct TrainOutputs {
  std::string dir;                  // checkpoint + logs; empty: nothing written
  std::ostream* progress = nullptr;  // human-readable progress lines
};

template <typename Real>
class Trainer {
 public:
  Trainer(const Dataset& d, const TrainConfig& cfg)
      : cfg_(apply_ablation(cfg)), data_(&d), threads_(resolve_thread_count(cfg.threads)) {
    cfg_.validate();
    const Camera& cam = d.cameras[d.cameras_with_role("train").at(0)];
    if (cfg_.patch > cam.width || cfg_.patch > cam.height) throw ConfigError("patch size exceeds the training image");
    model_ = FieldModel<Real>(build_field_config(cfg_, d.body, d.frame_count()));
    grads_ = model_.zeros_like();
    scene_ = make_train_scene(d, model_.config(), threads_);
  }

  const TrainConfig& config() const { return cfg_; }
  const FieldModel<Real>& model() const { return model_; }
  FieldModel<Real>& model() { return model_; }
  const TrainScene& scene() const { return scene_; }
  int iteration() const { return iter_; }
  int threads() const { return threads_; }
  int skipped_steps() const { return skipped_; }

  // One optimization step; returns the losses before the update.
  LossBreakdown step() {
    const StepInput in = sample_step(scene_, cfg_, iter_);
    grads_.set_zero();
    const auto L = training_loss(model_, scene_, cfg_, in, &grads_, threads_);
    auto p = parameter_spans(model_);
    auto g = parameter_spans(grads_);
    if (!std::isfinite(L.total) ||
        !adam_step(adam_, std::span<const std::span<Real>>(p), std::span<const std::span<Real>>(g), cfg_.lr))
      ++skipped_;
    ++iter_;
    return L;
  }

  EvalReport evaluate_now(std::vector<RenderedImage>* renders = nullptr) const {
    return evaluate(model_, scene_, cfg_, eval_frames(data_->frame_count(), cfg_.eval_frame_stride), threads_, renders);
  }

  Checkpoint<Real> checkpoint() const {
    Checkpoint<Real> c;
    c.train = cfg_;
    c.model = model_;
    c.adam = adam_;
    c.iteration = iter_;
    c.body = data_->body;
    c.poses = data_->poses();
    c.cameras = data_->cameras;
    c.roles = data_->roles;
    c.background = data_->background;
    return c;
  }

  TrainResult run(const TrainOutputs& out = {}) {
    namespace fs = std::filesystem;
    std::ofstream metrics, timing;
    if (!out.dir.empty()) {
      std::error_code ec;
      fs::create_directories(out.dir, ec);
      if (ec) throw IoError("cannot create " + out.dir + ": " + ec.message());
      metrics.open(fs::path(out.dir) / "metrics.jsonl", std::ios::binary);
      timing.open(fs::path(out.dir) / "timing.jsonl", std::ios::binary);
      if (!metrics || !timing) throw IoError("cannot write logs in " + out.dir);
    }
    using clock = std::chrono::steady_clock;
    const auto t0 = clock::now();
    auto wall_ms = [&] { return std::chrono::duration<double, std::milli>(clock::now() - t0).count(); };
    TrainResult res;
    std::optional<double> last_psnr;
    std::optional<EvalReport> last_report;
    std::vector<RenderedImage> last_renders;
    LossBreakdown avg;
    int avg_n = 0;
    while (iter_ < cfg_.iters) {
      const auto L = step();
      const int it = iter_;
      avg.total += L.total;
      ++avg_n;
      std::optional<double> ps;
      if (it % cfg_.eval_every == 0 || it == cfg_.iters) {
        last_renders.clear();
        last_report = evaluate_now(out.dir.empty() ? nullptr : &last_renders);
        ps = last_report->mean_psnr;
        last_psnr = ps;
        res.history.push_back({it, *ps});
      }
      if (it % cfg_.log_every == 0 || ps) {
        nlohmann::json j;
        j["iter"] = it;
        j["losses"] = to_json(L);
        j["psnr"] = ps ? nlohmann::json(*ps) : nlohmann::json(nullptr);
        j["skipped"] = skipped_;
        if (metrics) metrics << j.dump() << "\n";
        if (timing) timing << nlohmann::json{{"iter", it}, {"wall_ms", wall_ms()}}.dump() << "\n";
      }
      if (out.progress && (it % cfg_.print_every == 0 || it == cfg_.iters)) {
        char line[160];
        std::snprintf(line, sizeof line, "iter %6d  loss %.5f  psnr %s  wall %.1fs\n", it, avg.total / avg_n,
                      last_psnr ? std::to_string(*last_psnr).c_str() : "-", wall_ms() / 1000.0);
        *out.progress << line << std::flush;
        avg = {};
        avg_n = 0;
      }
      if (ps && cfg_.stop_psnr > 0 && *ps >= cfg_.stop_psnr) break;
    }
    res.iterations = iter_;
    res.skipped_steps = skipped_;
    if (last_report && !res.history.empty() && res.history.back().iter == iter_) {
      res.final_eval = *last_report;
    } else {
      last_renders.clear();
      res.final_eval = evaluate_now(out.dir.empty() ? nullptr : &last_renders);
    }
    res.wall_seconds = wall_ms() / 1000.0;
    if (!out.dir.empty()) {
      save_checkpoint(checkpoint(), (fs::path(out.dir) / "model.ckpt").string());
      detail::write_text_file((fs::path(out.dir) / "eval.json").string(), to_json(res.final_eval).dump(2) + "\n");
      fs::create_directories(fs::path(out.dir) / "renders");
      for (std::size_t i = 0; i < last_renders.size(); ++i)
        write_png(render_path(out.dir, res.final_eval.views[i].frame, res.final_eval.views[i].camera),
                  last_renders[i].color);
    }
    return res;
  }

 private:
  TrainConfig cfg_;
  const Dataset* data_;
  int threads_;
  FieldModel<Real> model_;
  FieldModel<Real> grads_;
  AdamState adam_;
  TrainScene scene_;
  int iter_ = 0;
  int skipped_ = 0;
};

template <typename Real = float>
TrainResult train(const Dataset& d, const TrainConfig& cfg, const TrainOutputs& out = {}) {
  Trainer<Real> t(d, cfg);
  return t.run(out);
}

}  // namespace pnvr
