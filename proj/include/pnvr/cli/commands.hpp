#pragma once

// Subcommand implementations behind the pnvr executable. Argument parsing
// lives in tools/pnvr.cpp; everything here is callable from tests.

#include <pnvr/synthdata/dataset.hpp>
#include <pnvr/testing/suites.hpp>
#include <pnvr/trainer/train.hpp>

#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace pnvr::cli {

// ------------------------------------------------------------------- synth

struct SynthArgs {
  std::string out;
  int frames = 20;
  int width = 128;
  int height = 128;
  std::string motion = "wave";
  std::uint64_t seed = 7;
  int threads = 0;
};

inline Dataset cmd_synth(const SynthArgs& a) {
  if (a.out.empty()) throw ConfigError("synth needs an output directory (--out)");
  SynthOptions so;
  so.frames = a.frames;
  so.width = a.width;
  so.height = a.height;
  so.motion.preset = motion_preset_from_string(a.motion);
  so.motion.seed = a.seed;
  so.threads = resolve_thread_count(a.threads);
  Dataset d = synthesize_dataset(default_toy_spec(), so);
  write_dataset(d, a.out);
  return d;
}

// ------------------------------------------------------------------- train

inline TrainResult cmd_train(const std::string& dataset_dir, const TrainConfig& cfg, const std::string& out,
                             std::ostream* progress) {
  if (out.empty()) throw ConfigError("train needs an output directory (--out)");
  cfg.validate();
  const Dataset d = read_dataset(dataset_dir);
  Trainer<float> t(d, cfg);
  if (progress)
    *progress << "training " << t.config().ablation << " for " << cfg.iters << " iterations on "
              << d.frame_count() << " frames, " << t.threads() << " thread(s)\n";
  auto res = t.run({out, progress});
  if (res.skipped_steps > 0) throw NumericError(std::to_string(res.skipped_steps) + " steps had non-finite values");
  return res;
}

// ------------------------------------------------------------------ render

struct CameraChoice {
  std::string name;  // a camera stored in the checkpoint
  // Otherwise an orbit camera around the body center.
  double azimuth = 0, elevation = 0, distance = 3.4, fov_y = 0.7;  // degrees, degrees, meters, radians
  int width = 128, height = 128;
};

struct RenderJob {
  Camera camera;
  int camera_index = 0;  // per-ray seed stream
};

template <typename Real>
RenderJob resolve_camera(const Checkpoint<Real>& c, const CameraChoice& choice) {
  RenderJob job;
  if (!choice.name.empty()) {
    for (std::size_t i = 0; i < c.cameras.size(); ++i)
      if (c.cameras[i].name == choice.name) {
        job.camera = c.cameras[i];
        job.camera_index = static_cast<int>(i);
        return job;
      }
    throw ConfigError("no camera named '" + choice.name + "' in the checkpoint");
  }
  const Aabb b = c.body.bounds();
  job.camera = orbit_camera("orbit", choice.azimuth, choice.elevation, choice.distance, b.center(), choice.fov_y,
                            choice.width, choice.height);
  job.camera.validate();
  job.camera_index = static_cast<int>(c.cameras.size());
  return job;
}

// Renders the given frames of a checkpoint; uses the same options as the
// evaluation renders written during training.
template <typename Real>
std::vector<RenderedImage> render_checkpoint(const Checkpoint<Real>& c, const CameraChoice& choice,
                                             const std::vector<int>& frames, int threads) {
  const int F = static_cast<int>(c.poses.size());
  for (int f : frames)
    if (f < 0 || f >= F)
      throw ConfigError("frame " + std::to_string(f) + " out of range: checkpoint has frames 0.." +
                        std::to_string(F - 1));
  const RenderJob job = resolve_camera(c, choice);
  const auto& fc = c.model.config();
  const auto parts = decompose_parts(c.body, fc.part_sets, fc.part_names);
  std::vector<RenderedImage> out;
  for (int f : frames) {
    const auto geom = build_frame_geometry(c.body, parts, c.poses[f], F, fc.cull_radius);
    out.push_back(render_view(c.model, c.body, geom, job.camera, c.train, c.background, job.camera_index, threads));
  }
  return out;
}

inline std::vector<std::string> cmd_render(const std::string& checkpoint, const CameraChoice& choice,
                                           const std::vector<int>& frames, const std::string& out, int threads) {
  if (out.empty()) throw ConfigError("render needs an output directory (--out)");
  const auto c = load_checkpoint<float>(checkpoint);
  std::vector<int> fr = frames;
  if (fr.empty())
    for (int f = 0; f < static_cast<int>(c.poses.size()); ++f) fr.push_back(f);
  const auto images = render_checkpoint(c, choice, fr, resolve_thread_count(threads));
  std::filesystem::create_directories(out);
  const std::string cam = choice.name.empty() ? "orbit" : choice.name;
  std::vector<std::string> paths;
  for (std::size_t i = 0; i < fr.size(); ++i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d", fr[i]);
    const auto stem = std::filesystem::path(out) / (std::string(buf) + "_" + cam);
    paths.push_back(stem.string() + ".png");
    write_png(paths.back(), images[i].color);
    write_png(stem.string() + ".opacity.png", images[i].opacity, 16);
  }
  return paths;
}

// -------------------------------------------------------------------- eval

// Scores a checkpoint on a dataset exactly as the trainer does.
inline EvalReport cmd_eval(const std::string& checkpoint, const std::string& dataset_dir, int threads) {
  const auto c = load_checkpoint<float>(checkpoint);
  const Dataset d = read_dataset(dataset_dir);
  if (body_hash(d.body) != body_hash(c.body)) throw DataError("dataset body does not match the checkpoint");
  const int T = resolve_thread_count(threads);
  const TrainScene scene = make_train_scene(d, c.model.config(), T);
  return evaluate(c.model, scene, c.train, eval_frames(d.frame_count(), c.train.eval_frame_stride), T);
}

inline void print_eval_table(const EvalReport& r, std::ostream& os) {
  char line[128];
  std::snprintf(line, sizeof line, "%-6s %-10s %8s %8s\n", "frame", "camera", "psnr", "ssim");
  os << line;
  for (const auto& v : r.views) {
    std::snprintf(line, sizeof line, "%-6d %-10s %8.3f %8.4f\n", v.frame, v.camera.c_str(), v.psnr, v.ssim);
    os << line;
  }
  std::snprintf(line, sizeof line, "%-17s %8.3f %8.4f\n", "mean", r.mean_psnr, r.mean_ssim);
  os << line;
}

// ------------------------------------------------------------------ ablate

enum class Budget { wall_seconds, iterations };

struct AblationRow {
  std::string tag;
  int iterations = 0;
  double wall_seconds = 0;
  double psnr = 0;
  double ssim = 0;
  std::size_t parameters = 0;
};

inline nlohmann::json to_json(const AblationRow& r) {
  return {{"tag", r.tag},   {"iterations", r.iterations}, {"wall_seconds", r.wall_seconds},
          {"psnr", r.psnr}, {"ssim", r.ssim},             {"parameters", r.parameters}};
}

// Trains every tag from the same base config for an equal budget. Under the
// iteration budget the table depends only on the config and seed; under the
// wall-time budget the iteration counts depend on the machine and are
// reported per row.
inline std::vector<AblationRow> run_ablation(const Dataset& d, const TrainConfig& base,
                                             const std::vector<std::string>& tags, Budget budget, double amount,
                                             std::ostream* progress) {
  for (const auto& t : tags) check_ablation_tag(t);
  if (!(amount > 0)) throw ConfigError("ablation budget must be positive");
  std::vector<AblationRow> rows;
  for (const auto& tag : tags) {
    TrainConfig c = base;
    c.ablation = tag;
    c.iters = budget == Budget::iterations ? static_cast<int>(amount) : std::numeric_limits<int>::max();
    Trainer<float> t(d, c);
    const auto t0 = std::chrono::steady_clock::now();
    auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };
    if (budget == Budget::iterations) {
      while (t.iteration() < c.iters) t.step();
    } else {
      while (elapsed() < amount) t.step();
    }
    if (t.skipped_steps() > 0) throw NumericError(tag + ": " + std::to_string(t.skipped_steps()) + " skipped steps");
    AblationRow r;
    r.tag = tag;
    r.iterations = t.iteration();
    r.wall_seconds = elapsed();
    const auto rep = t.evaluate_now();
    r.psnr = rep.mean_psnr;
    r.ssim = rep.mean_ssim;
    r.parameters = t.model().parameter_count();
    rows.push_back(r);
    if (progress) {
      char line[160];
      std::snprintf(line, sizeof line, "%-11s iters %6d  psnr %7.3f  ssim %.4f  train %.1fs\n", tag.c_str(),
                    r.iterations, r.psnr, r.ssim, r.wall_seconds);
      *progress << line << std::flush;
    }
  }
  return rows;
}

inline void print_ablation_table(const std::vector<AblationRow>& rows, std::ostream& os) {
  char line[160];
  std::snprintf(line, sizeof line, "%-11s %8s %10s %9s %8s %10s\n", "variant", "iters", "params", "psnr", "ssim",
                "wall_s");
  os << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-11s %8d %10zu %9.3f %8.4f %10.1f\n", r.tag.c_str(), r.iterations,
                  r.parameters, r.psnr, r.ssim, r.wall_seconds);
    os << line;
  }
}

// Scores precomputed renders laid out as <dir>/renders/<frame>_<camera>.png,
// over the same views and with the same metrics as cmd_eval.
inline EvalReport cmd_eval_renders(const std::string& dir, const std::string& dataset_dir, int stride) {
  const Dataset d = read_dataset(dataset_dir);
  Image img;
  return score_held_out(d, eval_frames(d.frame_count(), stride), [&](int f, int ci) -> const Image& {
    img = read_png(render_path(dir, f, d.cameras[ci].name));
    return img;
  });
}

// ---------------------------------------------------------------- selftest

inline bool cmd_selftest(bool inject_fault, std::ostream& os) {
  gradient_fault_injection().store(inject_fault);
  bool all = true;
  int n = 0, passed = 0;
  for (const auto& suite : testing::selftest_suites()) {
    const auto r = suite();
    char head[96];
    std::snprintf(head, sizeof head, "%-4s %-28s %7.2fs  ", r.pass ? "ok" : "FAIL", r.name.c_str(), r.seconds);
    os << head << r.detail << "\n" << std::flush;
    all = all && r.pass;
    ++n;
    passed += r.pass;
  }
  gradient_fault_injection().store(false);
  os << passed << "/" << n << " suites passed\n";
  return all;
}

}  // namespace pnvr::cli
