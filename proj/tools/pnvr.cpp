#include <pnvr/cli/commands.hpp>

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace {

using namespace pnvr;

// Flags shared by the training-related subcommands. Values left unset keep
// whatever the config file (or the built-in default) says.
struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads, iters, patch;
  std::optional<double> lr;
  std::optional<std::string> ablation;
  bool no_warmup = false;
  std::string out;

  void add(CLI::App* app, bool training) {
    app->add_option("--config", config, "Key-value config file");
    app->add_option("--seed", seed, "Random seed");
    app->add_option("--threads", threads, "Worker threads (default: PNVR_THREADS, then hardware)");
    app->add_option("--out", out, "Output directory");
    if (!training) return;
    app->add_option("--iters", iters, "Training iterations");
    app->add_option("--patch", patch, "Patch edge length in pixels");
    app->add_option("--lr", lr, "Adam learning rate");
    app->add_option("--ablation", ablation, "Model variant tag");
    app->add_flag("--no-warmup", no_warmup, "Enable the residual field from the first iteration");
  }

  TrainConfig resolve() const {
    TrainConfig c = config.empty() ? TrainConfig{} : load_config_file(config);
    if (seed) c.seed = *seed;
    if (threads) c.threads = *threads;
    if (iters) c.iters = *iters;
    if (patch) c.patch = *patch;
    if (lr) c.lr = *lr;
    if (ablation) c.ablation = *ablation;
    if (no_warmup) c.warmup_iters = 0;
    c.validate();
    return c;
  }
};

std::vector<std::string> split_tags(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string t;
  while (std::getline(in, t, ','))
    if (!t.empty()) out.push_back(t);
  return out;
}

void write_json(const std::string& path, const nlohmann::json& j) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f << j.dump(2) << "\n";
}

int run(int argc, char** argv) {
  CLI::App app{"Part-based hash-grid radiance fields of skinned bodies"};
  app.require_subcommand(1);

  CommonFlags synth_f, train_f, render_f, eval_f, ablate_f, self_f;

  auto* synth = app.add_subcommand("synth", "Generate the synthetic toy dataset");
  cli::SynthArgs sa;
  synth_f.add(synth, false);
  synth->add_option("--frames", sa.frames, "Frame count");
  synth->add_option("--width", sa.width, "Image width");
  synth->add_option("--height", sa.height, "Image height");
  synth->add_option("--motion", sa.motion, "Motion preset: wave, walk-cycle, random-smooth");

  auto* train = app.add_subcommand("train", "Train a model on a dataset");
  std::string train_data;
  train_f.add(train, true);
  train->add_option("--data", train_data, "Dataset directory")->required();

  auto* render = app.add_subcommand("render", "Render frames from a checkpoint");
  std::string ckpt_path;
  std::vector<int> render_frames;
  cli::CameraChoice cam;
  render_f.add(render, false);
  render->add_option("--checkpoint", ckpt_path, "Checkpoint file")->required();
  render->add_option("--camera", cam.name, "Camera stored in the checkpoint (default: orbit camera)");
  render->add_option("--azimuth", cam.azimuth, "Orbit camera azimuth, degrees");
  render->add_option("--elevation", cam.elevation, "Orbit camera elevation, degrees");
  render->add_option("--distance", cam.distance, "Orbit camera distance");
  render->add_option("--fov", cam.fov_y, "Orbit camera vertical field of view, radians");
  render->add_option("--width", cam.width, "Orbit camera width");
  render->add_option("--height", cam.height, "Orbit camera height");
  render->add_option("--frames", render_frames, "Frame indices (default: all)");

  auto* eval = app.add_subcommand("eval", "Score a checkpoint on the held-out cameras");
  std::string eval_ckpt, eval_renders, eval_data;
  eval_f.add(eval, false);
  auto* eval_ckpt_opt = eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file");
  eval->add_option("--renders", eval_renders, "Score <dir>/renders/<frame>_<camera>.png instead of a checkpoint")
      ->excludes(eval_ckpt_opt);
  eval->add_option("--data", eval_data, "Dataset directory")->required();

  auto* ablate = app.add_subcommand("ablate", "Compare model variants under an equal budget");
  std::string ablate_data, tags = "full,no_part,no_uv,no_perc,pe,xyz_code,xyz_pose,table_2_15,table_2_20";
  std::string budget_kind = "wall";
  double budget = 300;
  ablate_f.add(ablate, true);
  ablate->add_option("--data", ablate_data, "Dataset directory")->required();
  ablate->add_option("--tags", tags, "Comma-separated variant tags");
  ablate->add_option("--budget-kind", budget_kind, "wall (seconds per variant) or iters")
      ->check(CLI::IsMember({"wall", "iters"}));
  ablate->add_option("--budget", budget, "Budget per variant");

  auto* selftest = app.add_subcommand("selftest", "Run the finite-difference and oracle suites");
  bool inject = false;
  self_f.add(selftest, false);
  selftest->add_flag("--inject-fault", inject, "Corrupt the density gradient to show the suites catch it");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(ErrorKind::config);
  }

  if (*synth) {
    sa.out = synth_f.out;
    if (synth_f.seed) sa.seed = *synth_f.seed;
    if (synth_f.threads) sa.threads = *synth_f.threads;
    const auto d = cli::cmd_synth(sa);
    std::printf("wrote %d frames x %zu cameras to %s\n", d.frame_count(), d.cameras.size(), sa.out.c_str());
  } else if (*train) {
    const TrainConfig c = train_f.resolve();
    const auto res = cli::cmd_train(train_data, c, train_f.out, &std::cout);
    std::printf("done: %d iterations, held-out psnr %.3f ssim %.4f, wall %.1fs\n", res.iterations,
                res.final_eval.mean_psnr, res.final_eval.mean_ssim, res.wall_seconds);
  } else if (*render) {
    const int threads = render_f.threads.value_or(0);
    for (const auto& p : cli::cmd_render(ckpt_path, cam, render_frames, render_f.out, threads))
      std::printf("%s\n", p.c_str());
  } else if (*eval) {
    if (eval_ckpt.empty() == eval_renders.empty()) throw ConfigError("eval needs --checkpoint or --renders");
    const auto rep = eval_ckpt.empty()
                         ? cli::cmd_eval_renders(eval_renders, eval_data, eval_f.resolve().eval_frame_stride)
                         : cli::cmd_eval(eval_ckpt, eval_data, eval_f.threads.value_or(0));
    cli::print_eval_table(rep, std::cout);
    if (!eval_f.out.empty()) {
      std::filesystem::create_directories(eval_f.out);
      write_json((std::filesystem::path(eval_f.out) / "eval.json").string(), to_json(rep));
    }
  } else if (*ablate) {
    const TrainConfig c = ablate_f.resolve();
    const auto list = split_tags(tags);
    for (const auto& t : list) check_ablation_tag(t);
    const Dataset d = read_dataset(ablate_data);
    const auto kind = budget_kind == "iters" ? cli::Budget::iterations : cli::Budget::wall_seconds;
    const auto rows = cli::run_ablation(d, c, list, kind, budget, &std::cout);
    cli::print_ablation_table(rows, std::cout);
    if (!ablate_f.out.empty()) {
      std::filesystem::create_directories(ablate_f.out);
      nlohmann::json j;
      j["budget_kind"] = budget_kind;
      j["budget"] = budget;
      j["seed"] = c.seed;
      for (const auto& r : rows) j["rows"].push_back(cli::to_json(r));
      write_json((std::filesystem::path(ablate_f.out) / "ablation.json").string(), j);
    }
  } else if (*selftest) {
    return cli::cmd_selftest(inject, std::cout) ? 0 : static_cast<int>(ErrorKind::numeric);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const pnvr::Error& e) {
    std::fprintf(stderr, "pnvr: %s\n", e.what());
    return e.exit_code();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "pnvr: %s\n", e.what());
    return static_cast<int>(pnvr::ErrorKind::data);
  }
}
