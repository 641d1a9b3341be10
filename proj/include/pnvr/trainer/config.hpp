#pragma once

#include <pnvr/core/error.hpp>
#include <pnvr/geometry/parts.hpp>
#include <pnvr/network/field_model.hpp>

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace pnvr {

inline const std::vector<std::string>& ablation_tags() {
  static const std::vector<std::string> tags{"full",     "no_part",  "no_uv",      "no_perc",   "pe",
                                             "xyz_code", "xyz_pose", "table_2_15", "table_2_20"};
  return tags;
}

inline void check_ablation_tag(const std::string& tag) {
  const auto& t = ablation_tags();
  if (std::find(t.begin(), t.end(), tag) == t.end()) throw ConfigError("unknown ablation tag '" + tag + "'");
}

struct TrainConfig {
  double lr = 5e-4;
  int iters = 5000;
  int patch = 32;
  int samples = 64;
  double lambda_perc = 0.1;
  double lambda_dist = 0.01;
  double lambda_mag = 1.0;
  double lambda_smooth = 0.1;
  std::uint64_t seed = 1;
  std::string ablation = "full";
  int warmup_iters = 500;  // residual frozen (dx = 0) before this iteration
  int reg_batch = 256;     // surface points per deformation-regularizer evaluation
  int threads = 0;         // 0: PNVR_THREADS or hardware
  int log_every = 50;
  int eval_every = 500;
  int eval_frame_stride = 5;  // evaluate on every n-th frame
  int print_every = 250;
  double stop_psnr = 0.0;  // stop once held-out PSNR reaches this (0: never)
  // Field architecture knobs.
  int grid_levels = 8;
  int grid_features = 2;
  int grid_base_resolution = 16;
  double grid_growth = 1.5;
  int head_table_log2 = 17;
  int torso_table_log2 = 16;
  int limb_table_log2 = 15;
  int residual_levels = 6;
  int residual_table_log2 = 14;
  double cull_radius = 0.10;
  double max_residual = 0.10;
  double density_scale = 100.0;
  double density_bias_init = -10.0;
  // Widths; the tiny gradient-check configuration shrinks these.
  int density_hidden = 64;
  int color_hidden = 64;
  int residual_hidden = 64;
  int z_dim = 15;
  int latent_dim = 8;

  void validate() const {
    check_ablation_tag(ablation);
    if (!(lr > 0)) throw ConfigError("learning rate must be positive");
    if (iters < 0) throw ConfigError("iteration count must be >= 0");
    if (patch < 1) throw ConfigError("patch size must be >= 1");
    if (samples < 1) throw ConfigError("samples per ray must be >= 1");
    for (double l : {lambda_perc, lambda_dist, lambda_mag, lambda_smooth})
      if (!(l >= 0)) throw ConfigError("loss weights must be >= 0");
    if (log_every < 1 || eval_every < 1 || eval_frame_stride < 1 || print_every < 1)
      throw ConfigError("logging intervals must be >= 1");
    for (int t : {head_table_log2, torso_table_log2, limb_table_log2, residual_table_log2})
      if (t < 1 || t > 26) throw ConfigError("table size exponents must be in [1, 26]");
  }
};

namespace detail {

template <typename T>
T parse_value(const std::string& key, const std::string& v) {
  std::istringstream in(v);
  T out{};
  in >> out;
  if (!in || !(in >> std::ws).eof()) throw ConfigError("bad value '" + v + "' for key '" + key + "'");
  return out;
}

template <>
inline std::string parse_value<std::string>(const std::string&, const std::string& v) {
  return v;
}

template <>
inline bool parse_value<bool>(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("bad boolean '" + v + "' for key '" + key + "'");
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

// Visits every configurable field as (key, reference).
template <typename Fn>
void visit_config(TrainConfig& c, Fn&& fn) {
  fn("lr", c.lr);
  fn("iters", c.iters);
  fn("patch", c.patch);
  fn("samples", c.samples);
  fn("lambda_perc", c.lambda_perc);
  fn("lambda_dist", c.lambda_dist);
  fn("lambda_mag", c.lambda_mag);
  fn("lambda_smooth", c.lambda_smooth);
  fn("seed", c.seed);
  fn("ablation", c.ablation);
  fn("warmup_iters", c.warmup_iters);
  fn("reg_batch", c.reg_batch);
  fn("threads", c.threads);
  fn("log_every", c.log_every);
  fn("eval_every", c.eval_every);
  fn("eval_frame_stride", c.eval_frame_stride);
  fn("print_every", c.print_every);
  fn("stop_psnr", c.stop_psnr);
  fn("grid_levels", c.grid_levels);
  fn("grid_features", c.grid_features);
  fn("grid_base_resolution", c.grid_base_resolution);
  fn("grid_growth", c.grid_growth);
  fn("head_table_log2", c.head_table_log2);
  fn("torso_table_log2", c.torso_table_log2);
  fn("limb_table_log2", c.limb_table_log2);
  fn("residual_levels", c.residual_levels);
  fn("residual_table_log2", c.residual_table_log2);
  fn("cull_radius", c.cull_radius);
  fn("max_residual", c.max_residual);
  fn("density_scale", c.density_scale);
  fn("density_bias_init", c.density_bias_init);
  fn("density_hidden", c.density_hidden);
  fn("color_hidden", c.color_hidden);
  fn("residual_hidden", c.residual_hidden);
  fn("z_dim", c.z_dim);
  fn("latent_dim", c.latent_dim);
}

inline void set_config_value(TrainConfig& c, const std::string& key, const std::string& value) {
  bool found = false;
  visit_config(c, [&](const char* k, auto& ref) {
    if (key != k) return;
    ref = detail::parse_value<std::decay_t<decltype(ref)>>(key, value);
    found = true;
  });
  if (!found) throw ConfigError("unknown config key '" + key + "'");
}

// Plain "key = value" lines; '#' starts a comment.
inline TrainConfig parse_config_text(const std::string& text, TrainConfig base = {}) {
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(n) + ": expected key = value");
    set_config_value(base, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
  return base;
}

inline TrainConfig load_config_file(const std::string& path, TrainConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), base);
}

inline nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json j;
  visit_config(const_cast<TrainConfig&>(c), [&](const char* k, auto& ref) { j[k] = ref; });
  return j;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  visit_config(c, [&](const char* k, auto& ref) {
    if (j.contains(k)) ref = j.at(k).get<std::decay_t<decltype(ref)>>();
  });
  return c;
}

inline std::string config_to_text(const TrainConfig& c) {
  std::ostringstream out;
  const auto j = to_json(c);
  for (auto it = j.begin(); it != j.end(); ++it)
    out << it.key() << " = " << (it->is_string() ? it->get<std::string>() : it->dump()) << "\n";
  return out.str();
}

// Effective training settings of an ablation (only no_perc touches them).
inline TrainConfig apply_ablation(TrainConfig c) {
  check_ablation_tag(c.ablation);
  if (c.ablation == "no_perc") c.lambda_perc = 0.0;
  return c;
}

inline int part_table_log2(const TrainConfig& c, const std::string& part_name) {
  if (c.ablation == "table_2_15") return 15;
  if (c.ablation == "table_2_20") return 20;
  if (part_name.find("head") != std::string::npos) return c.head_table_log2;
  if (part_name.find("torso") != std::string::npos) return c.torso_table_log2;
  return c.limb_table_log2;
}

inline Aabb part_rest_bounds(const SkinnedBody& body, const PartMesh& part) {
  Aabb b;
  for (int f : part.faces)
    for (int v : body.faces[f]) b.expand(body.vertices[v]);
  return b;
}

inline HashGridConfig box_grid(const TrainConfig& c, const Aabb& box, int levels, int table_log2) {
  HashGridConfig g;
  g.dims = 3;
  g.levels = levels;
  g.table_size = 1u << table_log2;
  g.feature_dim = c.grid_features;
  g.base_resolution = c.grid_base_resolution;
  g.growth = c.grid_growth;
  for (int a = 0; a < 3; ++a) {
    g.box_min[a] = box.lo[a];
    g.box_max[a] = box.hi[a];
  }
  return g;
}

// Field architecture for a training configuration (including its ablation
// tag) on a given body.
inline FieldConfig build_field_config(const TrainConfig& c, const SkinnedBody& body, int frame_count) {
  c.validate();
  FieldConfig f;
  f.frame_count = frame_count;
  f.density_hidden = c.density_hidden;
  f.color_hidden = c.color_hidden;
  f.residual_hidden = c.residual_hidden;
  f.z_dim = c.z_dim;
  f.latent_dim = c.latent_dim;
  f.cull_radius = c.cull_radius;
  f.max_residual = c.max_residual;
  f.density_scale = c.density_scale;
  f.density_bias_init = c.density_bias_init;
  f.seed = c.seed;
  const Aabb body_box = body.bounds().dilated(c.cull_radius);
  for (int a = 0; a < 3; ++a) {
    f.body_box_min[a] = body_box.lo[a];
    f.body_box_max[a] = body_box.hi[a];
  }
  const auto parts = decompose_parts(body);
  for (int k = 0; k < body.part_count(); ++k) {
    f.part_sets.push_back(body.part_sets[k]);
    f.part_names.push_back(k < static_cast<int>(body.part_names.size()) ? body.part_names[k] : "part" + std::to_string(k));
    f.part_grids.push_back(
        box_grid(c, part_rest_bounds(body, parts[k]).dilated(c.cull_radius), c.grid_levels, part_table_log2(c, f.part_names.back())));
  }

  f.residual_grid.dims = 3;
  f.residual_grid.levels = c.residual_levels;
  f.residual_grid.table_size = 1u << c.residual_table_log2;
  f.residual_grid.feature_dim = 2;
  f.residual_grid.base_resolution = c.grid_base_resolution;
  f.residual_grid.growth = c.grid_growth;
  for (int a = 0; a < kMaxGridDims; ++a) {
    f.residual_grid.box_min[a] = 0.0;
    f.residual_grid.box_max[a] = 1.0;
  }

  const std::string& tag = c.ablation;
  if (tag == "no_part") {
    // One grid and head pair over the whole body with a table twice the
    // largest part table; levels chosen to match the part-based model's
    // parameter count.
    const FieldConfig full = f;
    std::vector<int> all;
    for (int j = 0; j < body.joint_count(); ++j) all.push_back(j);
    f.part_sets = {all};
    f.part_names = {"body"};
    const std::size_t target = field_parameter_count(full);
    int table_log2 = 1;
    for (const auto& g : full.part_grids) table_log2 = std::max(table_log2, static_cast<int>(std::bit_width(g.table_size)));
    int best_levels = 1;
    std::size_t best_gap = static_cast<std::size_t>(-1);
    for (int L = 1; L <= 24; ++L) {
      f.part_grids = {box_grid(c, body_box, L, table_log2)};
      const std::size_t n = field_parameter_count(f);
      const std::size_t gap = n > target ? n - target : target - n;
      if (gap < best_gap) {
        best_gap = gap;
        best_levels = L;
      }
    }
    f.part_grids = {box_grid(c, body_box, best_levels, table_log2)};
  } else if (tag == "no_uv") {
    f.residual_input = ResidualInput::xyzt_hash;
    f.residual_grid.dims = 4;
  } else if (tag == "pe") {
    f.residual_input = ResidualInput::xyzt_freq;
    f.residual_freq = FreqEncodingConfig{4, 6, true};
    f.residual_hidden = 2 * c.residual_hidden;
    f.residual_layers = 3;
  } else if (tag == "xyz_code") {
    f.residual_input = ResidualInput::xyz_code;
  } else if (tag == "xyz_pose") {
    f.residual_input = ResidualInput::xyz_pose;
    f.pose_dim = 3 * body.joint_count();
  }
  f.validate();
  return f;
}

}  // namespace pnvr
