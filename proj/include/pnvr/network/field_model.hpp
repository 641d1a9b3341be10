#pragma once

#include <pnvr/core/error.hpp>
#include <pnvr/core/rng.hpp>
#include <pnvr/encoding/frequency.hpp>
#include <pnvr/encoding/hash_grid.hpp>
#include <pnvr/geometry/bvh.hpp>
#include <pnvr/geometry/parts.hpp>
#include <pnvr/geometry/skinned_body.hpp>
#include <pnvr/network/mlp.hpp>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace pnvr {

// What the residual deformation network is conditioned on.
enum class ResidualInput {
  uvt,        // hash-encoded surface coordinate and time (u, v, t)
  xyzt_hash,  // hash-encoded unposed point and time (x, t)
  xyzt_freq,  // frequency-encoded (x, t)
  xyz_code,   // hash-encoded x plus a learnable per-frame code
  xyz_pose,   // hash-encoded x plus the pose vector
};

inline std::string to_string(ResidualInput r) {
  switch (r) {
    case ResidualInput::uvt: return "uvt";
    case ResidualInput::xyzt_hash: return "xyzt_hash";
    case ResidualInput::xyzt_freq: return "xyzt_freq";
    case ResidualInput::xyz_code: return "xyz_code";
    case ResidualInput::xyz_pose: return "xyz_pose";
  }
  return "?";
}

inline ResidualInput residual_input_from_string(const std::string& s) {
  for (auto r : {ResidualInput::uvt, ResidualInput::xyzt_hash, ResidualInput::xyzt_freq, ResidualInput::xyz_code,
                 ResidualInput::xyz_pose})
    if (to_string(r) == s) return r;
  throw ConfigError("unknown residual input '" + s + "'");
}

struct FieldConfig {
  std::vector<std::vector<int>> part_sets;
  std::vector<std::string> part_names;
  std::vector<HashGridConfig> part_grids;

  int density_hidden = 64;
  int density_layers = 1;
  int color_hidden = 64;
  int color_layers = 2;
  int z_dim = 15;
  int latent_dim = 8;
  int frame_count = 1;
  FreqEncodingConfig dir_encoding{3, 4, true};

  ResidualInput residual_input = ResidualInput::uvt;
  HashGridConfig residual_grid;
  FreqEncodingConfig residual_freq{4, 6, true};
  int residual_hidden = 64;
  int residual_layers = 2;
  int code_dim = 8;
  int pose_dim = 0;
  // Canonical-body box used to normalize x for the xyz residual variants.
  std::array<double, 3> body_box_min{-1, -1, -1};
  std::array<double, 3> body_box_max{1, 1, 1};

  // |dx| is squashed into a ball of this radius (meters).
  double max_residual = 0.10;
  // Parts farther than this from the query point are culled (meters).
  double cull_radius = 0.10;
  // sigma = density_scale * softplus(raw); the raw bias starts at density_bias_init.
  double density_scale = 100.0;
  double density_bias_init = -10.0;
  std::uint64_t seed = 1;

  int part_count() const { return static_cast<int>(part_sets.size()); }
  bool residual_uses_hash() const { return residual_input != ResidualInput::xyzt_freq; }
  // Number of coordinate axes of a residual query.
  int residual_coord_dims() const {
    switch (residual_input) {
      case ResidualInput::uvt: return 3;
      case ResidualInput::xyzt_hash:
      case ResidualInput::xyzt_freq: return 4;
      default: return 3;
    }
  }
  int residual_extra_dims() const {
    if (residual_input == ResidualInput::xyz_code) return code_dim;
    if (residual_input == ResidualInput::xyz_pose) return pose_dim;
    return 0;
  }
  int residual_encoded_dims() const {
    return residual_uses_hash() ? residual_grid.output_dim() : residual_freq.output_dim();
  }
  int color_input_dim() const { return z_dim + dir_encoding.output_dim() + latent_dim; }

  void validate() const {
    if (part_sets.empty()) throw ConfigError("field config has no parts");
    if (part_grids.size() != part_sets.size()) throw ConfigError("one hash grid config per part required");
    for (const auto& g : part_grids) {
      g.validate();
      if (g.dims != 3) throw ConfigError("part grids must be 3D");
    }
    if (residual_uses_hash()) residual_grid.validate();
    else residual_freq.validate();
    if (residual_input == ResidualInput::uvt && residual_grid.dims != 3) throw ConfigError("uvt residual grid must be 3D");
    if (residual_input == ResidualInput::xyzt_hash && residual_grid.dims != 4)
      throw ConfigError("xyzt residual grid must be 4D");
    if ((residual_input == ResidualInput::xyz_code || residual_input == ResidualInput::xyz_pose) &&
        residual_grid.dims != 3)
      throw ConfigError("xyz residual grid must be 3D");
    if (residual_input == ResidualInput::xyzt_freq && residual_freq.dims != 4)
      throw ConfigError("xyzt frequency encoding must be 4D");
    if (residual_input == ResidualInput::xyz_pose && pose_dim <= 0) throw ConfigError("pose_dim required for xyz_pose");
    if (frame_count < 1) throw ConfigError("frame_count must be >= 1");
    if (z_dim < 0 || latent_dim < 0) throw ConfigError("negative feature widths");
    if (!(max_residual > 0) || !(cull_radius > 0) || !(density_scale > 0)) throw ConfigError("radii and scales must be positive");
  }
};

inline nlohmann::json grid_to_json(const HashGridConfig& g) {
  return {{"dims", g.dims},          {"levels", g.levels},           {"table_size", g.table_size},
          {"feature_dim", g.feature_dim}, {"base_resolution", g.base_resolution}, {"growth", g.growth},
          {"box_min", g.box_min},    {"box_max", g.box_max}};
}

inline HashGridConfig grid_from_json(const nlohmann::json& j) {
  HashGridConfig g;
  g.dims = j.at("dims");
  g.levels = j.at("levels");
  g.table_size = j.at("table_size");
  g.feature_dim = j.at("feature_dim");
  g.base_resolution = j.at("base_resolution");
  g.growth = j.at("growth");
  g.box_min = j.at("box_min");
  g.box_max = j.at("box_max");
  return g;
}

inline nlohmann::json to_json(const FieldConfig& c) {
  nlohmann::json j;
  j["part_sets"] = c.part_sets;
  j["part_names"] = c.part_names;
  for (const auto& g : c.part_grids) j["part_grids"].push_back(grid_to_json(g));
  j["density_hidden"] = c.density_hidden;
  j["density_layers"] = c.density_layers;
  j["color_hidden"] = c.color_hidden;
  j["color_layers"] = c.color_layers;
  j["z_dim"] = c.z_dim;
  j["latent_dim"] = c.latent_dim;
  j["frame_count"] = c.frame_count;
  j["dir_bands"] = c.dir_encoding.bands;
  j["residual_input"] = to_string(c.residual_input);
  j["residual_grid"] = grid_to_json(c.residual_grid);
  j["residual_freq"] = {{"dims", c.residual_freq.dims}, {"bands", c.residual_freq.bands}, {"include_input", c.residual_freq.include_input}};
  j["residual_hidden"] = c.residual_hidden;
  j["residual_layers"] = c.residual_layers;
  j["code_dim"] = c.code_dim;
  j["pose_dim"] = c.pose_dim;
  j["body_box_min"] = c.body_box_min;
  j["body_box_max"] = c.body_box_max;
  j["max_residual"] = c.max_residual;
  j["cull_radius"] = c.cull_radius;
  j["density_scale"] = c.density_scale;
  j["density_bias_init"] = c.density_bias_init;
  j["seed"] = c.seed;
  return j;
}

inline FieldConfig field_config_from_json(const nlohmann::json& j) {
  FieldConfig c;
  try {
    c.part_sets = j.at("part_sets").get<std::vector<std::vector<int>>>();
    c.part_names = j.at("part_names").get<std::vector<std::string>>();
    for (const auto& g : j.at("part_grids")) c.part_grids.push_back(grid_from_json(g));
    c.density_hidden = j.at("density_hidden");
    c.density_layers = j.at("density_layers");
    c.color_hidden = j.at("color_hidden");
    c.color_layers = j.at("color_layers");
    c.z_dim = j.at("z_dim");
    c.latent_dim = j.at("latent_dim");
    c.frame_count = j.at("frame_count");
    c.dir_encoding.bands = j.at("dir_bands");
    c.residual_input = residual_input_from_string(j.at("residual_input"));
    c.residual_grid = grid_from_json(j.at("residual_grid"));
    c.residual_freq.dims = j.at("residual_freq").at("dims");
    c.residual_freq.bands = j.at("residual_freq").at("bands");
    c.residual_freq.include_input = j.at("residual_freq").at("include_input");
    c.residual_hidden = j.at("residual_hidden");
    c.residual_layers = j.at("residual_layers");
    c.code_dim = j.at("code_dim");
    c.pose_dim = j.at("pose_dim");
    c.body_box_min = j.at("body_box_min");
    c.body_box_max = j.at("body_box_max");
    c.max_residual = j.at("max_residual");
    c.cull_radius = j.at("cull_radius");
    c.density_scale = j.at("density_scale");
    c.density_bias_init = j.at("density_bias_init");
    c.seed = j.at("seed");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed field config: ") + e.what());
  }
  c.validate();
  return c;
}

inline std::size_t mlp_parameter_count(const std::vector<int>& widths) {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) n += std::size_t(widths[l]) * widths[l + 1] + widths[l + 1];
  return n;
}

// Trainable scalar count of a field built from cfg, without allocating it.
inline std::size_t field_parameter_count(const FieldConfig& cfg) {
  std::size_t n = 0;
  for (int k = 0; k < cfg.part_count(); ++k) {
    n += cfg.part_grids[k].parameter_count();
    std::vector<int> dw{cfg.part_grids[k].output_dim()};
    for (int l = 0; l < cfg.density_layers; ++l) dw.push_back(cfg.density_hidden);
    dw.push_back(1 + cfg.z_dim);
    std::vector<int> cw{cfg.color_input_dim()};
    for (int l = 0; l < cfg.color_layers; ++l) cw.push_back(cfg.color_hidden);
    cw.push_back(3);
    n += mlp_parameter_count(dw) + mlp_parameter_count(cw);
  }
  if (cfg.residual_uses_hash()) n += cfg.residual_grid.parameter_count();
  std::vector<int> rw{cfg.residual_encoded_dims() + cfg.residual_extra_dims()};
  for (int l = 0; l < cfg.residual_layers; ++l) rw.push_back(cfg.residual_hidden);
  rw.push_back(3);
  n += mlp_parameter_count(rw);
  if (cfg.residual_input == ResidualInput::xyz_code) n += std::size_t(cfg.frame_count) * cfg.code_dim;
  n += std::size_t(cfg.frame_count) * cfg.latent_dim;
  return n;
}

template <typename Real>
struct PartField {
  HashGrid<Real> grid;
  Mlp<Real> density;  // -> [raw sigma, z]
  Mlp<Real> color;    // [z, enc(d), latent] -> raw rgb
};

template <typename Real>
struct ResidualField {
  HashGrid<Real> grid;  // unused for the frequency variant
  Mlp<Real> mlp;
  std::vector<Real> codes;  // frame_count x code_dim, xyz_code only
};

// All trainable state of the field. A zeroed copy doubles as the gradient
// accumulator, so gradients always mirror the parameter layout.
template <typename Real>
class FieldModel {
 public:
  using value_type = Real;

  FieldModel() = default;

  explicit FieldModel(const FieldConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    const int K = cfg_.part_count();
    std::uint64_t s = cfg_.seed;
    auto next = [&s](std::uint64_t tag) { return mix_seed(s, tag); };
    for (int k = 0; k < K; ++k) {
      PartField<Real> p;
      p.grid = HashGrid<Real>(cfg_.part_grids[k], next(100 + k));
      std::vector<int> dw{cfg_.part_grids[k].output_dim()};
      for (int l = 0; l < cfg_.density_layers; ++l) dw.push_back(cfg_.density_hidden);
      dw.push_back(1 + cfg_.z_dim);
      p.density = Mlp<Real>::create(dw, next(200 + k));
      p.density.biases.back()[0] = static_cast<Real>(cfg_.density_bias_init);
      std::vector<int> cw{cfg_.color_input_dim()};
      for (int l = 0; l < cfg_.color_layers; ++l) cw.push_back(cfg_.color_hidden);
      cw.push_back(3);
      p.color = Mlp<Real>::create(cw, next(300 + k));
      parts_.push_back(std::move(p));
    }
    if (cfg_.residual_uses_hash()) residual_.grid = HashGrid<Real>(cfg_.residual_grid, next(400));
    std::vector<int> rw{cfg_.residual_encoded_dims() + cfg_.residual_extra_dims()};
    for (int l = 0; l < cfg_.residual_layers; ++l) rw.push_back(cfg_.residual_hidden);
    rw.push_back(3);
    residual_.mlp = Mlp<Real>::create(rw, next(500), /*zero_output_layer=*/true);
    if (cfg_.residual_input == ResidualInput::xyz_code) {
      residual_.codes.resize(static_cast<std::size_t>(cfg_.frame_count) * cfg_.code_dim);
      SplitMix64 rng(next(600));
      for (auto& v : residual_.codes) v = static_cast<Real>((rng.uniform() * 2 - 1) * 1e-2);
    }
    latents_.assign(static_cast<std::size_t>(cfg_.frame_count) * cfg_.latent_dim, Real(0));
  }

  const FieldConfig& config() const { return cfg_; }
  int part_count() const { return cfg_.part_count(); }
  PartField<Real>& part(int k) { return parts_[k]; }
  const PartField<Real>& part(int k) const { return parts_[k]; }
  ResidualField<Real>& residual() { return residual_; }
  const ResidualField<Real>& residual() const { return residual_; }
  std::vector<Real>& latents() { return latents_; }
  const std::vector<Real>& latents() const { return latents_; }

  // Visits every trainable array as (name, span) in a fixed order.
  template <typename Fn>
  void for_each_param(Fn&& fn) {
    for (int k = 0; k < part_count(); ++k) {
      const std::string pre = "part" + std::to_string(k);
      fn(pre + ".grid", std::span<Real>(parts_[k].grid.table()));
      parts_[k].density.for_each_param(pre + ".density", fn);
      parts_[k].color.for_each_param(pre + ".color", fn);
    }
    if (cfg_.residual_uses_hash()) fn(std::string("residual.grid"), std::span<Real>(residual_.grid.table()));
    residual_.mlp.for_each_param("residual.mlp", fn);
    if (!residual_.codes.empty()) fn(std::string("residual.codes"), std::span<Real>(residual_.codes));
    fn(std::string("latents"), std::span<Real>(latents_));
  }

  template <typename Fn>
  void for_each_param(Fn&& fn) const {
    const_cast<FieldModel*>(this)->for_each_param([&](const std::string& name, std::span<Real> s) {
      fn(name, std::span<const Real>(s.data(), s.size()));
    });
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_param([&](const std::string&, std::span<const Real> s) { n += s.size(); });
    return n;
  }

  void set_zero() {
    for_each_param([](const std::string&, std::span<Real> s) { std::fill(s.begin(), s.end(), Real(0)); });
  }

  FieldModel zeros_like() const {
    FieldModel g = *this;
    g.set_zero();
    return g;
  }

  // Latent row for frame t; frames outside the trained range use the mean
  // latent when allow_unseen is set.
  std::vector<Real> latent_for(int t, bool allow_unseen) const {
    return row_or_mean(latents_, cfg_.latent_dim, t, allow_unseen, "latent");
  }
  std::vector<Real> code_for(int t, bool allow_unseen) const {
    return row_or_mean(residual_.codes, cfg_.code_dim, t, allow_unseen, "code");
  }
  bool has_frame(int t) const { return t >= 0 && t < cfg_.frame_count; }

 private:
  std::vector<Real> row_or_mean(const std::vector<Real>& table, int dim, int t, bool allow_unseen,
                                const char* what) const {
    std::vector<Real> out(dim, Real(0));
    if (has_frame(t)) {
      std::copy_n(table.begin() + static_cast<std::size_t>(t) * dim, dim, out.begin());
      return out;
    }
    if (!allow_unseen) throw DataError(std::string("no ") + what + " for frame " + std::to_string(t));
    for (int f = 0; f < cfg_.frame_count; ++f)
      for (int i = 0; i < dim; ++i) out[i] += table[static_cast<std::size_t>(f) * dim + i];
    for (auto& v : out) v /= static_cast<Real>(cfg_.frame_count);
    return out;
  }

  FieldConfig cfg_;
  std::vector<PartField<Real>> parts_;
  ResidualField<Real> residual_;
  std::vector<Real> latents_;
};

// Per-frame posed geometry for one part split, built once and shared
// read-only by all queries of that frame.
struct FrameGeometry {
  int frame = 0;
  double t_norm = 0.0;
  BoneTransforms transforms;
  std::vector<double> pose_vector;
  // Per-vertex blended skinning transform.
  std::vector<Mat34d> vertex_blend;
  PartBvh bvh;
  std::vector<Aabb> part_bounds;
  // Posed body bounds dilated by the cull radius; rays missing it are background.
  Aabb render_bounds;
};

inline double normalized_time(int frame, int frame_count) {
  return frame_count > 1 ? static_cast<double>(frame) / (frame_count - 1) : 0.0;
}

inline FrameGeometry build_frame_geometry(const SkinnedBody& body, const std::vector<PartMesh>& part_meshes,
                                          const Pose& pose, int frame_count, double cull_radius) {
  FrameGeometry g;
  g.frame = pose.frame_index;
  g.t_norm = normalized_time(pose.frame_index, frame_count);
  g.transforms = pose_to_transforms(body, pose);
  g.pose_vector = pose.flat();
  g.vertex_blend.resize(body.vertex_count());
  std::vector<Vec3d> posed(body.vertex_count());
  for (int v = 0; v < body.vertex_count(); ++v) {
    g.vertex_blend[v] = blend_transforms(body.weights_of(v), g.transforms);
    posed[v] = apply(g.vertex_blend[v], body.vertices[v]);
  }
  g.bvh = build_part_bvh(body, part_meshes, std::move(posed));
  Aabb all;
  for (const auto& t : g.bvh.parts) {
    g.part_bounds.push_back(t.empty() ? Aabb{} : t.bounds());
    if (!t.empty()) all.expand(t.bounds());
  }
  g.render_bounds = all.dilated(cull_radius);
  return g;
}

}  // namespace pnvr
