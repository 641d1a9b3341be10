#pragma once

#include <pnvr/core/error.hpp>
#include <pnvr/core/rng.hpp>
#include <pnvr/geometry/skinned_body.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

namespace pnvr {

enum class TexturePattern { stripes, checker, rings };

struct CapsuleSpec {
  int bone = 0;
  Vec3d a = Vec3d::Zero();  // proximal end of the segment
  Vec3d b = Vec3d::Zero();  // distal end
  double radius = 0.05;
};

struct PartTexture {
  std::array<double, 3> base{0.5, 0.5, 0.5};
  std::array<double, 3> accent{0.2, 0.2, 0.2};
  TexturePattern pattern = TexturePattern::stripes;
  double frequency = 6.0;
};

struct ToyBodySpec {
  Skeleton skeleton;
  std::vector<CapsuleSpec> capsules;  // at most one per bone
  std::vector<std::vector<int>> part_sets;
  std::vector<std::string> part_names;
  std::vector<PartTexture> textures;  // one per part
  // High-frequency checker patch on one capsule (the "face").
  int face_bone = -1;
  double face_frequency = 22.0;
  int segments = 24;         // around each capsule
  double ring_spacing = 0.025;
  double blend_band = 0.02;  // meters, centered on each proximal joint
  int atlas_tiles = 3;       // atlas is atlas_tiles x atlas_tiles
  double atlas_margin = 0.01;
  // Time-varying normal ripple added to the ground-truth surface of these
  // bones only; the neural model has to recover it through the residual.
  std::vector<int> ripple_bones;
  double ripple_amplitude = 0.012;
  double ripple_frequency = 3.0;
};

// Nine-joint humanoid in a T pose: pelvis, chest, head, two two-segment arms
// and two single-segment legs, grouped into six parts.
inline ToyBodySpec default_toy_spec() {
  ToyBodySpec s;
  auto& sk = s.skeleton;
  sk.names = {"pelvis", "chest", "head", "l_upper_arm", "l_forearm", "r_upper_arm", "r_forearm", "l_leg", "r_leg"};
  sk.parents = {-1, 0, 1, 1, 3, 1, 5, 0, 0};
  sk.joints = {{0, 0.95, 0},     {0, 1.20, 0},     {0, 1.48, 0},      {0.20, 1.42, 0}, {0.47, 1.42, 0},
               {-0.20, 1.42, 0}, {-0.47, 1.42, 0}, {0.10, 0.90, 0},   {-0.10, 0.90, 0}};
  s.capsules = {
      {0, {0, 0.86, 0}, {0, 1.08, 0}, 0.13},        {1, {0, 1.20, 0}, {0, 1.36, 0}, 0.15},
      {2, {0, 1.54, 0}, {0, 1.66, 0}, 0.105},       {3, {0.20, 1.42, 0}, {0.47, 1.42, 0}, 0.055},
      {4, {0.47, 1.42, 0}, {0.72, 1.42, 0}, 0.045}, {5, {-0.20, 1.42, 0}, {-0.47, 1.42, 0}, 0.055},
      {6, {-0.47, 1.42, 0}, {-0.72, 1.42, 0}, 0.045}, {7, {0.10, 0.90, 0}, {0.10, 0.10, 0}, 0.07},
      {8, {-0.10, 0.90, 0}, {-0.10, 0.10, 0}, 0.07},
  };
  s.part_sets = {{0, 1}, {2}, {3, 4}, {5, 6}, {7}, {8}};
  s.part_names = {"torso", "head", "left_arm", "right_arm", "left_leg", "right_leg"};
  s.textures = {
      {{0.80, 0.25, 0.20}, {0.95, 0.85, 0.30}, TexturePattern::stripes, 10.0},
      {{0.90, 0.72, 0.58}, {0.35, 0.20, 0.15}, TexturePattern::rings, 4.0},
      {{0.20, 0.45, 0.80}, {0.90, 0.90, 0.95}, TexturePattern::checker, 6.0},
      {{0.20, 0.65, 0.35}, {0.10, 0.15, 0.10}, TexturePattern::checker, 6.0},
      {{0.25, 0.25, 0.35}, {0.70, 0.70, 0.75}, TexturePattern::stripes, 8.0},
      {{0.55, 0.35, 0.70}, {0.95, 0.95, 0.60}, TexturePattern::rings, 5.0},
  };
  s.face_bone = 2;
  s.ripple_bones = {0, 1};
  return s;
}

// Atlas tile of a bone: tiles are filled row by row in bone order.
struct AtlasTile {
  double u0 = 0, v0 = 0, size = 1;
};

inline AtlasTile atlas_tile(const ToyBodySpec& spec, int bone) {
  const int n = spec.atlas_tiles;
  const double cell = 1.0 / n;
  AtlasTile t;
  t.u0 = (bone % n) * cell + spec.atlas_margin;
  t.v0 = (bone / n) * cell + spec.atlas_margin;
  t.size = cell - 2 * spec.atlas_margin;
  return t;
}

// Local (around, along) coordinates in [0,1]^2 and the owning bone of an
// atlas coordinate; bone = -1 in gutters or unused tiles.
inline int atlas_lookup(const ToyBodySpec& spec, const Vec2d& uv, Vec2d& local) {
  const int n = spec.atlas_tiles;
  const int tu = std::clamp(static_cast<int>(std::floor(uv.x() * n)), 0, n - 1);
  const int tv = std::clamp(static_cast<int>(std::floor(uv.y() * n)), 0, n - 1);
  const int bone = tv * n + tu;
  if (bone >= static_cast<int>(spec.skeleton.size())) return -1;
  const auto t = atlas_tile(spec, bone);
  local = Vec2d((uv.x() - t.u0) / t.size, (uv.y() - t.v0) / t.size);
  const double tol = 1e-9;
  if (local.x() < -tol || local.x() > 1 + tol || local.y() < -tol || local.y() > 1 + tol) return -1;
  local = local.cwiseMax(0.0).cwiseMin(1.0);
  return bone;
}

inline int part_of_bone(const ToyBodySpec& spec, int bone) {
  for (int k = 0; k < static_cast<int>(spec.part_sets.size()); ++k)
    for (int j : spec.part_sets[k])
      if (j == bone) return k;
  return -1;
}

// Albedo at an atlas coordinate; closed form, no lookup tables.
inline Vec3d texture_color(const ToyBodySpec& spec, const Vec2d& uv) {
  Vec2d l;
  const int bone = atlas_lookup(spec, uv, l);
  if (bone < 0) return Vec3d(1, 0, 1);
  const int k = part_of_bone(spec, bone);
  const auto& tex = spec.textures.at(k);
  const Vec3d base(tex.base[0], tex.base[1], tex.base[2]);
  const Vec3d accent(tex.accent[0], tex.accent[1], tex.accent[2]);
  const double pi = std::numbers::pi;
  double t = 0;
  switch (tex.pattern) {
    case TexturePattern::stripes:
      t = 0.5 + 0.5 * std::sin(2 * pi * tex.frequency * l.y());
      break;
    case TexturePattern::checker: {
      const int a = static_cast<int>(std::floor(l.x() * tex.frequency * 2));
      const int b = static_cast<int>(std::floor(l.y() * tex.frequency));
      t = ((a + b) & 1) ? 0.85 : 0.0;
      break;
    }
    case TexturePattern::rings:
      t = 0.5 + 0.5 * std::cos(2 * pi * tex.frequency * l.x());
      t *= t;
      break;
  }
  Vec3d c = (1 - t) * base + t * accent;
  // The face: a fine checker on the front of the capsule (local u = 0.5).
  if (bone == spec.face_bone && std::abs(l.x() - 0.5) < 0.12 && l.y() > 0.3 && l.y() < 0.75) {
    const int a = static_cast<int>(std::floor(l.x() * spec.face_frequency * 1.5));
    const int b = static_cast<int>(std::floor(l.y() * spec.face_frequency));
    c = ((a + b) & 1) ? Vec3d(0.1, 0.1, 0.12) : Vec3d(0.97, 0.95, 0.9);
  }
  return c;
}

// Mesh plus per-vertex rest normals and bone ownership, for the ground truth.
struct ToyMesh {
  SkinnedBody body;
  std::vector<Vec3d> normals;
  std::vector<int> vertex_bone;
  std::vector<double> vertex_along;  // normalized arc length along the capsule
};

namespace detail {

inline void capsule_frame(const Vec3d& axis, Vec3d& e1, Vec3d& e2) {
  // e1 points toward +z (the body's front) whenever possible.
  Vec3d ref = std::abs(axis.z()) < 0.9 ? Vec3d::UnitZ() : Vec3d::UnitX();
  e1 = (ref - axis * axis.dot(ref)).normalized();
  e2 = axis.cross(e1);
}

}  // namespace detail

inline ToyMesh build_toy_mesh(const ToyBodySpec& spec) {
  const int J = spec.skeleton.size();
  if (J < 1) throw ConfigError("toy body needs a skeleton");
  if (spec.textures.size() != spec.part_sets.size()) throw ConfigError("one texture per part required");
  if (spec.segments < 3) throw ConfigError("capsules need at least 3 segments");
  if (J > spec.atlas_tiles * spec.atlas_tiles) throw ConfigError("atlas has fewer tiles than bones");
  if (!(spec.atlas_margin >= 0) || !(atlas_tile(spec, 0).size > 0))
    throw ConfigError("overlapping atlas regions: margin leaves no room for tiles");
  std::vector<char> used(J, 0);
  ToyMesh m;
  auto& body = m.body;
  body.skeleton = spec.skeleton;
  body.part_sets = spec.part_sets;
  body.part_names = spec.part_names;
  const double pi = std::numbers::pi;

  for (const auto& cap : spec.capsules) {
    if (cap.bone < 0 || cap.bone >= J) throw ConfigError("capsule references unknown bone");
    if (used[cap.bone]) throw ConfigError("overlapping atlas regions: bone has two capsules");
    used[cap.bone] = 1;
    if (!(cap.radius > 0)) throw ConfigError("capsule radius must be positive");
    const Vec3d seg = cap.b - cap.a;
    const double len = seg.norm();
    const Vec3d axis = len > 0 ? Vec3d(seg / len) : Vec3d::UnitY();
    Vec3d e1, e2;
    detail::capsule_frame(axis, e1, e2);
    const double r = cap.radius;
    // Profile: quarter circle, straight part, quarter circle, by arc length.
    const double cap_arc = 0.5 * pi * r;
    const double total = 2 * cap_arc + len;
    const int rings = std::max(4, static_cast<int>(std::ceil(total / spec.ring_spacing)));
    const auto tile = atlas_tile(spec, cap.bone);
    const int parent = spec.skeleton.parents[cap.bone];
    const Vec3d joint = spec.skeleton.joints[cap.bone];
    const int first = body.vertex_count();
    const int S = spec.segments;

    auto profile = [&](double s, double& axial, double& radial, double& nax) {
      if (s < cap_arc) {
        const double th = s / r;  // 0 at the pole
        axial = -r * std::cos(th);
        radial = r * std::sin(th);
        nax = -std::cos(th);
      } else if (s <= cap_arc + len) {
        axial = s - cap_arc;
        radial = r;
        nax = 0;
      } else {
        const double th = (total - s) / r;
        axial = len + r * std::cos(th);
        radial = r * std::sin(th);
        nax = std::cos(th);
      }
    };
    auto add_vertex = [&](const Vec3d& p, const Vec3d& n, double u, double v) {
      body.vertices.push_back(p);
      m.normals.push_back(n.normalized());
      m.vertex_bone.push_back(cap.bone);
      m.vertex_along.push_back(v);
      body.uv.emplace_back(tile.u0 + u * tile.size, tile.v0 + v * tile.size);
      std::vector<double> w(J, 0.0);
      // Linear blend with the parent across a band centered on the joint.
      const double s_joint = (p - joint).dot(axis);
      double t = 1.0;
      if (parent >= 0 && spec.blend_band > 0) t = std::clamp(s_joint / spec.blend_band + 0.5, 0.0, 1.0);
      w[cap.bone] = t;
      if (parent >= 0) w[parent] += 1.0 - t;
      body.blend_weights.insert(body.blend_weights.end(), w.begin(), w.end());
    };
    // Poles get one vertex per segment so each triangle has its own u.
    for (int i = 0; i < S; ++i) add_vertex(cap.a - r * axis, -axis, (i + 0.5) / S, 0.0);
    for (int ring = 1; ring < rings; ++ring) {
      const double s = total * ring / rings;
      double axial, radial, nax;
      profile(s, axial, radial, nax);
      const double nrad = std::sqrt(std::max(0.0, 1 - nax * nax));
      for (int i = 0; i <= S; ++i) {  // seam column duplicated at u = 1
        // u = 0.5 faces e1 (the front); the seam sits at the back.
        const double phi = 2 * pi * (double(i) / S - 0.5);
        const Vec3d dir = std::cos(phi) * e1 + std::sin(phi) * e2;
        add_vertex(cap.a + axial * axis + radial * dir, nax * axis + nrad * dir, double(i) / S, s / total);
      }
    }
    for (int i = 0; i < S; ++i) add_vertex(cap.b + r * axis, axis, (i + 0.5) / S, 1.0);

    const int ring0 = first + S;
    const int W = S + 1;
    auto ring_v = [&](int ring, int i) { return ring0 + (ring - 1) * W + i; };
    const int top = first + S + (rings - 1) * W;
    for (int i = 0; i < S; ++i) body.faces.push_back({first + i, ring_v(1, i + 1), ring_v(1, i)});
    for (int ring = 1; ring + 1 < rings; ++ring)
      for (int i = 0; i < S; ++i) {
        body.faces.push_back({ring_v(ring, i), ring_v(ring, i + 1), ring_v(ring + 1, i + 1)});
        body.faces.push_back({ring_v(ring, i), ring_v(ring + 1, i + 1), ring_v(ring + 1, i)});
      }
    for (int i = 0; i < S; ++i) body.faces.push_back({ring_v(rings - 1, i), ring_v(rings - 1, i + 1), top + i});
  }
  body.validate();
  return m;
}

inline SkinnedBody build_toy_body(const ToyBodySpec& spec) { return build_toy_mesh(spec).body; }

enum class MotionPreset { wave, walk_cycle, random_smooth };

inline MotionPreset motion_preset_from_string(const std::string& s) {
  if (s == "wave") return MotionPreset::wave;
  if (s == "walk-cycle" || s == "walk_cycle") return MotionPreset::walk_cycle;
  if (s == "random-smooth" || s == "random_smooth") return MotionPreset::random_smooth;
  throw ConfigError("unknown motion preset '" + s + "'");
}

struct MotionOptions {
  MotionPreset preset = MotionPreset::wave;
  // Frames per motion period; 0 means the sequence length.
  int period = 0;
  double amplitude = 1.0;
  // Total root yaw (radians) accumulated linearly over the sequence.
  double turn = 0.8;
  std::uint64_t seed = 7;
};

namespace detail {

// Joint-angle curves before velocity limiting. Every curve is C1 and zero
// at frame 0.
inline std::vector<Pose> raw_motion(const ToyBodySpec& spec, int frames, const MotionOptions& opt, double scale) {
  const int J = spec.skeleton.size();
  const double P = opt.period > 0 ? opt.period : std::max(frames, 2);
  const double pi = std::numbers::pi;
  auto find = [&](const std::string& n) {
    for (int j = 0; j < J; ++j)
      if (spec.skeleton.names[j] == n) return j;
    return -1;
  };
  std::vector<Pose> out;
  SplitMix64 rng(opt.seed);
  struct Wave {
    int joint, axis;
    double amp, freq, phase;
  };
  std::vector<Wave> waves;
  if (opt.preset == MotionPreset::random_smooth)
    for (int j = 0; j < J; ++j)
      for (int a = 0; a < 3; ++a)
        for (int h = 0; h < 2; ++h)
          waves.push_back({j, a, 0.15 * (rng.uniform() * 2 - 1), 1.0 + h + rng.uniform(), 2 * pi * rng.uniform()});
  const double turn_rate = frames > 1 ? scale * opt.turn / (frames - 1) : 0.0;
  for (int f = 0; f < frames; ++f) {
    Pose p = Pose::rest(J, f);
    const double ph = 2 * pi * f / P;
    auto set = [&](const char* name, int axis, double angle) {
      const int j = find(name);
      if (j >= 0) p.rotations[j][axis] += scale * opt.amplitude * angle;
    };
    switch (opt.preset) {
      case MotionPreset::wave:
        set("l_upper_arm", 2, 0.45 * std::sin(ph));
        set("l_forearm", 2, 0.5 * std::sin(ph) * std::sin(ph));
        set("r_upper_arm", 2, -0.25 * std::sin(ph));
        set("head", 0, 0.15 * std::sin(ph));
        set("chest", 1, 0.1 * std::sin(ph));
        break;
      case MotionPreset::walk_cycle:
        set("l_leg", 0, 0.35 * std::sin(ph));
        set("r_leg", 0, -0.35 * std::sin(ph));
        set("l_upper_arm", 1, 0.3 * std::sin(ph));
        set("r_upper_arm", 1, 0.3 * std::sin(ph));
        set("l_forearm", 1, 0.2 * std::sin(ph) * std::sin(ph));
        set("r_forearm", 1, -0.2 * std::sin(ph) * std::sin(ph));
        set("chest", 1, 0.08 * std::sin(ph));
        break;
      case MotionPreset::random_smooth:
        for (const auto& w : waves)
          p.rotations[w.joint][w.axis] +=
              scale * opt.amplitude * w.amp * (std::sin(w.freq * ph + w.phase) - std::sin(w.phase));
        break;
    }
    if (J > 0) p.rotations[0][1] += turn_rate * f;
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace detail

// Largest per-vertex displacement between consecutive frames divided by the
// radius of the vertex's capsule.
inline double max_displacement_ratio(const ToyBodySpec& spec, const ToyMesh& mesh, const std::vector<Pose>& poses) {
  std::vector<double> radius(spec.skeleton.size(), 1.0);
  for (const auto& c : spec.capsules) radius[c.bone] = c.radius;
  double worst = 0;
  std::vector<Vec3d> prev;
  for (std::size_t f = 0; f < poses.size(); ++f) {
    const auto G = pose_to_transforms(mesh.body, poses[f]);
    std::vector<Vec3d> cur(mesh.body.vertex_count());
    for (int v = 0; v < mesh.body.vertex_count(); ++v)
      cur[v] = apply(blend_transforms(mesh.body.weights_of(v), G), mesh.body.vertices[v]);
    if (f > 0)
      for (int v = 0; v < mesh.body.vertex_count(); ++v)
        worst = std::max(worst, (cur[v] - prev[v]).norm() / radius[mesh.vertex_bone[v]]);
    prev = std::move(cur);
  }
  return worst;
}

// Pose sequence with frame 0 at rest. Articulation and turn amplitudes shrink until no
// surface point moves more than 0.9 capsule radii between frames.
inline std::vector<Pose> animate(const ToyBodySpec& spec, int frames, const MotionOptions& opt = {}) {
  if (frames < 1) throw ConfigError("frame count must be >= 1");
  const auto mesh = build_toy_mesh(spec);
  double scale = 1.0;
  for (int attempt = 0; attempt < 40; ++attempt, scale *= 0.85) {
    auto poses = detail::raw_motion(spec, frames, opt, scale);
    if (max_displacement_ratio(spec, mesh, poses) < 0.9) return poses;
  }
  throw ConfigError("motion too fast for the frame count even after damping");
}

}  // namespace pnvr
