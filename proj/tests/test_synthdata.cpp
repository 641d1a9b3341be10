#include <pnvr/synthdata/dataset.hpp>

#include <gtest/gtest.h>

#include <filesystem>
#include <numbers>

using namespace pnvr;
namespace fs = std::filesystem;

namespace {

// Single horizontal capsule centered at the origin.
ToyBodySpec single_capsule_spec(double half_len, double radius) {
  ToyBodySpec s;
  s.skeleton.names = {"root"};
  s.skeleton.parents = {-1};
  s.skeleton.joints = {Vec3d::Zero()};
  s.capsules = {{0, Vec3d(-half_len, 0, 0), Vec3d(half_len, 0, 0), radius}};
  s.part_sets = {{0}};
  s.part_names = {"body"};
  s.textures = {PartTexture{}};
  s.atlas_tiles = 1;
  return s;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("pnvr_synth_" + name);
  fs::remove_all(p);
  return p;
}

std::vector<char> slurp(const fs::path& p) { return read_file_bytes(p.string()); }

SynthOptions small_options() {
  SynthOptions o;
  o.frames = 3;
  o.width = 24;
  o.height = 24;
  return o;
}

void expect_weights_valid(const ToyBodySpec& spec, const ToyMesh& m) {
  const int J = spec.skeleton.size();
  for (int v = 0; v < m.body.vertex_count(); ++v) {
    const auto w = m.body.weights_of(v);
    double sum = 0;
    for (int j = 0; j < J; ++j) {
      ASSERT_GE(w[j], 0.0);
      const int bone = m.vertex_bone[v];
      if (j != bone && j != spec.skeleton.parents[bone]) {
        ASSERT_EQ(w[j], 0.0);
      }
      sum += w[j];
    }
    ASSERT_NEAR(sum, 1.0, 1e-12) << "vertex " << v;
  }
}

}  // namespace

TEST(ToyBody, WeightsAreOneHotOutsideTheBlendBand) {
  const auto spec = default_toy_spec();
  const auto m = build_toy_mesh(spec);
  int interior = 0;
  for (int v = 0; v < m.body.vertex_count(); ++v) {
    const int bone = m.vertex_bone[v];
    const int parent = spec.skeleton.parents[bone];
    const auto& cap = *std::find_if(spec.capsules.begin(), spec.capsules.end(),
                                    [&](const CapsuleSpec& c) { return c.bone == bone; });
    const Vec3d axis = (cap.b - cap.a).normalized();
    const double s = (m.body.vertices[v] - spec.skeleton.joints[bone]).dot(axis);
    if (parent >= 0 && s < 0.5 * spec.blend_band + 1e-6) continue;
    ++interior;
    EXPECT_NEAR(m.body.weights_of(v)[bone], 1.0, 1e-6) << "vertex " << v;
  }
  EXPECT_GT(interior, m.body.vertex_count() / 2);
}

TEST(ToyBody, BlendWeightsAreConvexAndLocal) {
  const auto spec = default_toy_spec();
  expect_weights_valid(spec, build_toy_mesh(spec));
}

TEST(ToyBody, AtlasCoordinatesStayInTheirBoneTile) {
  const auto spec = default_toy_spec();
  const auto m = build_toy_mesh(spec);
  for (int v = 0; v < m.body.vertex_count(); ++v) {
    Vec2d local;
    ASSERT_EQ(atlas_lookup(spec, m.body.uv[v], local), m.vertex_bone[v]) << "vertex " << v;
  }
}

TEST(ToyBody, SixPartsCoverEveryBoneOnce) {
  const auto spec = default_toy_spec();
  EXPECT_EQ(spec.skeleton.size(), 9);
  EXPECT_EQ(spec.part_sets.size(), 6u);
  for (int j = 0; j < spec.skeleton.size(); ++j) EXPECT_GE(part_of_bone(spec, j), 0);
  std::vector<int> seen(spec.skeleton.size(), 0);
  for (const auto& p : spec.part_sets)
    for (int j : p) ++seen[j];
  for (int c : seen) EXPECT_EQ(c, 1);
}

TEST(ToyBody, InvalidSpecsAreConfigurationErrors) {
  auto s = default_toy_spec();
  s.capsules.push_back(s.capsules.front());
  EXPECT_THROW(build_toy_mesh(s), ConfigError);

  s = default_toy_spec();
  s.atlas_margin = 0.2;
  EXPECT_THROW(build_toy_mesh(s), ConfigError);

  s = default_toy_spec();
  s.atlas_tiles = 2;
  EXPECT_THROW(build_toy_mesh(s), ConfigError);

  s = default_toy_spec();
  s.segments = 2;
  EXPECT_THROW(build_toy_mesh(s), ConfigError);

  s = default_toy_spec();
  s.textures.pop_back();
  EXPECT_THROW(build_toy_mesh(s), ConfigError);

  s = default_toy_spec();
  s.capsules[0].radius = 0;
  EXPECT_THROW(build_toy_mesh(s), ConfigError);
}

TEST(ToyBody, FuzzedSpecsBuildValidBodies) {
  SplitMix64 rng(2024);
  for (int trial = 0; trial < 40; ++trial) {
    auto s = default_toy_spec();
    s.segments = 3 + static_cast<int>(rng.uniform() * 30);
    s.ring_spacing = 0.015 + 0.05 * rng.uniform();
    s.blend_band = 0.06 * rng.uniform();
    s.atlas_margin = 0.04 * rng.uniform();
    for (auto& c : s.capsules) c.radius *= 0.5 + rng.uniform();
    for (auto& j : s.skeleton.joints) j += 0.01 * Vec3d(rng.uniform() - 0.5, rng.uniform() - 0.5, rng.uniform() - 0.5);
    const auto m = build_toy_mesh(s);
    EXPECT_NO_THROW(m.body.validate());
    expect_weights_valid(s, m);
    for (const auto& n : m.normals) ASSERT_NEAR(n.norm(), 1.0, 1e-12);
  }
}

TEST(ToyTexture, FaceCheckerSitsOnTheFrontOfTheHead) {
  const auto spec = default_toy_spec();
  const auto tile = atlas_tile(spec, spec.face_bone);
  auto at = [&](double lu, double lv) { return texture_color(spec, Vec2d(tile.u0 + lu * tile.size, tile.v0 + lv * tile.size)); };
  const Vec3d dark(0.1, 0.1, 0.12), light(0.97, 0.95, 0.9);
  int dark_hits = 0, light_hits = 0;
  for (int i = 0; i < 40; ++i) {
    const Vec3d c = at(0.4 + 0.005 * i, 0.52);
    if ((c - dark).norm() < 1e-12) ++dark_hits;
    if ((c - light).norm() < 1e-12) ++light_hits;
  }
  EXPECT_GT(dark_hits, 5);
  EXPECT_GT(light_hits, 5);
  // The back of the head carries only the part texture.
  for (int i = 0; i < 40; ++i) {
    const Vec3d c = at(0.02 * i / 4.0, 0.52);
    EXPECT_GT((c - dark).norm(), 1e-6);
  }
  EXPECT_EQ(texture_color(spec, Vec2d(0.999, 0.999)), Vec3d(1, 0, 1));  // unused tile
}

TEST(Animate, FrameZeroIsTheRestPose) {
  const auto spec = default_toy_spec();
  for (auto preset : {MotionPreset::wave, MotionPreset::walk_cycle, MotionPreset::random_smooth}) {
    MotionOptions o;
    o.preset = preset;
    const auto poses = animate(spec, 12, o);
    ASSERT_EQ(poses.size(), 12u);
    EXPECT_EQ(poses[0].translation, Vec3d::Zero());
    for (const auto& r : poses[0].rotations) EXPECT_EQ(r, Vec3d::Zero());
    for (int f = 0; f < 12; ++f) EXPECT_EQ(poses[f].frame_index, f);
  }
}

// random_smooth mixes incommensurate frequencies and never repeats.
TEST(Animate, CyclicPresetsRepeatWithTheirPeriod) {
  const auto spec = default_toy_spec();
  for (auto preset : {MotionPreset::wave, MotionPreset::walk_cycle}) {
    MotionOptions o;
    o.preset = preset;
    o.period = 8;
    o.turn = 0.0;
    const auto poses = animate(spec, 30, o);
    for (int f = 0; f + 8 < 30; ++f)
      for (int j = 0; j < spec.skeleton.size(); ++j)
        EXPECT_LT((poses[f].rotations[j] - poses[f + 8].rotations[j]).norm(), 1e-12) << f << " " << j;
  }
}

TEST(Animate, NoSurfacePointOutrunsItsCapsule) {
  const auto spec = default_toy_spec();
  const auto mesh = build_toy_mesh(spec);
  for (auto preset : {MotionPreset::wave, MotionPreset::walk_cycle, MotionPreset::random_smooth})
    for (int frames : {3, 5, 20, 60}) {
      MotionOptions o;
      o.preset = preset;
      o.amplitude = 3.0;
      o.turn = 2.0;
      const auto poses = animate(spec, frames, o);
      EXPECT_LT(max_displacement_ratio(spec, mesh, poses), 0.9);
    }
}

TEST(Animate, SeedControlsRandomMotion) {
  const auto spec = default_toy_spec();
  MotionOptions a;
  a.preset = MotionPreset::random_smooth;
  auto b = a;
  const auto pa = animate(spec, 10, a), pb = animate(spec, 10, b);
  for (int f = 0; f < 10; ++f) EXPECT_EQ(pa[f].rotations, pb[f].rotations);
  b.seed = 8;
  const auto pc = animate(spec, 10, b);
  EXPECT_NE(pa[5].rotations, pc[5].rotations);
}

TEST(Animate, BadArgumentsAreRejected) {
  EXPECT_THROW(animate(default_toy_spec(), 0), ConfigError);
  EXPECT_THROW(motion_preset_from_string("moonwalk"), ConfigError);
  EXPECT_EQ(motion_preset_from_string("walk-cycle"), MotionPreset::walk_cycle);
}

TEST(GroundTruth, CameraLookingAwayRendersBackground) {
  const auto spec = default_toy_spec();
  const auto mesh = build_toy_mesh(spec);
  const auto cam = Camera::look_at("away", Vec3d(0, 1, 4), Vec3d(0, 1, 8), Vec3d::UnitY(), 0.7, 32, 32);
  ShadingSpec sh;
  sh.background = {0.2, 0.4, 0.6};
  const auto gt = render_ground_truth(spec, mesh, Pose::rest(spec.skeleton.size(), 0), 0.0, cam, sh);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      EXPECT_EQ(gt.mask.at(x, y), 0.0f);
      for (int c = 0; c < 3; ++c) EXPECT_EQ(gt.color.at(x, y, c), static_cast<float>(sh.background[c]));
    }
}

TEST(GroundTruth, SilhouetteAreaMatchesProjectedCapsule) {
  const double half = 0.2, r = 0.1, dist = 40.0;
  auto spec = single_capsule_spec(half, r);
  spec.segments = 48;
  spec.ring_spacing = 0.005;
  const auto mesh = build_toy_mesh(spec);
  const int W = 400, H = 200;
  const double px_per_m = 500.0;
  const double fov = 2 * std::atan(0.5 * H / (px_per_m * dist));
  const auto cam = Camera::look_at("side", Vec3d(0, 0, dist), Vec3d::Zero(), Vec3d::UnitY(), fov, W, H);
  const auto gt = render_ground_truth(spec, mesh, Pose::rest(1, 0), 0.0, cam);
  double area = 0;
  for (float m : gt.mask.data) area += m;
  const double expect = (4 * half * r + std::numbers::pi * r * r) * px_per_m * px_per_m;
  EXPECT_NEAR(area / expect, 1.0, 0.02);
}

TEST(GroundTruth, BackgroundPixelsAreExactlyTheMaskComplement) {
  const auto d = synthesize_dataset(default_toy_spec(), small_options());
  for (const auto& f : d.frames)
    for (std::size_t c = 0; c < f.images.size(); ++c) {
      int hits = 0;
      for (int y = 0; y < 24; ++y)
        for (int x = 0; x < 24; ++x) {
          const float m = f.masks[c].at(x, y);
          ASSERT_TRUE(m == 0.0f || m == 1.0f);
          hits += m > 0;
          if (m == 0.0f) {
            for (int k = 0; k < 3; ++k) ASSERT_EQ(f.images[c].at(x, y, k), 1.0f);
          }
        }
      EXPECT_GT(hits, 20);
    }
}

TEST(GroundTruth, RippleMovesOnlyTheRippleBones) {
  const auto spec = default_toy_spec();
  const auto mesh = build_toy_mesh(spec);
  const auto pose = Pose::rest(spec.skeleton.size(), 0);
  const auto a = pose_surface(spec, mesh, pose, 0.0), b = pose_surface(spec, mesh, pose, 0.25);
  double moved = 0;
  for (int v = 0; v < mesh.body.vertex_count(); ++v) {
    const double d = (a.vertices[v] - b.vertices[v]).norm();
    const int bone = mesh.vertex_bone[v];
    const bool rippled = std::count(spec.ripple_bones.begin(), spec.ripple_bones.end(), bone) > 0;
    if (!rippled) {
      ASSERT_EQ(d, 0.0);
    }
    EXPECT_LE(d, 2 * spec.ripple_amplitude + 1e-12);
    moved = std::max(moved, d);
  }
  EXPECT_GT(moved, spec.ripple_amplitude);
}

TEST(Dataset, CamerasHaveOneTrainingViewAndHeldOutViews) {
  const auto d = synthesize_dataset(default_toy_spec(), small_options());
  EXPECT_EQ(d.cameras_with_role("train").size(), 1u);
  EXPECT_EQ(d.cameras_with_role("eval").size(), 3u);
  EXPECT_EQ(d.frame_count(), 3);
  const auto& train = d.cameras[d.cameras_with_role("train")[0]];
  EXPECT_GT(train.center().z(), 3.0);  // in front of the body
  EXPECT_THROW(d.camera_index("nope"), DataError);
}

TEST(Dataset, WriteReadRoundTripIsExact) {
  const auto d = synthesize_dataset(default_toy_spec(), small_options());
  const auto dir = fresh_dir("roundtrip");
  write_dataset(d, dir.string());
  const auto r = read_dataset(dir.string());
  EXPECT_EQ(body_hash(r.body), body_hash(d.body));
  ASSERT_EQ(r.cameras.size(), d.cameras.size());
  EXPECT_EQ(r.roles, d.roles);
  for (std::size_t c = 0; c < d.cameras.size(); ++c) {
    EXPECT_EQ(r.cameras[c].name, d.cameras[c].name);
    EXPECT_EQ(r.cameras[c].fx, d.cameras[c].fx);
    EXPECT_EQ(r.cameras[c].R, d.cameras[c].R);
    EXPECT_EQ(r.cameras[c].t, d.cameras[c].t);
  }
  ASSERT_EQ(r.frame_count(), d.frame_count());
  for (int f = 0; f < d.frame_count(); ++f) {
    EXPECT_EQ(r.frames[f].pose.rotations, d.frames[f].pose.rotations);
    EXPECT_EQ(r.frames[f].pose.translation, d.frames[f].pose.translation);
    for (std::size_t c = 0; c < d.cameras.size(); ++c) {
      EXPECT_EQ(r.frames[f].images[c].data, d.frames[f].images[c].data);
      EXPECT_EQ(r.frames[f].masks[c].data, d.frames[f].masks[c].data);
    }
  }
  fs::remove_all(dir);
}

TEST(Dataset, RegenerationIsByteIdentical) {
  const auto a = fresh_dir("regen_a"), b = fresh_dir("regen_b");
  write_dataset(synthesize_dataset(default_toy_spec(), small_options()), a.string());
  write_dataset(synthesize_dataset(default_toy_spec(), small_options()), b.string());
  int files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    ++files;
    const auto rel = fs::relative(e.path(), a);
    ASSERT_TRUE(fs::exists(b / rel)) << rel;
    EXPECT_EQ(slurp(e.path()), slurp(b / rel)) << rel;
  }
  EXPECT_EQ(files, 2 + 3 * (1 + 2 * 4));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Dataset, MissingMaskIsReportedWithItsPath) {
  const auto dir = fresh_dir("missing_mask");
  write_dataset(synthesize_dataset(default_toy_spec(), small_options()), dir.string());
  const auto victim = dir / "frames" / "0001" / "eval_1.mask.png";
  fs::remove(victim);
  try {
    read_dataset(dir.string());
    FAIL() << "missing mask was accepted";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find(victim.string()), std::string::npos) << e.what();
  }
  fs::remove_all(dir);
}

TEST(Dataset, BodyHashMismatchIsDataError) {
  const auto dir = fresh_dir("hash");
  write_dataset(synthesize_dataset(default_toy_spec(), small_options()), dir.string());
  auto bytes = slurp(dir / "body.pnvr");
  bytes[bytes.size() / 2] ^= 0x5a;
  write_file_bytes((dir / "body.pnvr").string(), bytes);
  EXPECT_THROW(read_dataset(dir.string()), DataError);
  fs::remove_all(dir);
}

TEST(Dataset, MissingDirectoryIsIoError) {
  EXPECT_THROW(read_dataset((fs::temp_directory_path() / "pnvr_does_not_exist").string()), IoError);
}

TEST(Dataset, StoredBodyIsSinglePrecision) {
  const auto d = synthesize_dataset(default_toy_spec(), small_options());
  for (const auto& v : d.body.vertices)
    for (int i = 0; i < 3; ++i) ASSERT_EQ(v[i], static_cast<double>(static_cast<float>(v[i])));
  for (double w : d.body.blend_weights) ASSERT_EQ(w, static_cast<double>(static_cast<float>(w)));
}
