#include <pnvr/geometry/body_io.hpp>
#include <pnvr/geometry/bvh.hpp>
#include <pnvr/geometry/parts.hpp>
#include <pnvr/synthdata/toy_body.hpp>
#include <pnvr/testing/oracles.hpp>
#include <pnvr/testing/suites.hpp>

#include <gtest/gtest.h>

#include <numbers>
#include <numeric>

using namespace pnvr;

namespace {

SkinnedBody chain_body(int joints) {
  SkinnedBody b;
  for (int j = 0; j < joints; ++j) {
    b.skeleton.names.push_back("j" + std::to_string(j));
    b.skeleton.parents.push_back(j - 1);
    b.skeleton.joints.push_back(Vec3d(0.3 * j, 0.1 * j, 0.0));
  }
  return b;
}

Mat4d translation(const Vec3d& t) {
  Mat4d m = Mat4d::Identity();
  m.topRightCorner<3, 1>() = t;
  return m;
}

Mat4d rotation(const Mat3d& R) {
  Mat4d m = Mat4d::Identity();
  m.topLeftCorner<3, 3>() = R;
  return m;
}

BoneTransforms random_transforms(int J, SplitMix64& rng) {
  BoneTransforms G;
  for (int j = 0; j < J; ++j) {
    const Vec3d r(rng.uniform() - 0.5, rng.uniform() - 0.5, rng.uniform() - 0.5);
    const Vec3d t(rng.uniform() - 0.5, rng.uniform() - 0.5, rng.uniform() - 0.5);
    G.G.push_back(translation(t) * rotation(axis_angle_to_matrix(r)));
  }
  return G;
}

// Two-bone cylinder along x with weights blended linearly from x = 0 to 1.
SkinnedBody blended_cylinder(int rings, int segs) {
  SkinnedBody b = chain_body(2);
  b.skeleton.joints = {Vec3d(0, 0, 0), Vec3d(0.5, 0, 0)};
  for (int i = 0; i < rings; ++i)
    for (int s = 0; s < segs; ++s) {
      const double x = static_cast<double>(i) / (rings - 1), a = 2 * std::numbers::pi * s / segs;
      b.vertices.emplace_back(x, 0.1 * std::cos(a), 0.1 * std::sin(a));
      b.blend_weights.insert(b.blend_weights.end(), {1.0 - x, x});
      b.uv.emplace_back(x, static_cast<double>(s) / segs);
    }
  for (int i = 0; i + 1 < rings; ++i)
    for (int s = 0; s < segs; ++s) {
      const int a = i * segs + s, c = i * segs + (s + 1) % segs;
      b.faces.push_back({a, a + segs, c});
      b.faces.push_back({c, a + segs, c + segs});
    }
  b.part_sets = {{0}, {1}};
  b.part_names = {"a", "b"};
  return b;
}

}  // namespace

TEST(PoseTransforms, RestPoseGivesIdentity) {
  const auto body = build_toy_body(default_toy_spec());
  const auto G = pose_to_transforms(body, Pose::rest(body.joint_count()));
  for (const auto& g : G.G) EXPECT_EQ(g, Mat4d::Identity());
}

TEST(PoseTransforms, SingleJointQuarterTurn) {
  SkinnedBody b = chain_body(1);
  Pose p = Pose::rest(1);
  p.rotations[0] = Vec3d(0, 0, std::numbers::pi / 2);
  const auto G = pose_to_transforms(b, p);
  const Vec3d y = (G.G[0] * Eigen::Vector4d(1, 0, 0, 1)).head<3>();
  EXPECT_NEAR(y.x(), 0.0, 1e-15);
  EXPECT_NEAR(y.y(), 1.0, 1e-15);
  EXPECT_NEAR(y.z(), 0.0, 1e-15);
}

TEST(PoseTransforms, ChainMatchesStepByStepProduct) {
  SkinnedBody b = chain_body(3);
  Pose p = Pose::rest(3);
  p.rotations = {Vec3d(0.1, 0.2, 0.3), Vec3d(-0.4, 0.0, 0.5), Vec3d(0.0, 0.7, -0.2)};
  p.translation = Vec3d(0.5, -0.25, 1.0);
  const auto G = pose_to_transforms(b, p);
  Mat4d acc = translation(p.translation);
  for (int j = 0; j < 3; ++j) {
    const Vec3d c = b.skeleton.joints[j];
    acc = acc * translation(c) * rotation(Eigen::AngleAxisd(p.rotations[j].norm(), p.rotations[j].normalized()).toRotationMatrix()) *
          translation(-c);
    EXPECT_LT((G.G[j] - acc).cwiseAbs().maxCoeff(), 1e-12) << "joint " << j;
  }
}

TEST(PoseTransforms, WrongLengthIsDimensionError) {
  SkinnedBody b = chain_body(3);
  EXPECT_THROW(pose_to_transforms(b, Pose::rest(2)), DimensionError);
}

TEST(LinearBlendSkinning, OneHotAppliesThatBone) {
  SplitMix64 rng(1);
  const auto G = random_transforms(4, rng);
  const Vec3d x(0.3, -0.2, 0.7);
  for (int j = 0; j < 4; ++j) {
    std::vector<double> w(4, 0.0);
    w[j] = 1.0;
    const Vec3d expect = (G.G[j] * x.homogeneous()).head<3>();
    EXPECT_LT((lbs_forward(x, w, G) - expect).norm(), 1e-15);
  }
}

TEST(LinearBlendSkinning, IdentityTransformsKeepPoint) {
  BoneTransforms G;
  G.G.assign(3, Mat4d::Identity());
  const Vec3d x(0.1, 0.2, 0.3);
  EXPECT_EQ(lbs_forward(x, {0.2, 0.5, 0.3}, G), x);
}

TEST(LinearBlendSkinning, HalfBlendOfTranslations) {
  BoneTransforms G;
  const Vec3d t1(1, 0, 2), t2(0, -3, 1), x(0.5, 0.5, 0.5);
  G.G = {translation(t1), translation(t2)};
  EXPECT_LT((lbs_forward(x, {0.5, 0.5}, G) - (x + (t1 + t2) / 2)).norm(), 1e-15);
}

TEST(InverseSkinning, RestPoseIsIdentity) {
  BoneTransforms G;
  G.G.assign(5, Mat4d::Identity());
  SplitMix64 rng(2);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> w(5);
    double s = 0;
    for (auto& v : w) s += v = rng.uniform();
    for (auto& v : w) v /= s;
    const Vec3d x(rng.uniform(), rng.uniform(), rng.uniform());
    EXPECT_EQ(inverse_lbs(x, w, G), x);
  }
}

TEST(InverseSkinning, OneHotRotationIsTranspose) {
  const Mat3d R = axis_angle_to_matrix(Vec3d(0.3, -0.8, 0.4));
  BoneTransforms G;
  G.G = {Mat4d::Identity(), rotation(R)};
  const Vec3d x(0.4, 1.2, -0.3);
  EXPECT_LT((inverse_lbs(x, {0.0, 1.0}, G) - R.transpose() * x).norm(), 1e-14);
}

TEST(InverseSkinning, RoundTripThroughForward) {
  SplitMix64 rng(3);
  for (int i = 0; i < 500; ++i) {
    const auto G = random_transforms(4, rng);
    std::vector<double> w(4);
    double s = 0;
    for (auto& v : w) s += v = rng.uniform();
    for (auto& v : w) v /= s;
    const Vec3d x(rng.uniform() * 2 - 1, rng.uniform() * 2 - 1, rng.uniform() * 2 - 1);
    EXPECT_LT((lbs_forward(inverse_lbs(x, w, G), w, G) - x).norm(), 1e-6);
  }
}

TEST(InverseSkinning, NearSingularBlendReportsWeights) {
  // Opposite half-turns average to a rank-deficient matrix.
  BoneTransforms G;
  G.G = {Mat4d::Identity(), rotation(axis_angle_to_matrix(Vec3d(std::numbers::pi, 0, 0)))};
  try {
    inverse_lbs(Vec3d(1, 1, 1), {0.5, 0.5}, G);
    FAIL() << "expected a singularity error";
  } catch (const SingularityError& e) {
    EXPECT_NE(std::string(e.what()).find("0.5, 0.5"), std::string::npos);
  }
}

TEST(PartDecomposition, SplitMatchesPerVertexArgmax) {
  const auto body = blended_cylinder(21, 12);
  const auto parts = decompose_parts(body);
  int expect0 = 0;
  for (int v = 0; v < body.vertex_count(); ++v) expect0 += body.weight(v, 0) >= body.weight(v, 1);
  EXPECT_EQ(static_cast<int>(parts[0].vertices.size()), expect0);
  EXPECT_EQ(static_cast<int>(parts[1].vertices.size()), body.vertex_count() - expect0);
}

TEST(PartDecomposition, IsAPartitionOfVertices) {
  const auto body = build_toy_body(default_toy_spec());
  const auto parts = decompose_parts(body);
  std::vector<int> seen(body.vertex_count(), 0);
  std::size_t total = 0;
  for (const auto& p : parts) {
    total += p.vertices.size();
    for (int v : p.vertices) ++seen[v];
  }
  EXPECT_EQ(total, body.vertices.size());
  for (int s : seen) EXPECT_EQ(s, 1);
  // Every face appears in at least one part.
  std::vector<int> face_seen(body.faces.size(), 0);
  for (const auto& p : parts)
    for (int f : p.faces) face_seen[f] = 1;
  EXPECT_EQ(std::accumulate(face_seen.begin(), face_seen.end(), 0), static_cast<int>(body.faces.size()));
}

TEST(PartDecomposition, EmptyPartIsConfigError) {
  auto body = blended_cylinder(5, 6);
  for (int v = 0; v < body.vertex_count(); ++v) {
    body.blend_weights[2 * v] = 1.0;
    body.blend_weights[2 * v + 1] = 0.0;
  }
  try {
    decompose_parts(body, {{0}, {1}}, {"whole", "empty"});
    FAIL() << "expected a configuration error";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("empty"), std::string::npos);
  }
}

TEST(PartDecomposition, TieGoesToLowestPart) {
  auto body = blended_cylinder(5, 6);
  for (int v = 0; v < body.vertex_count(); ++v) body.blend_weights[2 * v] = body.blend_weights[2 * v + 1] = 0.5;
  const auto labels = vertex_part_labels(body, {{0}, {1}});
  for (int l : labels) EXPECT_EQ(l, 0);
}

TEST(Bvh, SingleTriangleLeafBox) {
  const std::vector<Vec3d> v = {Vec3d(0, 0, 0), Vec3d(1, 0.5, 0), Vec3d(0.2, 2, -1)};
  const TriangleBvh bvh(v, {{0, 1, 2}}, {0});
  ASSERT_EQ(bvh.nodes().size(), 1u);
  EXPECT_EQ(bvh.bounds().lo, Vec3d(0, 0, -1));
  EXPECT_EQ(bvh.bounds().hi, Vec3d(1, 2, 0));
}

TEST(Bvh, RootBoxIsUnionOfTriangles) {
  const std::vector<Vec3d> v = {Vec3d(0, 0, 0), Vec3d(1, 0, 0), Vec3d(0, 1, 0),
                                Vec3d(5, 5, 5), Vec3d(6, 5, 5), Vec3d(5, 7, 4)};
  const TriangleBvh bvh(v, {{0, 1, 2}, {3, 4, 5}}, {0, 1});
  EXPECT_EQ(bvh.bounds().lo, Vec3d(0, 0, 0));
  EXPECT_EQ(bvh.bounds().hi, Vec3d(6, 7, 5));
}

TEST(Bvh, DegenerateTrianglesAreFlaggedAndKept) {
  const std::vector<Vec3d> v = {Vec3d(0, 0, 0), Vec3d(1, 0, 0), Vec3d(2, 0, 0), Vec3d(0, 1, 0)};
  const TriangleBvh bvh(v, {{0, 1, 2}, {0, 1, 3}}, {0, 1});
  EXPECT_EQ(bvh.degenerate_faces(), std::vector<int>{0});
  EXPECT_EQ(bvh.triangle_count(), 2);
}

TEST(Bvh, NanVertexIsDataError) {
  const std::vector<Vec3d> v = {Vec3d(0, 0, 0), Vec3d(1, 0, 0), Vec3d(0, std::nan(""), 0)};
  EXPECT_THROW(TriangleBvh(v, {{0, 1, 2}}, {0}), DataError);
}

TEST(Bvh, ThousandTrianglesMatchBruteForce) {
  const auto m = pnvr::testing::triangle_soup(1000, 5);
  std::vector<int> ids(m.faces.size());
  std::iota(ids.begin(), ids.end(), 0);
  const TriangleBvh bvh(m.vertices, m.faces, ids);
  SplitMix64 rng(6);
  for (int q = 0; q < 100; ++q) {
    const Vec3d p(rng.uniform() * 1.4 - 0.2, rng.uniform() * 1.4 - 0.2, rng.uniform() * 1.4 - 0.2);
    const auto hit = bvh.nearest(p);
    const auto ref = oracle::brute_nearest(m.vertices, m.faces, ids, p);
    EXPECT_NEAR(std::sqrt(hit.dist2), ref.distance, 1e-12);
    EXPECT_EQ(hit.face, ref.face);
  }
}

TEST(NearestSurface, AboveInteriorProjectsOrthogonally) {
  SkinnedBody b = chain_body(1);
  b.vertices = {Vec3d(0, 0, 0), Vec3d(1, 0, 0), Vec3d(0, 1, 0)};
  b.faces = {{0, 1, 2}};
  b.blend_weights = {1, 1, 1};
  b.uv = {Vec2d(0, 0), Vec2d(1, 0), Vec2d(0, 1)};
  b.part_sets = {{0}};
  const auto bvh = build_part_bvh(b, decompose_parts(b), b.vertices);
  const auto q = nearest_surface_query(bvh, b, 0, Vec3d(0.2, 0.3, 0.5));
  EXPECT_LT((q.point - Vec3d(0.2, 0.3, 0)).norm(), 1e-15);
  EXPECT_NEAR(q.distance, 0.5, 1e-15);
  EXPECT_LT((q.bary - Vec3d(0.5, 0.2, 0.3)).norm(), 1e-15);
  EXPECT_LT((q.uv - Vec2d(0.2, 0.3)).norm(), 1e-15);
}

TEST(NearestSurface, BeyondEdgeClampsToEdge) {
  SkinnedBody b = chain_body(1);
  b.vertices = {Vec3d(0, 0, 0), Vec3d(1, 0, 0), Vec3d(0, 1, 0)};
  b.faces = {{0, 1, 2}};
  b.blend_weights = {1, 1, 1};
  b.uv = {Vec2d(0, 0), Vec2d(1, 0), Vec2d(0, 1)};
  b.part_sets = {{0}};
  const auto bvh = build_part_bvh(b, decompose_parts(b), b.vertices);
  const auto q = nearest_surface_query(bvh, b, 0, Vec3d(0.4, -0.3, 0.2));
  EXPECT_LT((q.point - Vec3d(0.4, 0, 0)).norm(), 1e-15);
  int zeros = 0;
  for (int i = 0; i < 3; ++i) zeros += q.bary[i] == 0.0;
  EXPECT_EQ(zeros, 1);
}

TEST(NearestSurface, ToyBodyMatchesBruteForceWithAttributes) {
  const auto spec = default_toy_spec();
  const auto body = build_toy_body(spec);
  const auto parts = decompose_parts(body);
  const auto bvh = build_part_bvh(body, parts, body.vertices);
  SplitMix64 rng(8);
  const Aabb box = body.bounds().dilated(0.1);
  for (int q = 0; q < 200; ++q) {
    Vec3d x;
    for (int a = 0; a < 3; ++a) x[a] = box.lo[a] + rng.uniform() * (box.hi[a] - box.lo[a]);
    const int k = static_cast<int>(rng.below(parts.size()));
    const auto s = nearest_surface_query(bvh, body, k, x);
    const auto ref = oracle::brute_nearest(body.vertices, body.faces, parts[k].faces, x);
    EXPECT_NEAR(s.distance, ref.distance, 1e-9 * std::max(ref.distance, 1e-3));
    // Same triangle modulo exact ties; attributes then follow from the point.
    const auto& f = body.faces[s.face];
    const Vec3d recon = s.bary[0] * body.vertices[f[0]] + s.bary[1] * body.vertices[f[1]] + s.bary[2] * body.vertices[f[2]];
    EXPECT_LT((recon - s.point).norm(), 1e-6);
    double wsum = 0;
    for (double w : s.weights) wsum += w;
    EXPECT_NEAR(wsum, 1.0, 1e-9);
    if (s.face == ref.face) {
      std::vector<double> w;
      Vec2d uv;
      interpolate_attributes(body, ref.face, s.bary, w, uv);
      EXPECT_LT((uv - s.uv).norm(), 1e-6);
    }
  }
}

TEST(NearestSurface, OracleSuitePasses) {
  const auto r = pnvr::testing::suite_nearest_oracle();
  EXPECT_TRUE(r.pass) << r.detail;
}

TEST(BodyFile, RoundTripAndCorruption) {
  auto body = build_toy_body(default_toy_spec());
  quantize_body_to_f32(body);
  const auto bytes = encode_body(body);
  const auto back = decode_body(bytes, "mem");
  EXPECT_EQ(back.vertices, body.vertices);
  EXPECT_EQ(back.faces, body.faces);
  EXPECT_EQ(back.blend_weights, body.blend_weights);
  EXPECT_EQ(back.uv, body.uv);
  EXPECT_EQ(back.part_sets, body.part_sets);
  EXPECT_EQ(back.skeleton.names, body.skeleton.names);
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_body(bad, "mem"), IoError);
  auto cut = bytes;
  cut.resize(cut.size() / 2);
  EXPECT_THROW(decode_body(cut, "mem"), IoError);
}

TEST(BodyFile, JsonMirrorRoundTrip) {
  const auto body = build_toy_body(default_toy_spec());
  const auto back = body_from_json(body_to_json(body));
  EXPECT_EQ(back.vertices, body.vertices);
  EXPECT_EQ(back.faces, body.faces);
  EXPECT_EQ(back.part_names, body.part_names);
}

TEST(SkinnedBodyInvariants, ToyBodyValidates) {
  EXPECT_NO_THROW(build_toy_body(default_toy_spec()).validate());
}
