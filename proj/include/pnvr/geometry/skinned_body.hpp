#pragma once

#include <pnvr/core/error.hpp>
#include <pnvr/core/types.hpp>

#include <array>
#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace pnvr {

struct Skeleton {
  std::vector<std::string> names;
  // parents[j] < j for every non-root joint; -1 marks a root.
  std::vector<int> parents;
  // Rest-pose joint positions (meters).
  std::vector<Vec3d> joints;

  int size() const { return static_cast<int>(parents.size()); }
};

// Rest-pose triangle mesh with skinning attributes. Blend weights are stored
// row-major: weight(v, j) = blend_weights[v * J + j].
struct SkinnedBody {
  std::vector<Vec3d> vertices;
  std::vector<std::array<int, 3>> faces;
  std::vector<double> blend_weights;
  std::vector<Vec2d> uv;
  Skeleton skeleton;
  // Omega_k: disjoint bone sets covering all joints, one per body part.
  std::vector<std::vector<int>> part_sets;
  std::vector<std::string> part_names;

  int joint_count() const { return skeleton.size(); }
  int vertex_count() const { return static_cast<int>(vertices.size()); }
  int part_count() const { return static_cast<int>(part_sets.size()); }

  double weight(int v, int j) const {
    return blend_weights[static_cast<std::size_t>(v) * joint_count() + j];
  }
  const double* weights_of(int v) const {
    return blend_weights.data() + static_cast<std::size_t>(v) * joint_count();
  }

  Aabb bounds() const {
    Aabb b;
    for (const auto& p : vertices) b.expand(p);
    return b;
  }

  // Throws DataError describing the first violated invariant.
  void validate() const {
    const int J = joint_count();
    const int V = vertex_count();
    auto fail = [](const std::string& m) { throw DataError("invalid skinned body: " + m); };
    if (J == 0) fail("empty skeleton");
    if (static_cast<int>(skeleton.joints.size()) != J) fail("joint position count != parent count");
    if (!skeleton.names.empty() && static_cast<int>(skeleton.names.size()) != J)
      fail("joint name count != joint count");
    for (int j = 0; j < J; ++j)
      if (skeleton.parents[j] >= j || skeleton.parents[j] < -1)
        fail("joint " + std::to_string(j) + " parent must precede it");
    if (blend_weights.size() != static_cast<std::size_t>(V) * J)
      fail("blend weight array has wrong size");
    if (uv.size() != vertices.size()) fail("uv count != vertex count");
    for (int v = 0; v < V; ++v) {
      if (!vertices[v].allFinite()) fail("non-finite vertex " + std::to_string(v));
      double s = 0.0;
      for (int j = 0; j < J; ++j) {
        double w = weight(v, j);
        if (!(w >= 0.0)) fail("negative blend weight at vertex " + std::to_string(v));
        s += w;
      }
      if (std::abs(s - 1.0) > 1e-6) fail("blend weights of vertex " + std::to_string(v) + " sum to " + std::to_string(s));
      if (!(uv[v].array() >= 0.0).all() || !(uv[v].array() <= 1.0).all())
        fail("uv outside [0,1]^2 at vertex " + std::to_string(v));
    }
    for (std::size_t f = 0; f < faces.size(); ++f)
      for (int i : faces[f])
        if (i < 0 || i >= V) fail("face " + std::to_string(f) + " index out of range");
    std::vector<int> owner(J, -1);
    for (int k = 0; k < part_count(); ++k)
      for (int j : part_sets[k]) {
        if (j < 0 || j >= J) fail("part " + std::to_string(k) + " names unknown bone");
        if (owner[j] != -1) fail("bone " + std::to_string(j) + " belongs to two parts");
        owner[j] = k;
      }
    for (int j = 0; j < J; ++j)
      if (owner[j] == -1) fail("bone " + std::to_string(j) + " belongs to no part");
    if (!part_names.empty() && part_names.size() != part_sets.size()) fail("part name count mismatch");
  }
};

struct Pose {
  // Per-joint axis-angle rotation (radians), relative to the parent frame.
  std::vector<Vec3d> rotations;
  Vec3d translation = Vec3d::Zero();
  int frame_index = 0;

  static Pose rest(int joint_count, int frame = 0) {
    Pose p;
    p.rotations.assign(joint_count, Vec3d::Zero());
    p.frame_index = frame;
    return p;
  }

  // Flattened rotations, 3J values.
  std::vector<double> flat() const {
    std::vector<double> out;
    out.reserve(rotations.size() * 3);
    for (const auto& r : rotations) out.insert(out.end(), {r.x(), r.y(), r.z()});
    return out;
  }
};

// Rest-to-posed rigid transforms, one per joint.
struct BoneTransforms {
  std::vector<Mat4d> G;
  int size() const { return static_cast<int>(G.size()); }
};

inline Mat3d axis_angle_to_matrix(const Vec3d& r) {
  const double theta = r.norm();
  if (theta == 0.0) return Mat3d::Identity();
  return Eigen::AngleAxisd(theta, r / theta).toRotationMatrix();
}

inline BoneTransforms pose_to_transforms(const SkinnedBody& body, const Pose& pose) {
  const int J = body.joint_count();
  if (static_cast<int>(pose.rotations.size()) != J)
    throw DimensionError("pose has " + std::to_string(pose.rotations.size()) +
                         " rotations, skeleton has " + std::to_string(J) + " joints");
  BoneTransforms out;
  out.G.resize(J);
  for (int j = 0; j < J; ++j) {
    if (!pose.rotations[j].allFinite()) throw DataError("non-finite rotation for joint " + std::to_string(j));
    const Mat3d R = axis_angle_to_matrix(pose.rotations[j]);
    const Vec3d& c = body.skeleton.joints[j];
    // Rotation about the joint's rest position: x -> R (x - c) + c.
    Mat4d local = Mat4d::Identity();
    local.topLeftCorner<3, 3>() = R;
    local.topRightCorner<3, 1>() = c - R * c;
    const int p = body.skeleton.parents[j];
    if (p < 0) {
      Mat4d root = Mat4d::Identity();
      root.topRightCorner<3, 1>() = pose.translation;
      out.G[j] = root * local;
    } else {
      out.G[j] = out.G[p] * local;
    }
  }
  return out;
}

// Blended affine transform (sum_j w_j G_j) / sum_j w_j. Dividing by the
// accumulated weight makes identity transforms blend to exactly identity.
inline Mat34d blend_transforms(const double* w, const BoneTransforms& G) {
  Mat34d A = Mat34d::Zero();
  double s = 0.0;
  for (int j = 0; j < G.size(); ++j) {
    if (w[j] == 0.0) continue;
    A.noalias() += w[j] * G.G[j].topRows<3>();
    s += w[j];
  }
  if (s != 1.0 && s > 0.0) A /= s;
  return A;
}

inline Vec3d apply(const Mat34d& A, const Vec3d& x) {
  return A.leftCols<3>() * x + A.col(3);
}

inline Vec3d lbs_forward(const Vec3d& x_rest, const std::vector<double>& w, const BoneTransforms& G) {
  if (static_cast<int>(w.size()) != G.size())
    throw DimensionError("weight vector length " + std::to_string(w.size()) + " != bone count " +
                         std::to_string(G.size()));
  return apply(blend_transforms(w.data(), G), x_rest);
}

inline constexpr double kMaxBlendCondition = 1e8;

// Frobenius-norm condition number of the linear block, infinity when singular.
inline double blend_condition(const Mat34d& A) {
  const Mat3d M = A.leftCols<3>();
  const double det = M.determinant();
  if (!(std::abs(det) > 0.0) || !std::isfinite(det)) return std::numeric_limits<double>::infinity();
  return M.norm() * M.inverse().norm();
}

// Inverse of an affine blend, or nullopt when the blend is near-singular.
inline std::optional<Vec3d> try_inverse_blend(const Mat34d& A, const Vec3d& x) {
  if (!(blend_condition(A) <= kMaxBlendCondition)) return std::nullopt;
  const Mat3d M = A.leftCols<3>();
  return Vec3d(M.inverse() * (x - A.col(3)));
}

inline Vec3d inverse_lbs(const Vec3d& x, const std::vector<double>& w, const BoneTransforms& G) {
  if (static_cast<int>(w.size()) != G.size())
    throw DimensionError("weight vector length " + std::to_string(w.size()) + " != bone count " +
                         std::to_string(G.size()));
  const Mat34d A = blend_transforms(w.data(), G);
  auto r = try_inverse_blend(A, x);
  if (!r) {
    std::ostringstream os;
    os << "near-singular blended transform (condition " << blend_condition(A) << ") for weights [";
    for (std::size_t j = 0; j < w.size(); ++j) os << (j ? ", " : "") << w[j];
    os << "]";
    throw SingularityError(os.str());
  }
  return *r;
}

}  // namespace pnvr
