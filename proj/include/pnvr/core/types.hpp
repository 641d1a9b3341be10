#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cstdint>
#include <limits>

namespace pnvr {

using Vec2d = Eigen::Vector2d;
using Vec3d = Eigen::Vector3d;
using Mat3d = Eigen::Matrix3d;
using Mat4d = Eigen::Matrix4d;
// Affine 3x4 block [R | t].
using Mat34d = Eigen::Matrix<double, 3, 4>;

template <typename Real>
using Vec3 = Eigen::Matrix<Real, 3, 1>;

struct Aabb {
  Vec3d lo = Vec3d::Constant(std::numeric_limits<double>::infinity());
  Vec3d hi = Vec3d::Constant(-std::numeric_limits<double>::infinity());

  bool empty() const { return (lo.array() > hi.array()).any(); }
  void expand(const Vec3d& p) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  void expand(const Aabb& b) {
    lo = lo.cwiseMin(b.lo);
    hi = hi.cwiseMax(b.hi);
  }
  Aabb dilated(double r) const { return {lo.array() - r, hi.array() + r}; }
  bool contains(const Vec3d& p) const {
    return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
  }
  bool contains(const Aabb& b) const { return contains(b.lo) && contains(b.hi); }
  Vec3d center() const { return 0.5 * (lo + hi); }
  Vec3d extent() const { return hi - lo; }
  // Squared distance from p to the box (0 inside).
  double distance2(const Vec3d& p) const {
    double d2 = 0.0;
    for (int a = 0; a < 3; ++a) {
      double v = 0.0;
      if (p[a] < lo[a]) v = lo[a] - p[a];
      else if (p[a] > hi[a]) v = p[a] - hi[a];
      d2 += v * v;
    }
    return d2;
  }
};

}  // namespace pnvr
