#pragma once

#include <pnvr/core/error.hpp>
#include <pnvr/core/rng.hpp>
#include <pnvr/core/types.hpp>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace pnvr {

// Pinhole camera. Camera space is x right, y down, z forward; a world point
// p maps to camera space as R p + t.
struct Camera {
  std::string name;
  double fx = 1, fy = 1, cx = 0, cy = 0;
  int width = 1, height = 1;
  Mat3d R = Mat3d::Identity();
  Vec3d t = Vec3d::Zero();

  Vec3d center() const { return -R.transpose() * t; }

  void validate() const {
    if (!(fx > 0) || !(fy > 0)) throw ConfigError("camera '" + name + "' needs positive focal lengths");
    if (width < 1 || height < 1) throw ConfigError("camera '" + name + "' has an empty image");
    if (!((R.transpose() * R - Mat3d::Identity()).norm() < 1e-6) || !(R.determinant() > 0))
      throw ConfigError("camera '" + name + "' rotation is not rigid");
  }

  // Camera at `eye` looking at `target` with the image y axis along -up.
  static Camera look_at(const std::string& name, const Vec3d& eye, const Vec3d& target, const Vec3d& up, double fov_y,
                        int width, int height) {
    Camera c;
    c.name = name;
    c.width = width;
    c.height = height;
    c.fy = 0.5 * height / std::tan(0.5 * fov_y);
    c.fx = c.fy;
    c.cx = 0.5 * width;
    c.cy = 0.5 * height;
    const Vec3d z = (target - eye).normalized();
    const Vec3d x = z.cross(up).normalized();
    const Vec3d y = z.cross(x);
    c.R.row(0) = x;
    c.R.row(1) = y;
    c.R.row(2) = z;
    c.t = -c.R * eye;
    return c;
  }
};

struct Ray {
  Vec3d origin = Vec3d::Zero();
  Vec3d dir = Vec3d::UnitZ();
  double near = 0.0;
  double far = 0.0;
  int px = 0, py = 0;
  int frame = 0;
};

struct PixelRect {
  int x0 = 0, y0 = 0, width = 0, height = 0;
  int count() const { return width * height; }
};

// Ray through the center of pixel (px, py).
inline Ray pixel_ray(const Camera& cam, int px, int py) {
  const Vec3d dc((px + 0.5 - cam.cx) / cam.fx, (py + 0.5 - cam.cy) / cam.fy, 1.0);
  Ray r;
  r.origin = cam.center();
  r.dir = (cam.R.transpose() * dc).normalized();
  r.px = px;
  r.py = py;
  return r;
}

inline std::vector<Ray> generate_rays(const Camera& cam, const PixelRect& rect) {
  if (rect.x0 < 0 || rect.y0 < 0 || rect.width < 0 || rect.height < 0 || rect.x0 + rect.width > cam.width ||
      rect.y0 + rect.height > cam.height)
    throw DimensionError("pixel rectangle outside the image");
  std::vector<Ray> rays;
  rays.reserve(rect.count());
  for (int y = rect.y0; y < rect.y0 + rect.height; ++y)
    for (int x = rect.x0; x < rect.x0 + rect.width; ++x) rays.push_back(pixel_ray(cam, x, y));
  return rays;
}

// Continuous pixel coordinates of a world point; nullopt behind the camera.
inline std::optional<Vec2d> project(const Camera& cam, const Vec3d& p) {
  const Vec3d q = cam.R * p + cam.t;
  if (!(q.z() > 0)) return std::nullopt;
  return Vec2d(cam.fx * q.x() / q.z() + cam.cx, cam.fy * q.y() / q.z() + cam.cy);
}

inline constexpr double kMinNear = 1e-3;

// Slab-test interval of the ray inside `box`, clipped to (1e-3, inf).
inline std::optional<std::pair<double, double>> ray_bounds(const Vec3d& o, const Vec3d& d, const Aabb& box) {
  if (box.empty()) return std::nullopt;
  double t0 = kMinNear, t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (d[a] == 0.0) {
      if (o[a] < box.lo[a] || o[a] > box.hi[a]) return std::nullopt;
      continue;
    }
    double ta = (box.lo[a] - o[a]) / d[a];
    double tb = (box.hi[a] - o[a]) / d[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (!(t0 < t1)) return std::nullopt;
  return std::make_pair(t0, t1);
}

// One uniform depth per equal sub-interval of [near, far].
inline std::vector<double> sample_stratified(double near, double far, int n, SplitMix64& rng) {
  if (n < 1) throw ConfigError("sample count must be >= 1");
  if (!(far > near)) throw DimensionError("ray bounds must satisfy near < far");
  std::vector<double> s(n);
  const double step = (far - near) / n;
  for (int i = 0; i < n; ++i) s[i] = near + (i + std::min(rng.uniform(), 0.999999)) * step;
  return s;
}

inline nlohmann::json camera_to_json(const Camera& c) {
  nlohmann::json j;
  j["name"] = c.name;
  j["fx"] = c.fx;
  j["fy"] = c.fy;
  j["cx"] = c.cx;
  j["cy"] = c.cy;
  j["width"] = c.width;
  j["height"] = c.height;
  std::vector<double> R(9), t(3);
  for (int i = 0; i < 3; ++i) {
    for (int k = 0; k < 3; ++k) R[3 * i + k] = c.R(i, k);
    t[i] = c.t[i];
  }
  j["R"] = R;
  j["t"] = t;
  return j;
}

inline Camera camera_from_json(const nlohmann::json& j) {
  Camera c;
  try {
    c.name = j.at("name");
    c.fx = j.at("fx");
    c.fy = j.at("fy");
    c.cx = j.at("cx");
    c.cy = j.at("cy");
    c.width = j.at("width");
    c.height = j.at("height");
    const auto R = j.at("R").get<std::vector<double>>();
    const auto t = j.at("t").get<std::vector<double>>();
    if (R.size() != 9 || t.size() != 3) throw DataError("camera extrinsics have the wrong size");
    for (int i = 0; i < 3; ++i) {
      for (int k = 0; k < 3; ++k) c.R(i, k) = R[3 * i + k];
      c.t[i] = t[i];
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed camera: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace pnvr
