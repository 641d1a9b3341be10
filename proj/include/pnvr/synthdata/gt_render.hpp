#pragma once

#include <pnvr/core/image.hpp>
#include <pnvr/core/parallel.hpp>
#include <pnvr/geometry/bvh.hpp>
#include <pnvr/renderer/camera.hpp>
#include <pnvr/synthdata/toy_body.hpp>

#include <cmath>
#include <numbers>
#include <numeric>
#include <vector>

namespace pnvr {

struct ShadingSpec {
  Vec3d light_dir = Vec3d(0.35, 0.8, 0.55).normalized();  // toward the light, world space
  double ambient = 0.35;
  double diffuse = 0.65;
  std::array<double, 3> background{1.0, 1.0, 1.0};
};

struct GroundTruth {
  Image color;  // 3 channels
  Image mask;   // 1 channel, 0 or 1
};

// Posed surface used by the ground truth: skinned vertices plus the ripple
// displacement, with smooth normals.
struct PosedSurface {
  std::vector<Vec3d> vertices;
  std::vector<Vec3d> normals;
};

inline PosedSurface pose_surface(const ToyBodySpec& spec, const ToyMesh& mesh, const Pose& pose, double t_norm) {
  const auto G = pose_to_transforms(mesh.body, pose);
  PosedSurface s;
  const int V = mesh.body.vertex_count();
  s.vertices.resize(V);
  s.normals.resize(V);
  const double pi = std::numbers::pi;
  for (int v = 0; v < V; ++v) {
    const Mat34d A = blend_transforms(mesh.body.weights_of(v), G);
    s.vertices[v] = apply(A, mesh.body.vertices[v]);
    s.normals[v] = (A.leftCols<3>() * mesh.normals[v]).normalized();
    const int bone = mesh.vertex_bone[v];
    if (std::find(spec.ripple_bones.begin(), spec.ripple_bones.end(), bone) != spec.ripple_bones.end()) {
      const double phase = 2 * pi * (spec.ripple_frequency * mesh.vertex_along[v] - t_norm);
      s.vertices[v] += spec.ripple_amplitude * std::sin(phase) * s.normals[v];
    }
  }
  return s;
}

// Ray-traced image and hit mask of the textured, Lambertian-lit body. Uses
// only mesh intersection; nothing from the neural field.
inline GroundTruth render_ground_truth(const ToyBodySpec& spec, const ToyMesh& mesh, const Pose& pose, double t_norm,
                                       const Camera& cam, const ShadingSpec& shading = {}, int threads = 1) {
  const auto surf = pose_surface(spec, mesh, pose, t_norm);
  std::vector<int> all(mesh.body.faces.size());
  std::iota(all.begin(), all.end(), 0);
  const TriangleBvh bvh(surf.vertices, mesh.body.faces, all);
  GroundTruth gt{Image(cam.width, cam.height, 3), Image(cam.width, cam.height, 1)};
  parallel_for(static_cast<std::size_t>(cam.height), threads, [&](std::size_t y0, std::size_t y1) {
    for (int y = static_cast<int>(y0); y < static_cast<int>(y1); ++y)
      for (int x = 0; x < cam.width; ++x) {
        const Ray r = pixel_ray(cam, x, y);
        const auto hit = bvh.raycast(r.origin, r.dir, kMinNear, std::numeric_limits<double>::infinity());
        if (!hit.found()) {
          for (int c = 0; c < 3; ++c) gt.color.at(x, y, c) = static_cast<float>(shading.background[c]);
          continue;
        }
        const auto& f = mesh.body.faces[hit.face];
        Vec2d uv = Vec2d::Zero();
        Vec3d n = Vec3d::Zero();
        for (int i = 0; i < 3; ++i) {
          uv += hit.bary[i] * mesh.body.uv[f[i]];
          n += hit.bary[i] * surf.normals[f[i]];
        }
        n.normalize();
        const double lambert = std::abs(n.dot(shading.light_dir));
        const Vec3d albedo = texture_color(spec, uv);
        const Vec3d c = albedo * (shading.ambient + shading.diffuse * lambert);
        for (int k = 0; k < 3; ++k) gt.color.at(x, y, k) = static_cast<float>(std::clamp(c[k], 0.0, 1.0));
        gt.mask.at(x, y) = 1.0f;
      }
  });
  return gt;
}

}  // namespace pnvr
