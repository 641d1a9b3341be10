#pragma once

#include <pnvr/core/error.hpp>
#include <pnvr/core/types.hpp>
#include <pnvr/geometry/parts.hpp>
#include <pnvr/geometry/skinned_body.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace pnvr {

struct TrianglePoint {
  Vec3d point;
  // Barycentric coordinates with respect to (a, b, c).
  Vec3d bary;
  double dist2 = std::numeric_limits<double>::infinity();
};

// Closest point on triangle abc to p, covering the vertex, edge and face
// Voronoi regions.
inline TrianglePoint closest_point_on_triangle(const Vec3d& p, const Vec3d& a, const Vec3d& b,
                                               const Vec3d& c) {
  const Vec3d ab = b - a, ac = c - a, ap = p - a;
  auto make = [&](double u, double v, double w) {
    TrianglePoint r;
    r.bary = Vec3d(u, v, w);
    r.point = u * a + v * b + w * c;
    r.dist2 = (p - r.point).squaredNorm();
    return r;
  };
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return make(1, 0, 0);
  const Vec3d bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return make(0, 1, 0);
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
    const double v = d1 / (d1 - d3);
    return make(1 - v, v, 0);
  }
  const Vec3d cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return make(0, 0, 1);
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
    const double w = d2 / (d2 - d6);
    return make(1 - w, 0, w);
  }
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
    const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return make(0, 1 - w, w);
  }
  const double denom = va + vb + vc;
  if (!(std::abs(denom) > 0.0)) {
    // Degenerate (zero-area) triangle: fall back to its longest edge.
    TrianglePoint best;
    const std::array<std::array<int, 2>, 3> edges{{{0, 1}, {1, 2}, {0, 2}}};
    const std::array<Vec3d, 3> v{a, b, c};
    for (auto e : edges) {
      const Vec3d d = v[e[1]] - v[e[0]];
      const double len2 = d.squaredNorm();
      double s = len2 > 0.0 ? std::clamp((p - v[e[0]]).dot(d) / len2, 0.0, 1.0) : 0.0;
      Vec3d bc = Vec3d::Zero();
      bc[e[0]] = 1 - s;
      bc[e[1]] = s;
      TrianglePoint r = make(bc[0], bc[1], bc[2]);
      if (r.dist2 < best.dist2) best = r;
    }
    return best;
  }
  const double v = vb / denom, w = vc / denom;
  return make(1 - v - w, v, w);
}

// Median-split BVH over a set of triangles. Triangle corners are copied in
// leaf order, so the tree does not reference the source mesh after build.
class TriangleBvh {
 public:
  struct Node {
    Aabb box;
    int left = -1;
    int right = -1;
    int start = 0;
    int count = 0;
    bool leaf() const { return count > 0; }
  };

  struct Hit {
    int face = -1;  // global face index, -1 when nothing found
    Vec3d bary = Vec3d::Zero();
    Vec3d point = Vec3d::Zero();
    double dist2 = std::numeric_limits<double>::infinity();
    bool found() const { return face >= 0; }
  };

  struct RayHit {
    int face = -1;
    double t = std::numeric_limits<double>::infinity();
    Vec3d bary = Vec3d::Zero();
    bool found() const { return face >= 0; }
  };

  static constexpr int kLeafSize = 4;

  TriangleBvh() = default;

  TriangleBvh(const std::vector<Vec3d>& vertices, const std::vector<std::array<int, 3>>& faces,
              const std::vector<int>& face_ids) {
    const int n = static_cast<int>(face_ids.size());
    tris_.resize(n);
    std::vector<Vec3d> centroid(n);
    for (int i = 0; i < n; ++i) {
      const auto& f = faces[face_ids[i]];
      Tri& t = tris_[i];
      t.a = vertices[f[0]];
      t.b = vertices[f[1]];
      t.c = vertices[f[2]];
      t.face = face_ids[i];
      if (!t.a.allFinite() || !t.b.allFinite() || !t.c.allFinite())
        throw DataError("non-finite vertex in face " + std::to_string(t.face));
      if ((t.b - t.a).cross(t.c - t.a).squaredNorm() == 0.0) degenerate_.push_back(t.face);
      centroid[i] = (t.a + t.b + t.c) / 3.0;
    }
    if (n == 0) return;
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    nodes_.reserve(2 * n);
    build(order, centroid, 0, n);
    std::vector<Tri> sorted(n);
    for (int i = 0; i < n; ++i) sorted[i] = tris_[order[i]];
    tris_ = std::move(sorted);
  }

  bool empty() const { return tris_.empty(); }
  int triangle_count() const { return static_cast<int>(tris_.size()); }
  const std::vector<Node>& nodes() const { return nodes_; }
  const Aabb& bounds() const { return nodes_.front().box; }
  // Faces with zero area. They stay in the tree.
  const std::vector<int>& degenerate_faces() const { return degenerate_; }
  // Global face ids in leaf order (each appears once).
  std::vector<int> leaf_faces() const {
    std::vector<int> out;
    for (const auto& t : tris_) out.push_back(t.face);
    return out;
  }

  // Closest triangle to p among those within sqrt(max_dist2). Exact distance
  // ties resolve to the lowest global face index.
  Hit nearest(const Vec3d& p, double max_dist2 = std::numeric_limits<double>::infinity()) const {
    Hit best;
    if (tris_.empty()) return best;
    double bound = max_dist2;
    int stack[64];
    int sp = 0;
    if (nodes_[0].box.distance2(p) > bound) return best;
    stack[sp++] = 0;
    while (sp > 0) {
      const Node& node = nodes_[stack[--sp]];
      if (node.box.distance2(p) > bound) continue;
      if (node.leaf()) {
        for (int i = node.start; i < node.start + node.count; ++i) {
          const Tri& t = tris_[i];
          TrianglePoint cp = closest_point_on_triangle(p, t.a, t.b, t.c);
          if (cp.dist2 > bound) continue;
          if (cp.dist2 < best.dist2 || (cp.dist2 == best.dist2 && t.face < best.face)) {
            best.face = t.face;
            best.bary = cp.bary;
            best.point = cp.point;
            best.dist2 = cp.dist2;
            bound = cp.dist2;
          }
        }
        continue;
      }
      const double dl = nodes_[node.left].box.distance2(p);
      const double dr = nodes_[node.right].box.distance2(p);
      // Push the farther child first so the nearer one is visited next.
      if (dl <= dr) {
        if (dr <= bound) stack[sp++] = node.right;
        if (dl <= bound) stack[sp++] = node.left;
      } else {
        if (dl <= bound) stack[sp++] = node.left;
        if (dr <= bound) stack[sp++] = node.right;
      }
    }
    return best;
  }

  // First intersection along o + t d with t in (t_min, t_max).
  RayHit raycast(const Vec3d& o, const Vec3d& d, double t_min = 0.0,
                 double t_max = std::numeric_limits<double>::infinity()) const {
    RayHit best;
    if (tris_.empty()) return best;
    const Vec3d inv(1.0 / d.x(), 1.0 / d.y(), 1.0 / d.z());
    int stack[64];
    int sp = 0;
    stack[sp++] = 0;
    double far = t_max;
    while (sp > 0) {
      const Node& node = nodes_[stack[--sp]];
      if (!slab_hit(node.box, o, inv, t_min, far)) continue;
      if (node.leaf()) {
        for (int i = node.start; i < node.start + node.count; ++i) {
          const Tri& t = tris_[i];
          double th, u, v;
          if (!intersect(o, d, t, th, u, v)) continue;
          if (th <= t_min || th > far) continue;
          if (th < best.t || (th == best.t && t.face < best.face)) {
            best.face = t.face;
            best.t = th;
            best.bary = Vec3d(1 - u - v, u, v);
            far = th;
          }
        }
        continue;
      }
      stack[sp++] = node.right;
      stack[sp++] = node.left;
    }
    return best;
  }

 private:
  struct Tri {
    Vec3d a, b, c;
    int face = -1;
  };

  int build(std::vector<int>& order, const std::vector<Vec3d>& centroid, int begin, int end) {
    const int idx = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    Aabb box, cbox;
    for (int i = begin; i < end; ++i) {
      const Tri& t = tris_[order[i]];
      box.expand(t.a);
      box.expand(t.b);
      box.expand(t.c);
      cbox.expand(centroid[order[i]]);
    }
    nodes_[idx].box = box;
    if (end - begin <= kLeafSize) {
      nodes_[idx].start = begin;
      nodes_[idx].count = end - begin;
      return idx;
    }
    int axis = 0;
    const Vec3d ext = cbox.extent();
    if (ext.y() > ext[axis]) axis = 1;
    if (ext.z() > ext[axis]) axis = 2;
    const int mid = (begin + end) / 2;
    std::nth_element(order.begin() + begin, order.begin() + mid, order.begin() + end, [&](int l, int r) {
      if (centroid[l][axis] != centroid[r][axis]) return centroid[l][axis] < centroid[r][axis];
      return tris_[l].face < tris_[r].face;
    });
    const int left = build(order, centroid, begin, mid);
    const int right = build(order, centroid, mid, end);
    nodes_[idx].left = left;
    nodes_[idx].right = right;
    return idx;
  }

  static bool slab_hit(const Aabb& b, const Vec3d& o, const Vec3d& inv, double t0, double t1) {
    for (int a = 0; a < 3; ++a) {
      double tn = (b.lo[a] - o[a]) * inv[a];
      double tf = (b.hi[a] - o[a]) * inv[a];
      if (std::isnan(tn) || std::isnan(tf)) {
        // Direction component zero with origin on a slab plane.
        if (o[a] < b.lo[a] || o[a] > b.hi[a]) return false;
        continue;
      }
      if (tn > tf) std::swap(tn, tf);
      t0 = std::max(t0, tn);
      t1 = std::min(t1, tf);
      if (t0 > t1) return false;
    }
    return true;
  }

  // Moller-Trumbore.
  static bool intersect(const Vec3d& o, const Vec3d& d, const Tri& t, double& th, double& u, double& v) {
    const Vec3d e1 = t.b - t.a, e2 = t.c - t.a;
    const Vec3d pv = d.cross(e2);
    const double det = e1.dot(pv);
    if (std::abs(det) < 1e-14) return false;
    const double inv = 1.0 / det;
    const Vec3d tv = o - t.a;
    u = tv.dot(pv) * inv;
    if (u < 0.0 || u > 1.0) return false;
    const Vec3d qv = tv.cross(e1);
    v = d.dot(qv) * inv;
    if (v < 0.0 || u + v > 1.0) return false;
    th = e2.dot(qv) * inv;
    return true;
  }

  std::vector<Tri> tris_;
  std::vector<Node> nodes_;
  std::vector<int> degenerate_;
};

// Per-part BVHs over posed triangles for one frame.
struct PartBvh {
  std::vector<TriangleBvh> parts;
  std::vector<Vec3d> posed_vertices;

  int part_count() const { return static_cast<int>(parts.size()); }
};

inline PartBvh build_part_bvh(const SkinnedBody& body, const std::vector<PartMesh>& part_meshes,
                              std::vector<Vec3d> posed_vertices) {
  if (posed_vertices.size() != body.vertices.size())
    throw DimensionError("posed vertex count does not match body");
  for (std::size_t v = 0; v < posed_vertices.size(); ++v)
    if (!posed_vertices[v].allFinite()) throw DataError("non-finite posed vertex " + std::to_string(v));
  PartBvh out;
  out.parts.reserve(part_meshes.size());
  for (const auto& pm : part_meshes) out.parts.emplace_back(posed_vertices, body.faces, pm.faces);
  out.posed_vertices = std::move(posed_vertices);
  return out;
}

struct SurfaceQuery {
  int part = -1;
  int face = -1;
  Vec3d point = Vec3d::Zero();
  double distance = 0.0;
  Vec3d bary = Vec3d::Zero();
  std::vector<double> weights;
  Vec2d uv = Vec2d::Zero();
};

// Barycentric interpolation of the face's vertex attributes.
inline void interpolate_attributes(const SkinnedBody& body, int face, const Vec3d& bary,
                                   std::vector<double>& weights, Vec2d& uv) {
  const auto& f = body.faces[face];
  const int J = body.joint_count();
  weights.assign(J, 0.0);
  uv.setZero();
  for (int i = 0; i < 3; ++i) {
    const double* w = body.weights_of(f[i]);
    for (int j = 0; j < J; ++j) weights[j] += bary[i] * w[j];
    uv += bary[i] * body.uv[f[i]];
  }
}

inline SurfaceQuery nearest_surface_query(const PartBvh& bvh, const SkinnedBody& body, int k,
                                          const Vec3d& x) {
  if (k < 0 || k >= bvh.part_count()) throw DimensionError("part index out of range");
  const auto hit = bvh.parts[k].nearest(x);
  if (!hit.found()) throw ConfigError("part " + std::to_string(k) + " has no triangles");
  SurfaceQuery q;
  q.part = k;
  q.face = hit.face;
  q.point = hit.point;
  q.distance = std::sqrt(hit.dist2);
  q.bary = hit.bary;
  interpolate_attributes(body, hit.face, hit.bary, q.weights, q.uv);
  return q;
}

}  // namespace pnvr
