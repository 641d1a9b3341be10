#pragma once

#include <pnvr/core/error.hpp>
#include <pnvr/geometry/skinned_body.hpp>

#include <string>
#include <vector>

namespace pnvr {

struct PartMesh {
  // Vertices whose dominant bone belongs to this part (global indices).
  std::vector<int> vertices;
  // Faces with at least one vertex in this part (global face indices). Faces
  // straddling a part boundary appear in every part that owns a corner.
  std::vector<int> faces;
};

// Dominant bone of vertex v; ties go to the lowest bone index.
inline int dominant_bone(const SkinnedBody& body, int v) {
  const double* w = body.weights_of(v);
  int best = 0;
  for (int j = 1; j < body.joint_count(); ++j)
    if (w[j] > w[best]) best = j;
  return best;
}

// Part index of every vertex under the given bone sets.
inline std::vector<int> vertex_part_labels(const SkinnedBody& body,
                                           const std::vector<std::vector<int>>& part_sets) {
  std::vector<int> bone_part(body.joint_count(), -1);
  for (int k = 0; k < static_cast<int>(part_sets.size()); ++k)
    for (int j : part_sets[k]) {
      if (j < 0 || j >= body.joint_count())
        throw ConfigError("part " + std::to_string(k) + " references bone " + std::to_string(j));
      if (bone_part[j] != -1) throw ConfigError("bone " + std::to_string(j) + " assigned to two parts");
      bone_part[j] = k;
    }
  std::vector<int> labels(body.vertex_count());
  for (int v = 0; v < body.vertex_count(); ++v) {
    const int j = dominant_bone(body, v);
    if (bone_part[j] < 0) throw ConfigError("bone " + std::to_string(j) + " belongs to no part");
    labels[v] = bone_part[j];
  }
  return labels;
}

inline std::vector<PartMesh> decompose_parts(const SkinnedBody& body,
                                             const std::vector<std::vector<int>>& part_sets,
                                             const std::vector<std::string>& names = {}) {
  const int K = static_cast<int>(part_sets.size());
  if (K == 0) throw ConfigError("no part sets defined");
  const auto labels = vertex_part_labels(body, part_sets);
  std::vector<PartMesh> parts(K);
  for (int v = 0; v < body.vertex_count(); ++v) parts[labels[v]].vertices.push_back(v);
  for (int f = 0; f < static_cast<int>(body.faces.size()); ++f) {
    const auto& tri = body.faces[f];
    for (int k = 0; k < K; ++k)
      if (labels[tri[0]] == k || labels[tri[1]] == k || labels[tri[2]] == k) parts[k].faces.push_back(f);
  }
  for (int k = 0; k < K; ++k)
    if (parts[k].vertices.empty()) {
      std::string name = k < static_cast<int>(names.size()) ? names[k] : std::to_string(k);
      throw ConfigError("part '" + name + "' has no vertices");
    }
  return parts;
}

inline std::vector<PartMesh> decompose_parts(const SkinnedBody& body) {
  return decompose_parts(body, body.part_sets, body.part_names);
}

}  // namespace pnvr
