#pragma once

#include <pnvr/core/binary_io.hpp>
#include <pnvr/core/error.hpp>
#include <pnvr/geometry/skinned_body.hpp>

#include <json.hpp>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

namespace pnvr {

// Skinned-body container: "PNVR" magic, u32 version, then counted sections of
// little-endian f32 / u32 / i32 arrays.
inline constexpr char kBodyMagic[4] = {'P', 'N', 'V', 'R'};
inline constexpr std::uint32_t kBodyVersion = 1;

inline std::vector<char> encode_body(const SkinnedBody& body) {
  body.validate();
  const auto V = static_cast<std::uint32_t>(body.vertices.size());
  const auto F = static_cast<std::uint32_t>(body.faces.size());
  const auto J = static_cast<std::uint32_t>(body.joint_count());
  ByteWriter w;
  w.put_bytes(kBodyMagic, 4);
  w.put<std::uint32_t>(kBodyVersion);
  w.put<std::uint32_t>(V);
  for (const auto& v : body.vertices)
    for (int a = 0; a < 3; ++a) w.put<float>(static_cast<float>(v[a]));
  w.put<std::uint32_t>(F);
  for (const auto& f : body.faces)
    for (int i : f) w.put<std::uint32_t>(static_cast<std::uint32_t>(i));
  w.put<std::uint32_t>(J);
  for (std::uint32_t j = 0; j < J; ++j) {
    w.put_string(body.skeleton.names.empty() ? "joint" + std::to_string(j) : body.skeleton.names[j]);
    w.put<std::int32_t>(body.skeleton.parents[j]);
    for (int a = 0; a < 3; ++a) w.put<float>(static_cast<float>(body.skeleton.joints[j][a]));
  }
  w.put<std::uint32_t>(V * J);
  for (double x : body.blend_weights) w.put<float>(static_cast<float>(x));
  w.put<std::uint32_t>(V);
  for (const auto& t : body.uv)
    for (int a = 0; a < 2; ++a) w.put<float>(static_cast<float>(t[a]));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(body.part_sets.size()));
  for (std::size_t k = 0; k < body.part_sets.size(); ++k) {
    w.put_string(body.part_names.empty() ? "part" + std::to_string(k) : body.part_names[k]);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(body.part_sets[k].size()));
    for (int j : body.part_sets[k]) w.put<std::uint32_t>(static_cast<std::uint32_t>(j));
  }
  return w.bytes();
}

inline SkinnedBody decode_body(std::vector<char> bytes, const std::string& origin) {
  ByteReader r(std::move(bytes), origin);
  char magic[4];
  r.get_bytes(magic, 4);
  if (std::memcmp(magic, kBodyMagic, 4) != 0) r.fail("bad magic, not a PNVR body file");
  if (r.get<std::uint32_t>() != kBodyVersion) r.fail("unsupported body version");
  SkinnedBody b;
  const auto V = r.get<std::uint32_t>();
  b.vertices.resize(V);
  for (auto& v : b.vertices)
    for (int a = 0; a < 3; ++a) v[a] = r.get<float>();
  const auto F = r.get<std::uint32_t>();
  b.faces.resize(F);
  for (auto& f : b.faces)
    for (int& i : f) i = static_cast<int>(r.get<std::uint32_t>());
  const auto J = r.get<std::uint32_t>();
  b.skeleton.names.resize(J);
  b.skeleton.parents.resize(J);
  b.skeleton.joints.resize(J);
  for (std::uint32_t j = 0; j < J; ++j) {
    b.skeleton.names[j] = r.get_string();
    b.skeleton.parents[j] = r.get<std::int32_t>();
    for (int a = 0; a < 3; ++a) b.skeleton.joints[j][a] = r.get<float>();
  }
  if (r.get<std::uint32_t>() != V * J) r.fail("blend weight count mismatch");
  b.blend_weights.resize(static_cast<std::size_t>(V) * J);
  for (double& x : b.blend_weights) x = r.get<float>();
  if (r.get<std::uint32_t>() != V) r.fail("uv count mismatch");
  b.uv.resize(V);
  for (auto& t : b.uv)
    for (int a = 0; a < 2; ++a) t[a] = r.get<float>();
  const auto K = r.get<std::uint32_t>();
  b.part_sets.resize(K);
  b.part_names.resize(K);
  for (std::uint32_t k = 0; k < K; ++k) {
    b.part_names[k] = r.get_string();
    const auto n = r.get<std::uint32_t>();
    b.part_sets[k].resize(n);
    for (int& j : b.part_sets[k]) j = static_cast<int>(r.get<std::uint32_t>());
  }
  if (!r.at_end()) r.fail("trailing bytes");
  b.validate();
  return b;
}

// Hand-authored mirror: {"vertices": [[x,y,z]...], "faces": [[a,b,c]...],
// "weights": [[w_0..w_J-1]...], "uv": [[u,v]...],
// "joints": [{"name", "parent", "position"}...], "parts": [{"name", "bones"}...]}
inline SkinnedBody body_from_json(const nlohmann::json& j) {
  SkinnedBody b;
  try {
    for (const auto& v : j.at("vertices")) b.vertices.emplace_back(v.at(0).get<double>(), v.at(1).get<double>(), v.at(2).get<double>());
    for (const auto& f : j.at("faces")) b.faces.push_back({f.at(0).get<int>(), f.at(1).get<int>(), f.at(2).get<int>()});
    for (const auto& jt : j.at("joints")) {
      b.skeleton.names.push_back(jt.value("name", "joint" + std::to_string(b.skeleton.names.size())));
      b.skeleton.parents.push_back(jt.at("parent").get<int>());
      const auto& p = jt.at("position");
      b.skeleton.joints.emplace_back(p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>());
    }
    for (const auto& w : j.at("weights")) {
      if (static_cast<int>(w.size()) != b.joint_count()) throw DataError("weight row length != joint count");
      for (const auto& x : w) b.blend_weights.push_back(x.get<double>());
    }
    for (const auto& t : j.at("uv")) b.uv.emplace_back(t.at(0).get<double>(), t.at(1).get<double>());
    for (const auto& p : j.at("parts")) {
      b.part_names.push_back(p.value("name", "part" + std::to_string(b.part_names.size())));
      b.part_sets.push_back(p.at("bones").get<std::vector<int>>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed body json: ") + e.what());
  }
  b.validate();
  return b;
}

inline nlohmann::json body_to_json(const SkinnedBody& b) {
  nlohmann::json j;
  for (const auto& v : b.vertices) j["vertices"].push_back({v.x(), v.y(), v.z()});
  for (const auto& f : b.faces) j["faces"].push_back({f[0], f[1], f[2]});
  for (int v = 0; v < b.vertex_count(); ++v)
    j["weights"].push_back(std::vector<double>(b.weights_of(v), b.weights_of(v) + b.joint_count()));
  for (const auto& t : b.uv) j["uv"].push_back({t.x(), t.y()});
  for (int k = 0; k < b.joint_count(); ++k) {
    const auto& p = b.skeleton.joints[k];
    j["joints"].push_back({{"name", b.skeleton.names.empty() ? "joint" + std::to_string(k) : b.skeleton.names[k]},
                           {"parent", b.skeleton.parents[k]},
                           {"position", {p.x(), p.y(), p.z()}}});
  }
  for (int k = 0; k < b.part_count(); ++k)
    j["parts"].push_back({{"name", b.part_names.empty() ? "part" + std::to_string(k) : b.part_names[k]},
                          {"bones", b.part_sets[k]}});
  return j;
}

inline void save_body(const SkinnedBody& body, const std::string& path) {
  write_file_bytes(path, encode_body(body));
}

// Reads either format; the binary container is recognised by its magic.
inline SkinnedBody load_body(const std::string& path) {
  auto bytes = read_file_bytes(path);
  if (bytes.size() >= 4 && std::memcmp(bytes.data(), kBodyMagic, 4) == 0) return decode_body(std::move(bytes), path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path + ": neither a PNVR body nor valid JSON (" + e.what() + ")");
  }
  try {
    return body_from_json(j);
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

// Rounds every stored quantity through f32 so an in-memory body matches what
// the binary container reproduces on load.
inline void quantize_body_to_f32(SkinnedBody& b) {
  // Flat loops: GCC 11 at -O3 miscompiles the per-component version and
  // leaves the last vertex unrounded.
  auto q = [](double* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) x[i] = static_cast<double>(static_cast<float>(x[i]));
  };
  q(b.vertices.empty() ? nullptr : b.vertices[0].data(), 3 * b.vertices.size());
  q(b.skeleton.joints.empty() ? nullptr : b.skeleton.joints[0].data(), 3 * b.skeleton.joints.size());
  q(b.blend_weights.data(), b.blend_weights.size());
  q(b.uv.empty() ? nullptr : b.uv[0].data(), 2 * b.uv.size());
}

}  // namespace pnvr
