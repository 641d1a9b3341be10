#pragma once

#include <pnvr/core/binary_io.hpp>
#include <pnvr/geometry/body_io.hpp>
#include <pnvr/network/field_model.hpp>
#include <pnvr/renderer/camera.hpp>
#include <pnvr/synthdata/dataset.hpp>
#include <pnvr/trainer/adam.hpp>
#include <pnvr/trainer/config.hpp>

#include <json.hpp>

#include <cstring>
#include <string>
#include <vector>

namespace pnvr {

inline constexpr char kCheckpointMagic[8] = {'P', 'N', 'V', 'R', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Everything needed to resume training or render without the dataset.
template <typename Real>
struct Checkpoint {
  TrainConfig train;
  FieldModel<Real> model;
  AdamState adam;
  int iteration = 0;
  SkinnedBody body;
  std::vector<Pose> poses;
  std::vector<Camera> cameras;
  std::vector<std::string> roles;
  std::array<double, 3> background{1, 1, 1};
};

inline std::uint64_t config_hash(const TrainConfig& t, const FieldConfig& f) {
  const std::string s = to_json(t).dump() + "|" + to_json(f).dump();
  return fnv1a64(s.data(), s.size());
}

template <typename Real>
std::vector<char> encode_checkpoint(const Checkpoint<Real>& c) {
  ByteWriter w;
  w.put_bytes(kCheckpointMagic, sizeof kCheckpointMagic);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(sizeof(Real));
  nlohmann::json h;
  h["train_config"] = to_json(c.train);
  h["field_config"] = to_json(c.model.config());
  h["config_hash"] = hex64(config_hash(c.train, c.model.config()));
  h["iteration"] = c.iteration;
  h["background"] = c.background;
  for (const auto& p : c.poses) h["poses"].push_back(pose_to_json(p));
  for (std::size_t i = 0; i < c.cameras.size(); ++i) {
    auto cj = camera_to_json(c.cameras[i]);
    cj["role"] = i < c.roles.size() ? c.roles[i] : "eval";
    h["cameras"].push_back(cj);
  }
  w.put_string(h.dump());
  const auto body = encode_body(c.body);
  w.put_array(body);
  std::uint32_t n = 0;
  c.model.for_each_param([&](const std::string&, std::span<const Real>) { ++n; });
  w.put<std::uint32_t>(n);
  c.model.for_each_param([&](const std::string& name, std::span<const Real> s) {
    w.put_string(name);
    w.put_array(std::vector<Real>(s.begin(), s.end()));
  });
  w.put<std::int64_t>(c.adam.step);
  w.put_array(c.adam.m);
  w.put_array(c.adam.v);
  return w.bytes();
}

template <typename Real>
Checkpoint<Real> decode_checkpoint(const std::vector<char>& bytes, const std::string& origin) {
  ByteReader r(bytes, origin);
  char magic[8];
  r.get_bytes(magic, sizeof magic);
  if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) throw DataError(origin + ": not a checkpoint");
  if (const auto v = r.get<std::uint32_t>(); v != kCheckpointVersion)
    throw DataError(origin + ": unsupported checkpoint version " + std::to_string(v));
  if (r.get<std::uint32_t>() != sizeof(Real)) throw DataError(origin + ": checkpoint precision mismatch");
  Checkpoint<Real> c;
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(r.get_string());
    c.train = train_config_from_json(h.at("train_config"));
    c.iteration = h.at("iteration");
    c.background = h.at("background");
    if (h.contains("poses"))
      for (const auto& p : h.at("poses")) c.poses.push_back(pose_from_json(p));
    if (h.contains("cameras"))
      for (const auto& cj : h.at("cameras")) {
        c.cameras.push_back(camera_from_json(cj));
        c.roles.push_back(cj.at("role"));
      }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(origin + ": malformed checkpoint header: " + e.what());
  }
  const FieldConfig fc = field_config_from_json(h.at("field_config"));
  if (h.at("config_hash").get<std::string>() != hex64(config_hash(c.train, fc)))
    throw DataError(origin + ": config hash mismatch");
  c.body = decode_body(r.get_array<char>(), origin + " (embedded body)");
  c.model = FieldModel<Real>(fc);
  const auto n = r.get<std::uint32_t>();
  std::uint32_t seen = 0;
  c.model.for_each_param([&](const std::string& name, std::span<Real> s) {
    if (seen++ >= n) throw DataError(origin + ": checkpoint has too few parameter arrays");
    const std::string stored = r.get_string();
    if (stored != name) throw DataError(origin + ": expected parameter '" + name + "', found '" + stored + "'");
    const auto values = r.get_array<Real>();
    if (values.size() != s.size()) throw DataError(origin + ": parameter '" + name + "' has the wrong size");
    std::copy(values.begin(), values.end(), s.begin());
  });
  if (seen != n) throw DataError(origin + ": checkpoint has extra parameter arrays");
  c.adam.step = r.get<std::int64_t>();
  c.adam.m = r.get_array<double>();
  c.adam.v = r.get_array<double>();
  if (!r.at_end()) throw DataError(origin + ": trailing bytes in checkpoint");
  return c;
}

template <typename Real>
void save_checkpoint(const Checkpoint<Real>& c, const std::string& path) {
  write_file_bytes(path, encode_checkpoint(c));
}

template <typename Real>
Checkpoint<Real> load_checkpoint(const std::string& path) {
  return decode_checkpoint<Real>(read_file_bytes(path), path);
}

}  // namespace pnvr
