#pragma once

#include <pnvr/core/binary_io.hpp>
#include <pnvr/core/image.hpp>
#include <pnvr/geometry/body_io.hpp>
#include <pnvr/renderer/camera.hpp>
#include <pnvr/synthdata/gt_render.hpp>
#include <pnvr/synthdata/toy_body.hpp>

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace pnvr {

struct FrameData {
  Pose pose;
  std::vector<Image> images;  // one per camera
  std::vector<Image> masks;
};

struct Dataset {
  SkinnedBody body;
  std::vector<Camera> cameras;
  std::vector<std::string> roles;  // "train" or "eval" per camera
  std::vector<FrameData> frames;
  std::array<double, 3> background{1.0, 1.0, 1.0};

  int frame_count() const { return static_cast<int>(frames.size()); }
  std::vector<int> cameras_with_role(const std::string& role) const {
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(roles.size()); ++i)
      if (roles[i] == role) out.push_back(i);
    return out;
  }
  int camera_index(const std::string& name) const {
    for (int i = 0; i < static_cast<int>(cameras.size()); ++i)
      if (cameras[i].name == name) return i;
    throw DataError("dataset has no camera '" + name + "'");
  }
  std::vector<Pose> poses() const {
    std::vector<Pose> p;
    for (const auto& f : frames) p.push_back(f.pose);
    return p;
  }
};

struct SynthOptions {
  int frames = 20;
  int width = 128;
  int height = 128;
  double fov_y = 0.7;  // radians
  double distance = 3.4;
  double train_azimuth = 0.0;  // degrees
  std::vector<double> eval_azimuths{-35.0, 35.0, 80.0};
  std::vector<double> eval_elevations{10.0, -5.0, 20.0};
  MotionOptions motion;
  ShadingSpec shading;
  int threads = 1;
};

// Camera on a circle around the body's vertical axis; azimuth 0 looks at the front (+z).
inline Camera orbit_camera(const std::string& name, double azimuth_deg, double elevation_deg, double distance,
                           const Vec3d& target, double fov_y, int width, int height) {
  const double az = azimuth_deg * std::numbers::pi / 180.0, el = elevation_deg * std::numbers::pi / 180.0;
  const Vec3d eye = target + distance * Vec3d(std::sin(az) * std::cos(el), std::sin(el), std::cos(az) * std::cos(el));
  return Camera::look_at(name, eye, target, Vec3d::UnitY(), fov_y, width, height);
}

inline Dataset synthesize_dataset(const ToyBodySpec& spec, const SynthOptions& opt) {
  if (opt.frames < 1) throw ConfigError("need at least one frame");
  if (opt.eval_azimuths.size() != opt.eval_elevations.size()) throw ConfigError("eval camera lists differ in length");
  ToyMesh mesh = build_toy_mesh(spec);
  // The stored body is f32; the ground truth uses exactly the same numbers.
  quantize_body_to_f32(mesh.body);
  Dataset d;
  d.body = mesh.body;
  d.background = opt.shading.background;
  const Vec3d target = 0.5 * (mesh.body.bounds().lo + mesh.body.bounds().hi);
  d.cameras.push_back(orbit_camera("train_0", opt.train_azimuth, 0.0, opt.distance, target, opt.fov_y, opt.width, opt.height));
  d.roles.push_back("train");
  for (std::size_t i = 0; i < opt.eval_azimuths.size(); ++i) {
    d.cameras.push_back(orbit_camera("eval_" + std::to_string(i), opt.eval_azimuths[i], opt.eval_elevations[i],
                                     opt.distance, target, opt.fov_y, opt.width, opt.height));
    d.roles.push_back("eval");
  }
  const auto poses = animate(spec, opt.frames, opt.motion);
  for (int f = 0; f < opt.frames; ++f) {
    FrameData fd;
    fd.pose = poses[f];
    const double t_norm = opt.frames > 1 ? double(f) / (opt.frames - 1) : 0.0;
    for (const auto& cam : d.cameras) {
      auto gt = render_ground_truth(spec, mesh, fd.pose, t_norm, cam, opt.shading, opt.threads);
      quantize_u8(gt.color);
      fd.images.push_back(std::move(gt.color));
      fd.masks.push_back(std::move(gt.mask));
    }
    d.frames.push_back(std::move(fd));
  }
  return d;
}

inline nlohmann::json pose_to_json(const Pose& p) {
  nlohmann::json j;
  j["frame"] = p.frame_index;
  j["translation"] = {p.translation.x(), p.translation.y(), p.translation.z()};
  for (const auto& r : p.rotations) j["rotations"].push_back({r.x(), r.y(), r.z()});
  return j;
}

inline Pose pose_from_json(const nlohmann::json& j) {
  Pose p;
  try {
    p.frame_index = j.at("frame");
    const auto t = j.at("translation").get<std::vector<double>>();
    if (t.size() != 3) throw DataError("pose translation must have 3 values");
    p.translation = Vec3d(t[0], t[1], t[2]);
    for (const auto& r : j.at("rotations")) {
      const auto v = r.get<std::vector<double>>();
      if (v.size() != 3) throw DataError("pose rotation must have 3 values");
      p.rotations.emplace_back(v[0], v[1], v[2]);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed pose: ") + e.what());
  }
  return p;
}

namespace detail {

inline std::string frame_dir(const std::filesystem::path& root, int f) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d", f);
  return (root / "frames" / buf).string();
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt JSON in " + path + ": " + e.what());
  }
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path);
}

}  // namespace detail

inline std::uint64_t body_hash(const SkinnedBody& body) {
  const auto bytes = encode_body(body);
  return fnv1a64(bytes.data(), bytes.size());
}

// Layout: body.pnvr, cameras.json, frames/<t>/{pose.json, <cam>.png, <cam>.mask.png}.
inline void write_dataset(const Dataset& d, const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  std::error_code ec;
  fs::create_directories(root / "frames", ec);
  if (ec) throw IoError("cannot create " + (root / "frames").string() + ": " + ec.message());
  const auto body_bytes = encode_body(d.body);
  write_file_bytes((root / "body.pnvr").string(), body_bytes);
  nlohmann::json meta;
  meta["body_file"] = "body.pnvr";
  meta["body_hash"] = hex64(fnv1a64(body_bytes.data(), body_bytes.size()));
  meta["frame_count"] = d.frame_count();
  meta["background"] = d.background;
  for (std::size_t i = 0; i < d.cameras.size(); ++i) {
    auto c = camera_to_json(d.cameras[i]);
    c["role"] = d.roles[i];
    meta["cameras"].push_back(c);
  }
  detail::write_text_file((root / "cameras.json").string(), meta.dump(2) + "\n");
  for (int f = 0; f < d.frame_count(); ++f) {
    const std::string fd = detail::frame_dir(root, f);
    fs::create_directories(fd, ec);
    if (ec) throw IoError("cannot create " + fd + ": " + ec.message());
    detail::write_text_file(fd + "/pose.json", pose_to_json(d.frames[f].pose).dump(2) + "\n");
    for (std::size_t c = 0; c < d.cameras.size(); ++c) {
      write_png(fd + "/" + d.cameras[c].name + ".png", d.frames[f].images[c]);
      write_png(fd + "/" + d.cameras[c].name + ".mask.png", d.frames[f].masks[c]);
    }
  }
}

inline Dataset read_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  if (!fs::is_directory(root)) throw IoError("dataset directory not found: " + dir);
  const auto meta = detail::read_json_file((root / "cameras.json").string());
  Dataset d;
  try {
    const std::string body_path = (root / meta.at("body_file").get<std::string>()).string();
    const auto bytes = read_file_bytes(body_path);
    const std::string expect = meta.at("body_hash");
    if (hex64(fnv1a64(bytes.data(), bytes.size())) != expect)
      throw DataError("body hash mismatch: " + body_path + " does not match cameras.json");
    d.body = decode_body(bytes, body_path);
    d.background = meta.at("background");
    for (const auto& c : meta.at("cameras")) {
      d.cameras.push_back(camera_from_json(c));
      d.roles.push_back(c.at("role"));
    }
    const int frames = meta.at("frame_count");
    for (int f = 0; f < frames; ++f) {
      const std::string fd = detail::frame_dir(root, f);
      FrameData fr;
      fr.pose = pose_from_json(detail::read_json_file(fd + "/pose.json"));
      if (static_cast<int>(fr.pose.rotations.size()) != d.body.joint_count())
        throw DataError("pose in " + fd + " does not match the body's joint count");
      for (const auto& cam : d.cameras) {
        auto img = read_png(fd + "/" + cam.name + ".png");
        auto mask = read_png(fd + "/" + cam.name + ".mask.png");
        if (img.channels != 3 || img.width != cam.width || img.height != cam.height)
          throw DataError("image " + fd + "/" + cam.name + ".png has the wrong shape");
        if (mask.channels != 1 || mask.width != cam.width || mask.height != cam.height)
          throw DataError("mask " + fd + "/" + cam.name + ".mask.png has the wrong shape");
        for (auto& v : mask.data) v = v > 0.5f ? 1.0f : 0.0f;
        fr.images.push_back(std::move(img));
        fr.masks.push_back(std::move(mask));
      }
      d.frames.push_back(std::move(fr));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed " + (root / "cameras.json").string() + ": " + e.what());
  }
  if (d.cameras_with_role("train").empty()) throw DataError("dataset has no training camera");
  return d;
}

}  // namespace pnvr
