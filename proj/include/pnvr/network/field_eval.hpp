#pragma once

#include <pnvr/core/parallel.hpp>
#include <pnvr/network/field_model.hpp>

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

namespace pnvr {

template <typename Real>
Real softplus(Real x) {
  return x > Real(20) ? x : std::log1p(std::exp(x));
}

template <typename Real>
Real sigmoid(Real x) {
  return x >= Real(0) ? Real(1) / (Real(1) + std::exp(-x)) : std::exp(x) / (Real(1) + std::exp(x));
}

// Squashes a raw offset into a ball of radius r: out = raw * g(|raw|) with
// g(n) = r tanh(n / r) / n, so |out| < r and out ~ raw for small offsets.
template <typename Real>
void clamp_residual(const Real* raw, double r, Real* out) {
  const double n = std::sqrt(double(raw[0]) * raw[0] + double(raw[1]) * raw[1] + double(raw[2]) * raw[2]);
  const double g = n < 1e-12 * r ? 1.0 : r * std::tanh(n / r) / n;
  for (int i = 0; i < 3; ++i) out[i] = static_cast<Real>(raw[i] * g);
}

// dL/draw given dL/dout. The Jacobian is g I + (g'(n)/n) raw raw^T.
template <typename Real>
void clamp_residual_backward(const Real* raw, double r, const Real* dout, Real* draw) {
  const double x[3] = {double(raw[0]), double(raw[1]), double(raw[2])};
  const double n = std::sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]);
  double g, gp_over_n;
  if (n < 1e-3 * r) {
    const double y2 = (n / r) * (n / r);
    g = 1.0 - y2 / 3.0 + 2.0 * y2 * y2 / 15.0;
    gp_over_n = -2.0 / (3.0 * r * r) + 8.0 * n * n / (15.0 * r * r * r * r);
  } else {
    const double th = std::tanh(n / r);
    g = r * th / n;
    gp_over_n = ((1.0 - th * th) - g) / (n * n);
  }
  const double dot = x[0] * dout[0] + x[1] * dout[1] + x[2] * dout[2];
  for (int i = 0; i < 3; ++i) draw[i] = static_cast<Real>(g * dout[i] + gp_over_n * x[i] * dot);
}

// A batch of residual-network queries for one frame. Coordinates are already
// normalized to [0,1] per axis.
template <typename Real>
struct ResidualBatch {
  int frame = 0;
  int count = 0;
  std::vector<Real> coords;  // count x coord_dims
  std::vector<Real> extras;  // count x extra_dims (code or pose), empty otherwise
  std::vector<Real> input;   // count x mlp input
  MlpCache<Real> cache;
  std::vector<Real> offset;  // count x 3, clamped
};

template <typename Real>
std::span<const Real> residual_extras_for(const FieldModel<Real>& model, int frame, std::span<const double> pose,
                                          bool allow_unseen, std::vector<Real>& scratch) {
  const auto& cfg = model.config();
  scratch.clear();
  if (cfg.residual_input == ResidualInput::xyz_code) {
    scratch = model.code_for(frame, allow_unseen);
  } else if (cfg.residual_input == ResidualInput::xyz_pose) {
    if (static_cast<int>(pose.size()) != cfg.pose_dim) throw DimensionError("pose vector length mismatch");
    for (double p : pose) scratch.push_back(static_cast<Real>(p));
  }
  return scratch;
}

// Fills b.input from b.coords / b.extras and runs the residual MLP.
template <typename Real>
void residual_forward(const FieldModel<Real>& model, ResidualBatch<Real>& b, int threads = 1) {
  const auto& cfg = model.config();
  const int D = cfg.residual_coord_dims();
  const int E = cfg.residual_encoded_dims();
  const int X = cfg.residual_extra_dims();
  const int in = E + X;
  b.input.assign(static_cast<std::size_t>(b.count) * in, Real(0));
  parallel_for(b.count, threads, [&](std::size_t i0, std::size_t i1) {
    for (std::size_t i = i0; i < i1; ++i) {
      std::span<const Real> c(b.coords.data() + i * D, D);
      std::span<Real> out(b.input.data() + i * in, E);
      if (cfg.residual_uses_hash()) model.residual().grid.encode(c, out);
      else freq_encode(c, cfg.residual_freq, out);
      for (int e = 0; e < X; ++e) b.input[i * in + E + e] = b.extras[i * X + e];
    }
  });
  mlp_forward(model.residual().mlp, std::span<const Real>(b.input), b.count, b.cache, threads);
  b.offset.resize(static_cast<std::size_t>(b.count) * 3);
  const auto raw = b.cache.output();
  for (int i = 0; i < b.count; ++i) clamp_residual(raw.data() + 3 * i, cfg.max_residual, b.offset.data() + 3 * i);
}

// Backpropagates dL/d(offset) for the listed rows (all rows when empty).
template <typename Real>
void residual_backward(const FieldModel<Real>& model, const ResidualBatch<Real>& b, std::span<const Real> doffset,
                       FieldModel<Real>& grads, std::span<const int> rows = {}) {
  const auto& cfg = model.config();
  const int n = rows.empty() ? b.count : static_cast<int>(rows.size());
  auto row = [&](int j) { return rows.empty() ? j : rows[j]; };
  if (n == 0) return;
  const auto raw = b.cache.output();
  std::vector<Real> draw(static_cast<std::size_t>(n) * 3);
  for (int j = 0; j < n; ++j)
    clamp_residual_backward(raw.data() + 3 * row(j), cfg.max_residual, doffset.data() + 3 * j, draw.data() + 3 * j);
  const int D = cfg.residual_coord_dims();
  const int E = cfg.residual_encoded_dims();
  const int X = cfg.residual_extra_dims();
  const int in = E + X;
  const bool need_input_grad = cfg.residual_uses_hash() || cfg.residual_input == ResidualInput::xyz_code;
  std::vector<Real> dinput(need_input_grad ? static_cast<std::size_t>(n) * in : 0);
  mlp_backward(model.residual().mlp, b.cache, std::span<const Real>(draw), grads.residual().mlp,
               std::span<Real>(dinput), rows);
  if (!need_input_grad) return;
  for (int j = 0; j < n; ++j) {
    const std::size_t i = row(j);
    if (cfg.residual_uses_hash())
      model.residual().grid.encode_backward(std::span<const Real>(b.coords.data() + i * D, D),
                                            std::span<const Real>(dinput.data() + std::size_t(j) * in, E),
                                            std::span<Real>(grads.residual().grid.table()), {});
    if (cfg.residual_input == ResidualInput::xyz_code && model.has_frame(b.frame)) {
      Real* g = grads.residual().codes.data() + static_cast<std::size_t>(b.frame) * X;
      for (int e = 0; e < X; ++e) g[e] += dinput[std::size_t(j) * in + E + e];
    }
  }
}

// Normalized residual-network coordinates for one surface sample.
template <typename Real>
void residual_coords(const FieldConfig& cfg, const Vec2d& uv, const Vec3d& x_unposed, double t_norm, Real* out) {
  auto norm = [&](int a) {
    return static_cast<Real>((x_unposed[a] - cfg.body_box_min[a]) / (cfg.body_box_max[a] - cfg.body_box_min[a]));
  };
  switch (cfg.residual_input) {
    case ResidualInput::uvt:
      out[0] = static_cast<Real>(uv.x());
      out[1] = static_cast<Real>(uv.y());
      out[2] = static_cast<Real>(t_norm);
      break;
    case ResidualInput::xyzt_hash:
    case ResidualInput::xyzt_freq:
      for (int a = 0; a < 3; ++a) out[a] = norm(a);
      out[3] = static_cast<Real>(t_norm);
      break;
    case ResidualInput::xyz_code:
    case ResidualInput::xyz_pose:
      for (int a = 0; a < 3; ++a) out[a] = norm(a);
      break;
  }
}

struct FieldEvalOptions {
  // When false the residual is skipped and dx = 0 (warmup).
  bool residual_enabled = true;
  // Unseen frames fall back to mean latents/codes instead of failing.
  bool allow_unseen_frame = false;
  int threads = 1;
};

// A (sample, part) pair that survived culling.
struct PointPair {
  int sample = 0;
  int part = 0;
  int face = -1;
  double distance = 0.0;
  Vec2d uv = Vec2d::Zero();
  Vec3d x_unposed = Vec3d::Zero();
};

template <typename Real>
struct PartBatch {
  std::vector<int> pairs;        // indices into FieldBatch::pairs, ascending
  std::vector<Real> encoded;     // pairs x L*F
  MlpCache<Real> density;
  std::vector<Real> sigma;       // per pair of this part
  std::vector<int> winners;      // local columns that won their sample
  std::vector<Real> color_input; // winners x color input
  MlpCache<Real> color;
};

// Batched evaluation of the field for many world points of one frame. Keeps
// everything backward() needs.
template <typename Real>
struct FieldBatch {
  int frame = 0;
  double t_norm = 0.0;
  std::vector<Vec3d> x;
  std::vector<Vec3d> dir;

  std::vector<PointPair> pairs;
  std::vector<Real> x_can;  // pairs x 3
  bool residual_used = false;
  ResidualBatch<Real> residual;
  std::vector<PartBatch<Real>> parts;
  std::vector<int> pair_local;  // pair -> column within its part batch

  std::vector<Real> sigma;  // per sample
  std::vector<Real> rgb;    // per sample x 3
  std::vector<int> winner;  // winning pair per sample, -1 if empty space
  int singular_pairs = 0;

  int size() const { return static_cast<int>(x.size()); }
};

// Surface lookup and inverse skinning for one world point against part k.
// Returns nothing when the part is culled or its blend is near-singular.
inline std::optional<PointPair> canonical_pair(const SkinnedBody& body, const FrameGeometry& geom, int k,
                                               const Vec3d& x, double cull_radius, bool* singular = nullptr) {
  const double r2 = cull_radius * cull_radius;
  const auto& tree = geom.bvh.parts[k];
  if (tree.empty() || geom.part_bounds[k].distance2(x) > r2) return std::nullopt;
  const auto hit = tree.nearest(x, r2);
  if (!hit.found()) return std::nullopt;
  std::vector<double> w;
  Vec2d uv;
  interpolate_attributes(body, hit.face, hit.bary, w, uv);
  const auto xu = try_inverse_blend(blend_transforms(w.data(), geom.transforms), x);
  if (!xu) {
    if (singular) *singular = true;
    return std::nullopt;
  }
  PointPair p;
  p.part = k;
  p.face = hit.face;
  p.distance = std::sqrt(hit.dist2);
  p.uv = uv;
  p.x_unposed = *xu;
  return p;
}

template <typename Real>
void encode_direction(const FieldConfig& cfg, const Vec3d& d, Real* out) {
  const Real dv[3] = {static_cast<Real>(d.x()), static_cast<Real>(d.y()), static_cast<Real>(d.z())};
  freq_encode(std::span<const Real>(dv, 3), cfg.dir_encoding, std::span<Real>(out, cfg.dir_encoding.output_dim()));
}

// Forward pass. b.x / b.dir must be filled; b.frame selects latents.
template <typename Real>
void evaluate_field(const FieldModel<Real>& model, const SkinnedBody& body, const FrameGeometry& geom,
                    FieldBatch<Real>& b, const FieldEvalOptions& opt) {
  const auto& cfg = model.config();
  const int K = model.part_count();
  const int S = b.size();
  if (static_cast<int>(b.dir.size()) != S) throw DimensionError("direction count != point count");
  if (geom.bvh.part_count() != K) throw ConfigError("frame geometry part count != model part count");
  b.t_norm = geom.t_norm;

  // 1. Culling, nearest surface and inverse skinning.
  std::vector<std::vector<PointPair>> per_sample(S);
  std::vector<char> singular(S, 0);
  parallel_for(S, opt.threads, [&](std::size_t s0, std::size_t s1) {
    for (std::size_t s = s0; s < s1; ++s) {
      if (!geom.render_bounds.contains(b.x[s])) continue;
      for (int k = 0; k < K; ++k) {
        bool sing = false;
        if (auto p = canonical_pair(body, geom, k, b.x[s], cfg.cull_radius, &sing)) {
          p->sample = static_cast<int>(s);
          per_sample[s].push_back(*p);
        }
        if (sing) singular[s] = 1;
      }
    }
  });
  b.pairs.clear();
  b.singular_pairs = 0;
  for (int s = 0; s < S; ++s) {
    b.pairs.insert(b.pairs.end(), per_sample[s].begin(), per_sample[s].end());
    b.singular_pairs += singular[s];
  }
  const int P = static_cast<int>(b.pairs.size());

  // 2. Residual deformation.
  b.x_can.resize(static_cast<std::size_t>(P) * 3);
  for (int p = 0; p < P; ++p)
    for (int a = 0; a < 3; ++a) b.x_can[3 * p + a] = static_cast<Real>(b.pairs[p].x_unposed[a]);
  b.residual_used = opt.residual_enabled && P > 0;
  if (b.residual_used) {
    auto& r = b.residual;
    const int D = cfg.residual_coord_dims();
    const int X = cfg.residual_extra_dims();
    r.frame = b.frame;
    r.count = P;
    r.coords.resize(static_cast<std::size_t>(P) * D);
    std::vector<Real> extra_row;
    residual_extras_for(model, b.frame, geom.pose_vector, opt.allow_unseen_frame, extra_row);
    r.extras.resize(static_cast<std::size_t>(P) * X);
    for (int p = 0; p < P; ++p) {
      residual_coords(cfg, b.pairs[p].uv, b.pairs[p].x_unposed, b.t_norm, r.coords.data() + std::size_t(p) * D);
      std::copy(extra_row.begin(), extra_row.end(), r.extras.begin() + std::size_t(p) * X);
    }
    residual_forward(model, r, opt.threads);
    for (std::size_t i = 0; i < b.x_can.size(); ++i) b.x_can[i] += r.offset[i];
  }

  // 3. Density per part.
  b.parts.assign(K, PartBatch<Real>{});
  b.pair_local.resize(P);
  for (int p = 0; p < P; ++p) {
    auto& pb = b.parts[b.pairs[p].part];
    b.pair_local[p] = static_cast<int>(pb.pairs.size());
    pb.pairs.push_back(p);
  }
  const Real scale = static_cast<Real>(cfg.density_scale);
  for (int k = 0; k < K; ++k) {
    auto& pb = b.parts[k];
    const int n = static_cast<int>(pb.pairs.size());
    if (n == 0) continue;
    const auto& part = model.part(k);
    const int E = part.grid.output_dim();
    pb.encoded.resize(static_cast<std::size_t>(n) * E);
    parallel_for(n, opt.threads, [&](std::size_t i0, std::size_t i1) {
      for (std::size_t i = i0; i < i1; ++i)
        part.grid.encode(std::span<const Real>(b.x_can.data() + 3 * std::size_t(pb.pairs[i]), 3),
                         std::span<Real>(pb.encoded.data() + i * E, E));
    });
    mlp_forward(part.density, std::span<const Real>(pb.encoded), n, pb.density, opt.threads);
    const auto out = pb.density.output();
    const int W = part.density.output_dim();
    pb.sigma.resize(n);
    for (int i = 0; i < n; ++i) pb.sigma[i] = scale * softplus(out[std::size_t(i) * W]);
  }

  // 4. Winner per sample: largest density, ties to the lowest part.
  b.winner.assign(S, -1);
  b.sigma.assign(S, Real(0));
  for (int p = 0; p < P; ++p) {
    const int s = b.pairs[p].sample;
    const Real sg = b.parts[b.pairs[p].part].sigma[b.pair_local[p]];
    if (b.winner[s] < 0 || sg > b.sigma[s]) {
      b.winner[s] = p;
      b.sigma[s] = sg;
    }
  }
  for (int s = 0; s < S; ++s)
    if (b.winner[s] >= 0) b.parts[b.pairs[b.winner[s]].part].winners.push_back(b.pair_local[b.winner[s]]);
  for (auto& pb : b.parts) std::sort(pb.winners.begin(), pb.winners.end());

  // 5. Color for winners only.
  b.rgb.assign(static_cast<std::size_t>(S) * 3, Real(0));
  const int Z = cfg.z_dim;
  const int Dd = cfg.dir_encoding.output_dim();
  const int C = cfg.color_input_dim();
  const auto latent = model.latent_for(b.frame, opt.allow_unseen_frame);
  for (int k = 0; k < K; ++k) {
    auto& pb = b.parts[k];
    const int n = static_cast<int>(pb.winners.size());
    if (n == 0) continue;
    const auto& part = model.part(k);
    const int W = part.density.output_dim();
    const auto dens = pb.density.output();
    pb.color_input.resize(static_cast<std::size_t>(n) * C);
    for (int j = 0; j < n; ++j) {
      const int col = pb.winners[j];
      Real* ci = pb.color_input.data() + std::size_t(j) * C;
      std::copy_n(dens.data() + std::size_t(col) * W + 1, Z, ci);
      encode_direction(cfg, b.dir[b.pairs[pb.pairs[col]].sample], ci + Z);
      std::copy(latent.begin(), latent.end(), ci + Z + Dd);
    }
    mlp_forward(part.color, std::span<const Real>(pb.color_input), n, pb.color, opt.threads);
    const auto out = pb.color.output();
    for (int j = 0; j < n; ++j) {
      const int s = b.pairs[pb.pairs[pb.winners[j]]].sample;
      for (int c = 0; c < 3; ++c) b.rgb[3 * std::size_t(s) + c] = sigmoid(out[3 * std::size_t(j) + c]);
    }
  }
}

// Reverse pass: accumulates dL/d(parameters) into grads given dL/dsigma and
// dL/drgb per sample. Accumulation runs in a fixed order so the result does
// not depend on the thread count.
template <typename Real>
void backward_field(const FieldModel<Real>& model, const FieldBatch<Real>& b, std::span<const Real> dsigma,
                    std::span<const Real> drgb, FieldModel<Real>& grads) {
  const auto& cfg = model.config();
  const int K = model.part_count();
  const int P = static_cast<int>(b.pairs.size());
  const int Z = cfg.z_dim;
  const int Dd = cfg.dir_encoding.output_dim();
  const int C = cfg.color_input_dim();
  const Real scale = static_cast<Real>(cfg.density_scale);
  std::vector<Real> dx_can(static_cast<std::size_t>(P) * 3, Real(0));
  const bool latent_trainable = model.has_frame(b.frame) && cfg.latent_dim > 0;

  for (int k = 0; k < K; ++k) {
    const auto& pb = b.parts[k];
    const int n = static_cast<int>(pb.winners.size());
    if (n == 0) continue;
    const auto& part = model.part(k);
    auto& gpart = grads.part(k);
    const int W = part.density.output_dim();

    // Color head.
    const auto cout = pb.color.output();
    std::vector<Real> dcraw(static_cast<std::size_t>(n) * 3);
    for (int j = 0; j < n; ++j) {
      const int s = b.pairs[pb.pairs[pb.winners[j]]].sample;
      for (int c = 0; c < 3; ++c) {
        const Real y = sigmoid(cout[3 * std::size_t(j) + c]);
        dcraw[3 * std::size_t(j) + c] = drgb[3 * std::size_t(s) + c] * y * (Real(1) - y);
      }
    }
    std::vector<Real> dcin(static_cast<std::size_t>(n) * C);
    mlp_backward(part.color, pb.color, std::span<const Real>(dcraw), gpart.color, std::span<Real>(dcin));
    if (latent_trainable) {
      Real* gl = grads.latents().data() + static_cast<std::size_t>(b.frame) * cfg.latent_dim;
      for (int j = 0; j < n; ++j)
        for (int i = 0; i < cfg.latent_dim; ++i) gl[i] += dcin[std::size_t(j) * C + Z + Dd + i];
    }

    // Density head over the winning columns.
    const auto dout = pb.density.output();
    std::vector<Real> ddens(static_cast<std::size_t>(n) * W);
    for (int j = 0; j < n; ++j) {
      const int col = pb.winners[j];
      const int s = b.pairs[pb.pairs[col]].sample;
      ddens[std::size_t(j) * W] = dsigma[s] * scale * sigmoid(dout[std::size_t(col) * W]);
      for (int z = 0; z < Z; ++z) ddens[std::size_t(j) * W + 1 + z] = dcin[std::size_t(j) * C + z];
    }
    const int E = part.grid.output_dim();
    std::vector<Real> denc(static_cast<std::size_t>(n) * E);
    mlp_backward(part.density, pb.density, std::span<const Real>(ddens), gpart.density, std::span<Real>(denc),
                 std::span<const int>(pb.winners));
    for (int j = 0; j < n; ++j) {
      const int p = pb.pairs[pb.winners[j]];
      std::span<Real> dx = b.residual_used ? std::span<Real>(dx_can.data() + 3 * std::size_t(p), 3) : std::span<Real>();
      part.grid.encode_backward(std::span<const Real>(b.x_can.data() + 3 * std::size_t(p), 3),
                                std::span<const Real>(denc.data() + std::size_t(j) * E, E),
                                std::span<Real>(gpart.grid.table()), dx);
    }
  }

  if (!b.residual_used) return;
  // Only winning pairs carry gradient into the residual network.
  std::vector<int> rows;
  std::vector<Real> doff;
  for (int s = 0; s < b.size(); ++s) {
    const int p = b.winner[s];
    if (p < 0) continue;
    rows.push_back(p);
    doff.insert(doff.end(), dx_can.begin() + 3 * p, dx_can.begin() + 3 * p + 3);
  }
  // rows must be ascending for a stable accumulation order; winners are
  // unique per sample and pairs are sample-major, so they already are.
  residual_backward(model, b.residual, std::span<const Real>(doff), grads, std::span<const int>(rows));
}

// Per-part detail of a single point query.
struct PartTrace {
  int part = -1;
  double surface_distance = 0.0;
  Vec2d uv = Vec2d::Zero();
  Vec3d x_unposed = Vec3d::Zero();
  Vec3d offset = Vec3d::Zero();
  Vec3d x_can = Vec3d::Zero();
  double sigma = 0.0;
};

struct PointQueryTrace {
  std::vector<PartTrace> parts;  // non-culled parts, ascending index
  int winner = -1;               // part index, -1 when every part was culled
  double sigma = 0.0;
  Vec3d rgb = Vec3d::Zero();
};

// Residual offset at normalized coordinates for a frame.
template <typename Real>
Vec3d residual_deformation(const FieldModel<Real>& model, std::span<const Real> coords, int frame,
                           std::span<const double> pose = {}, bool allow_unseen = true) {
  const auto& cfg = model.config();
  if (static_cast<int>(coords.size()) != cfg.residual_coord_dims()) throw DimensionError("residual coordinate size");
  ResidualBatch<Real> b;
  b.frame = frame;
  b.count = 1;
  b.coords.assign(coords.begin(), coords.end());
  residual_extras_for(model, frame, pose, allow_unseen, b.extras);
  residual_forward(model, b);
  return Vec3d(b.offset[0], b.offset[1], b.offset[2]);
}

template <typename Real>
Vec3d residual_deformation(const FieldModel<Real>& model, double u, double v, double t_norm, int frame = 0) {
  const Real c[3] = {static_cast<Real>(u), static_cast<Real>(v), static_cast<Real>(t_norm)};
  return residual_deformation(model, std::span<const Real>(c, 3), frame);
}

template <typename Real>
struct DensitySample {
  Real sigma = 0;
  std::vector<Real> z;
};

template <typename Real>
DensitySample<Real> density_query(const FieldModel<Real>& model, int k, const Vec3d& x_can) {
  if (!x_can.allFinite()) throw NumericError("non-finite canonical point");
  const auto& part = model.part(k);
  const Real xc[3] = {static_cast<Real>(x_can.x()), static_cast<Real>(x_can.y()), static_cast<Real>(x_can.z())};
  std::vector<Real> enc(part.grid.output_dim());
  part.grid.encode(std::span<const Real>(xc, 3), std::span<Real>(enc));
  const auto cache = mlp_forward(part.density, std::span<const Real>(enc));
  DensitySample<Real> out;
  out.sigma = static_cast<Real>(model.config().density_scale) * softplus(cache.output()[0]);
  out.z.assign(cache.output().begin() + 1, cache.output().end());
  return out;
}

template <typename Real>
Vec3d color_query(const FieldModel<Real>& model, int k, std::span<const Real> z, const Vec3d& d, int frame,
                  bool allow_unseen = false) {
  const auto& cfg = model.config();
  if (std::abs(d.norm() - 1.0) > 1e-6) throw DimensionError("view direction must be unit length");
  if (static_cast<int>(z.size()) != cfg.z_dim) throw DimensionError("feature vector size mismatch");
  std::vector<Real> in(cfg.color_input_dim());
  std::copy(z.begin(), z.end(), in.begin());
  encode_direction(cfg, d, in.data() + cfg.z_dim);
  const auto latent = model.latent_for(frame, allow_unseen);
  std::copy(latent.begin(), latent.end(), in.begin() + cfg.z_dim + cfg.dir_encoding.output_dim());
  const auto cache = mlp_forward(model.part(k).color, std::span<const Real>(in));
  const auto o = cache.output();
  return Vec3d(sigmoid(o[0]), sigmoid(o[1]), sigmoid(o[2]));
}

// Full single-point query through the batched path, with per-part detail.
template <typename Real>
PointQueryTrace field_query(const FieldModel<Real>& model, const SkinnedBody& body, const FrameGeometry& geom,
                            const Vec3d& x, const Vec3d& d, const FieldEvalOptions& opt = {}) {
  FieldBatch<Real> b;
  b.frame = geom.frame;
  b.x = {x};
  b.dir = {d};
  evaluate_field(model, body, geom, b, opt);
  PointQueryTrace t;
  for (int p = 0; p < static_cast<int>(b.pairs.size()); ++p) {
    const auto& pp = b.pairs[p];
    PartTrace pt;
    pt.part = pp.part;
    pt.surface_distance = pp.distance;
    pt.uv = pp.uv;
    pt.x_unposed = pp.x_unposed;
    pt.x_can = Vec3d(b.x_can[3 * p], b.x_can[3 * p + 1], b.x_can[3 * p + 2]);
    if (b.residual_used) pt.offset = Vec3d(b.residual.offset[3 * p], b.residual.offset[3 * p + 1], b.residual.offset[3 * p + 2]);
    pt.sigma = b.parts[pp.part].sigma[b.pair_local[p]];
    t.parts.push_back(pt);
  }
  if (b.winner[0] >= 0) {
    t.winner = b.pairs[b.winner[0]].part;
    t.sigma = b.sigma[0];
    t.rgb = Vec3d(b.rgb[0], b.rgb[1], b.rgb[2]);
  }
  return t;
}

// Canonical points of x for every non-culled part (the pairs of field_query).
template <typename Real>
std::vector<PartTrace> canonicalize(const FieldModel<Real>& model, const SkinnedBody& body, const FrameGeometry& geom,
                                    const Vec3d& x, const FieldEvalOptions& opt = {}) {
  return field_query(model, body, geom, x, Vec3d::UnitZ(), opt).parts;
}

}  // namespace pnvr
