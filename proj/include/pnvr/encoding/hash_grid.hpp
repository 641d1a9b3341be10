#pragma once

#include <pnvr/core/error.hpp>
#include <pnvr/core/rng.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace pnvr {

inline constexpr int kMaxGridDims = 4;

struct HashGridConfig {
  int dims = 3;
  int levels = 8;
  std::uint32_t table_size = 1u << 15;
  int feature_dim = 2;
  int base_resolution = 16;
  double growth = 1.5;
  // Input domain; coordinates are normalized to [0,1]^D and clamped.
  std::array<double, kMaxGridDims> box_min{0, 0, 0, 0};
  std::array<double, kMaxGridDims> box_max{1, 1, 1, 1};

  int output_dim() const { return levels * feature_dim; }

  // Grid vertices per axis at a level.
  int resolution(int level) const {
    return static_cast<int>(std::floor(base_resolution * std::pow(growth, level)));
  }

  std::uint64_t dense_cells(int level) const {
    std::uint64_t n = 1;
    const auto r = static_cast<std::uint64_t>(resolution(level));
    for (int d = 0; d < dims; ++d) {
      n *= r;
      if (n > (1ull << 40)) return n;
    }
    return n;
  }

  bool is_dense(int level) const { return dense_cells(level) <= table_size; }

  // Table rows allocated for a level: min(T, N^D).
  std::uint32_t level_entries(int level) const {
    return is_dense(level) ? static_cast<std::uint32_t>(dense_cells(level)) : table_size;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (int l = 0; l < levels; ++l) n += static_cast<std::size_t>(level_entries(l)) * feature_dim;
    return n;
  }

  void validate(int mlp_input_width = -1) const {
    auto fail = [](const std::string& m) { throw ConfigError("hash grid config: " + m); };
    if (dims < 1 || dims > kMaxGridDims) fail("dims must be in [1,4]");
    if (levels < 1) fail("levels must be >= 1");
    if (table_size == 0 || (table_size & (table_size - 1)) != 0) fail("table size must be a power of two");
    if (feature_dim < 1) fail("feature_dim must be >= 1");
    if (base_resolution < 2) fail("base resolution must be >= 2");
    if (!(growth > 1.0)) fail("growth factor must exceed 1");
    for (int d = 0; d < dims; ++d)
      if (!(box_max[d] > box_min[d])) fail("empty domain box on axis " + std::to_string(d));
    if (mlp_input_width >= 0 && output_dim() > mlp_input_width) fail("L*F exceeds MLP input width");
  }
};

inline constexpr std::array<std::uint32_t, kMaxGridDims> kHashPrimes{1u, 2654435761u, 805459861u, 3674653429u};

// Table row of a grid vertex. Dense levels use row-major indexing; others
// XOR the prime-multiplied coordinates and mask by T-1.
inline std::uint32_t hash_index(std::span<const std::uint32_t> cell, int level, const HashGridConfig& cfg) {
  if (cfg.is_dense(level)) {
    const auto n = static_cast<std::uint64_t>(cfg.resolution(level));
    std::uint64_t idx = 0, stride = 1;
    for (int d = 0; d < cfg.dims; ++d) {
      idx += cell[d] * stride;
      stride *= n;
    }
    return static_cast<std::uint32_t>(idx);
  }
  std::uint32_t h = 0;
  for (int d = 0; d < cfg.dims; ++d) h ^= cell[d] * kHashPrimes[d];
  return h & (cfg.table_size - 1);
}

template <typename Real>
class HashGrid {
 public:
  HashGrid() = default;

  explicit HashGrid(const HashGridConfig& cfg, std::uint64_t seed = 0) : cfg_(cfg) {
    cfg_.validate();
    offsets_.resize(cfg_.levels + 1, 0);
    levels_.resize(cfg_.levels);
    for (int l = 0; l < cfg_.levels; ++l) {
      offsets_[l + 1] = offsets_[l] + static_cast<std::size_t>(cfg_.level_entries(l)) * cfg_.feature_dim;
      levels_[l].resolution = cfg_.resolution(l);
      levels_[l].dense = cfg_.is_dense(l);
    }
    table_.resize(offsets_.back());
    SplitMix64 rng(seed);
    for (auto& v : table_) v = static_cast<Real>((rng.uniform() * 2.0 - 1.0) * 1e-4);
  }

  const HashGridConfig& config() const { return cfg_; }
  int output_dim() const { return cfg_.output_dim(); }
  std::vector<Real>& table() { return table_; }
  const std::vector<Real>& table() const { return table_; }
  std::size_t level_offset(int level) const { return offsets_[level]; }

  // Row of the flat table holding feature f of grid vertex `cell`.
  std::size_t entry(std::span<const std::uint32_t> cell, int level, int f = 0) const {
    const Level& lv = levels_[level];
    std::uint32_t idx = 0;
    if (lv.dense) {
      std::uint32_t stride = 1;
      for (int d = 0; d < cfg_.dims; ++d) {
        idx += cell[d] * stride;
        stride *= static_cast<std::uint32_t>(lv.resolution);
      }
    } else {
      for (int d = 0; d < cfg_.dims; ++d) idx ^= cell[d] * kHashPrimes[d];
      idx &= cfg_.table_size - 1;
    }
    return offsets_[level] + static_cast<std::size_t>(idx) * cfg_.feature_dim + f;
  }

  void encode(std::span<const Real> x, std::span<Real> out) const {
    check_input(x, out.size());
    std::fill(out.begin(), out.end(), Real(0));
    for_each_corner<false>(x, [&](int level, std::size_t row, Real w, const std::array<Real, kMaxGridDims>&) {
      for (int f = 0; f < cfg_.feature_dim; ++f) out[level * cfg_.feature_dim + f] += w * table_[row + f];
    });
  }

  // Accumulates table gradients (dense layout matching table()) and, when
  // dx is non-empty, the input gradient through the interpolation weights.
  void encode_backward(std::span<const Real> x, std::span<const Real> upstream, std::span<Real> table_grad,
                       std::span<Real> dx) const {
    check_input(x, upstream.size());
    if (!table_grad.empty() && table_grad.size() != table_.size())
      throw DimensionError("table gradient size mismatch");
    if (!dx.empty()) std::fill(dx.begin(), dx.end(), Real(0));
    const int D = cfg_.dims;
    for_each_corner<true>(x, [&](int level, std::size_t row, Real w, const std::array<Real, kMaxGridDims>& dw) {
      const Real* up = upstream.data() + level * cfg_.feature_dim;
      Real dot = 0;
      for (int f = 0; f < cfg_.feature_dim; ++f) {
        if (!table_grad.empty()) table_grad[row + f] += w * up[f];
        dot += up[f] * table_[row + f];
      }
      if (!dx.empty())
        for (int d = 0; d < D; ++d) dx[d] += dw[d] * dot;
    });
  }

 private:
  void check_input(std::span<const Real> x, std::size_t out) const {
    if (static_cast<int>(x.size()) != cfg_.dims) throw DimensionError("hash grid input dimension mismatch");
    if (static_cast<int>(out) != cfg_.output_dim()) throw DimensionError("hash grid output size mismatch");
    for (Real v : x)
      if (std::isnan(v)) throw NumericError("NaN input to hash encoding");
  }

  // Visits the 2^D corners of the enclosing cell on every level with the
  // interpolation weight and its derivative w.r.t. each raw input coordinate.
  template <bool kWithGrad, typename Fn>
  void for_each_corner(std::span<const Real> x, Fn&& fn) const {
    const int D = cfg_.dims;
    std::array<Real, kMaxGridDims> xn{}, inside{}, extent{};
    for (int d = 0; d < D; ++d) {
      extent[d] = static_cast<Real>(cfg_.box_max[d] - cfg_.box_min[d]);
      Real t = (x[d] - static_cast<Real>(cfg_.box_min[d])) / extent[d];
      inside[d] = (t >= Real(0) && t <= Real(1)) ? Real(1) : Real(0);
      xn[d] = std::clamp(t, Real(0), Real(1));
    }
    std::array<std::uint32_t, kMaxGridDims> base{}, cell{};
    std::array<Real, kMaxGridDims> frac{}, dscale{}, dw{};
    for (int l = 0; l < cfg_.levels; ++l) {
      const int n = levels_[l].resolution;
      const Real scale = static_cast<Real>(n - 1);
      for (int d = 0; d < D; ++d) {
        const Real pos = xn[d] * scale;
        const int c = std::min(static_cast<int>(std::floor(pos)), n - 2);
        base[d] = static_cast<std::uint32_t>(c);
        frac[d] = pos - static_cast<Real>(c);
        dscale[d] = inside[d] * scale / extent[d];
      }
      for (int corner = 0; corner < (1 << D); ++corner) {
        Real w = 1;
        for (int d = 0; d < D; ++d) {
          const bool hi = (corner >> d) & 1;
          cell[d] = base[d] + (hi ? 1u : 0u);
          w *= hi ? frac[d] : Real(1) - frac[d];
        }
        if constexpr (kWithGrad) {
          for (int d = 0; d < D; ++d) {
            Real g = ((corner >> d) & 1) ? Real(1) : Real(-1);
            for (int e = 0; e < D; ++e) {
              if (e == d) continue;
              g *= ((corner >> e) & 1) ? frac[e] : Real(1) - frac[e];
            }
            dw[d] = g * dscale[d];
          }
        }
        fn(l, entry(std::span<const std::uint32_t>(cell.data(), D), l), w, dw);
      }
    }
  }

  struct Level {
    int resolution = 0;
    bool dense = false;
  };

  HashGridConfig cfg_;
  std::vector<Level> levels_;
  std::vector<std::size_t> offsets_;
  std::vector<Real> table_;
};

template <typename Real>
void encode(const HashGrid<Real>& grid, std::span<const Real> x, std::span<Real> out) {
  grid.encode(x, out);
}

template <typename Real>
void encode_backward(const HashGrid<Real>& grid, std::span<const Real> x, std::span<const Real> upstream,
                     std::span<Real> table_grad, std::span<Real> dx) {
  grid.encode_backward(x, upstream, table_grad, dx);
}

}  // namespace pnvr
