#pragma once

#include <pnvr/core/error.hpp>

#include <cmath>
#include <numbers>
#include <span>

namespace pnvr {

struct FreqEncodingConfig {
  int dims = 3;
  int bands = 4;
  bool include_input = true;

  int output_dim() const { return (include_input ? dims : 0) + 2 * bands * dims; }
  void validate() const {
    if (bands < 1) throw ConfigError("frequency encoding needs at least one band");
    if (dims < 1) throw ConfigError("frequency encoding needs at least one dimension");
  }
};

// Layout: [x], then per band i: sin(2^i pi x_d) for all d, cos(2^i pi x_d) for all d.
template <typename Real>
void freq_encode(std::span<const Real> x, const FreqEncodingConfig& cfg, std::span<Real> out) {
  if (static_cast<int>(x.size()) != cfg.dims || static_cast<int>(out.size()) != cfg.output_dim())
    throw DimensionError("frequency encoding size mismatch");
  int o = 0;
  if (cfg.include_input)
    for (int d = 0; d < cfg.dims; ++d) out[o++] = x[d];
  Real freq = static_cast<Real>(std::numbers::pi);
  for (int i = 0; i < cfg.bands; ++i, freq *= 2) {
    for (int d = 0; d < cfg.dims; ++d) out[o++] = std::sin(freq * x[d]);
    for (int d = 0; d < cfg.dims; ++d) out[o++] = std::cos(freq * x[d]);
  }
}

template <typename Real>
void freq_encode_backward(std::span<const Real> x, const FreqEncodingConfig& cfg, std::span<const Real> upstream,
                          std::span<Real> dx) {
  if (static_cast<int>(x.size()) != cfg.dims || static_cast<int>(dx.size()) != cfg.dims ||
      static_cast<int>(upstream.size()) != cfg.output_dim())
    throw DimensionError("frequency encoding size mismatch");
  int o = 0;
  for (int d = 0; d < cfg.dims; ++d) dx[d] = cfg.include_input ? upstream[o++] : Real(0);
  Real freq = static_cast<Real>(std::numbers::pi);
  for (int i = 0; i < cfg.bands; ++i, freq *= 2) {
    for (int d = 0; d < cfg.dims; ++d) dx[d] += upstream[o++] * freq * std::cos(freq * x[d]);
    for (int d = 0; d < cfg.dims; ++d) dx[d] -= upstream[o++] * freq * std::sin(freq * x[d]);
  }
}

}  // namespace pnvr
