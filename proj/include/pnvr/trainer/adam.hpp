#pragma once

#include <pnvr/core/error.hpp>

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace pnvr {

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::vector<double> m;
  std::vector<double> v;
};

// Flat views over every parameter array of a model, in a fixed order.
template <typename Model>
std::vector<std::span<typename Model::value_type>> parameter_spans(Model& model) {
  std::vector<std::span<typename Model::value_type>> out;
  model.for_each_param([&](const std::string&, auto s) { out.push_back(s); });
  return out;
}

// Bias-corrected Adam over matching lists of parameter and gradient arrays.
// Returns false and leaves everything untouched when any gradient is not
// finite.
template <typename Real>
bool adam_step(AdamState& st, std::span<const std::span<Real>> params, std::span<const std::span<Real>> grads,
               double lr) {
  if (params.size() != grads.size()) throw DimensionError("adam: parameter/gradient list sizes differ");
  std::size_t total = 0;
  for (std::size_t a = 0; a < params.size(); ++a) {
    if (params[a].size() != grads[a].size()) throw DimensionError("adam: parameter/gradient shapes differ");
    total += params[a].size();
  }
  for (const auto& g : grads)
    for (Real x : g)
      if (!std::isfinite(x)) return false;
  if (st.m.empty()) {
    st.m.assign(total, 0.0);
    st.v.assign(total, 0.0);
  }
  if (st.m.size() != total) throw DimensionError("adam: state size does not match parameters");
  ++st.step;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  std::size_t i = 0;
  for (std::size_t a = 0; a < params.size(); ++a) {
    Real* p = params[a].data();
    const Real* g = grads[a].data();
    for (std::size_t k = 0; k < params[a].size(); ++k, ++i) {
      const double gk = g[k];
      // Untouched entries stay exactly zero; skipping them changes nothing.
      if (gk == 0.0 && st.m[i] == 0.0 && st.v[i] == 0.0) continue;
      st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * gk;
      st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * gk * gk;
      const double mh = st.m[i] / c1;
      const double vh = st.v[i] / c2;
      p[k] = static_cast<Real>(p[k] - lr * mh / (std::sqrt(vh) + st.eps));
    }
  }
  return true;
}

}  // namespace pnvr
