#pragma once

#include <pnvr/core/error.hpp>
#include <pnvr/core/parallel.hpp>
#include <pnvr/core/rng.hpp>

#include <Eigen/Core>

#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace pnvr {

// Fully connected network: ReLU on hidden layers, linear output. Heads apply
// their own output activation. Batches are column-major: element (i, b) of an
// (n x B) matrix lives at [b * n + i].
template <typename Real>
struct Mlp {
  std::vector<int> widths;  // input, hidden..., output
  // Layer l weights, column-major (out x in): W[i * out + o].
  std::vector<std::vector<Real>> weights;
  std::vector<std::vector<Real>> biases;

  int layer_count() const { return static_cast<int>(weights.size()); }
  int input_dim() const { return widths.front(); }
  int output_dim() const { return widths.back(); }

  static Mlp create(std::vector<int> widths, std::uint64_t seed, bool zero_output_layer = false) {
    if (widths.size() < 2) throw ConfigError("an MLP needs at least input and output widths");
    for (int w : widths)
      if (w < 1) throw ConfigError("MLP widths must be positive");
    Mlp m;
    m.widths = std::move(widths);
    SplitMix64 rng(seed);
    const int L = static_cast<int>(m.widths.size()) - 1;
    for (int l = 0; l < L; ++l) {
      const int in = m.widths[l], out = m.widths[l + 1];
      // He-uniform for ReLU inputs on hidden layers, Glorot-uniform on the output.
      const double bound = l + 1 < L ? std::sqrt(6.0 / in) : std::sqrt(6.0 / (in + out));
      std::vector<Real> W(static_cast<std::size_t>(in) * out);
      for (auto& w : W) w = static_cast<Real>((rng.uniform() * 2.0 - 1.0) * bound);
      if (zero_output_layer && l + 1 == L) std::fill(W.begin(), W.end(), Real(0));
      m.weights.push_back(std::move(W));
      m.biases.emplace_back(out, Real(0));
    }
    return m;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (int l = 0; l < layer_count(); ++l) n += weights[l].size() + biases[l].size();
    return n;
  }

  template <typename Fn>
  void for_each_param(const std::string& prefix, Fn&& fn) {
    for (int l = 0; l < layer_count(); ++l) {
      fn(prefix + ".W" + std::to_string(l), std::span<Real>(weights[l]));
      fn(prefix + ".b" + std::to_string(l), std::span<Real>(biases[l]));
    }
  }

  void set_zero() {
    for (auto& w : weights) std::fill(w.begin(), w.end(), Real(0));
    for (auto& b : biases) std::fill(b.begin(), b.end(), Real(0));
  }
};

template <typename Real>
struct MlpCache {
  int batch = 0;
  // acts[0] is the input, acts[l] the post-activation output of layer l;
  // acts.back() is the linear output.
  std::vector<std::vector<Real>> acts;

  std::span<const Real> output() const { return acts.back(); }
  std::span<Real> output() { return acts.back(); }
};

namespace detail {

template <typename Real>
using MatX = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Real>
using VecX = Eigen::Matrix<Real, Eigen::Dynamic, 1>;

// Small Eigen products peel and vectorize according to operand addresses, so
// products on Maps of std::vector memory round differently from run to run.
// Every product below runs on Eigen-owned (aligned) copies instead.
template <typename Real>
MatX<Real> owned(const Real* p, int rows, int cols) {
  return Eigen::Map<const MatX<Real>>(p, rows, cols);
}

// y(:, b) = W x(:, b) + bias for `batch` columns.
template <typename Real>
void affine_forward(const Real* W, const Real* bias, int in, int out, const Real* x, int batch, Real* y) {
  const MatX<Real> Wm = owned(W, out, in), Xm = owned(x, in, batch);
  MatX<Real> Ym;
  Ym.noalias() = Wm * Xm;
  Ym.colwise() += Eigen::Map<const VecX<Real>>(bias, out);
  Eigen::Map<MatX<Real>>(y, out, batch) = Ym;
}

}  // namespace detail

// Forward pass over `batch` columns of `input`. The cache keeps every layer's
// activations, which is all mlp_backward needs. Columns are split across
// `threads` workers in fixed chunks.
template <typename Real>
void mlp_forward(const Mlp<Real>& mlp, std::span<const Real> input, int batch, MlpCache<Real>& cache,
                 int threads = 1) {
  if (input.size() != static_cast<std::size_t>(mlp.input_dim()) * batch)
    throw DimensionError("MLP input has " + std::to_string(input.size()) + " values, expected " +
                         std::to_string(mlp.input_dim()) + " x " + std::to_string(batch));
  const int L = mlp.layer_count();
  cache.batch = batch;
  cache.acts.resize(L + 1);
  cache.acts[0].assign(input.begin(), input.end());
  for (int l = 0; l < L; ++l) {
    const int in = mlp.widths[l], out = mlp.widths[l + 1];
    auto& y = cache.acts[l + 1];
    y.resize(static_cast<std::size_t>(out) * batch);
    const bool relu = l + 1 < L;
    parallel_for(batch, threads, [&](std::size_t b0, std::size_t b1) {
      Real* yb = y.data() + b0 * out;
      detail::affine_forward(mlp.weights[l].data(), mlp.biases[l].data(), in, out, cache.acts[l].data() + b0 * in,
                             static_cast<int>(b1 - b0), yb);
      if (relu)
        for (std::size_t i = 0; i < (b1 - b0) * out; ++i) yb[i] = yb[i] > Real(0) ? yb[i] : Real(0);
    });
  }
}

template <typename Real>
MlpCache<Real> mlp_forward(const Mlp<Real>& mlp, std::span<const Real> input, int batch = 1) {
  MlpCache<Real> cache;
  mlp_forward(mlp, input, batch, cache);
  return cache;
}

// Reverse pass. `upstream` holds dL/d(output) for `columns.size()` columns
// (or for every cached column when `columns` is empty). Parameter gradients
// accumulate into `grads`; dL/d(input) is written to `dinput` if non-empty.
template <typename Real>
void mlp_backward(const Mlp<Real>& mlp, const MlpCache<Real>& cache, std::span<const Real> upstream,
                  Mlp<Real>& grads, std::span<Real> dinput = {}, std::span<const int> columns = {}) {
  using Mat = detail::MatX<Real>;
  const int L = mlp.layer_count();
  const int n = columns.empty() ? cache.batch : static_cast<int>(columns.size());
  if (upstream.size() != static_cast<std::size_t>(mlp.output_dim()) * n)
    throw DimensionError("MLP upstream gradient has wrong size");
  if (!dinput.empty() && dinput.size() != static_cast<std::size_t>(mlp.input_dim()) * n)
    throw DimensionError("MLP input gradient buffer has wrong size");
  if (n == 0) return;

  Mat dy = detail::owned(upstream.data(), mlp.output_dim(), n);
  Mat xs;
  for (int l = L - 1; l >= 0; --l) {
    const int in = mlp.widths[l], out = mlp.widths[l + 1];
    const Mat W = detail::owned(mlp.weights[l].data(), out, in);
    Eigen::Map<Mat> dW(grads.weights[l].data(), out, in);
    Eigen::Map<detail::VecX<Real>> db(grads.biases[l].data(), out);
    const std::vector<Real>& X = cache.acts[l];
    if (columns.empty()) {
      xs = detail::owned(X.data(), in, n);
    } else {
      xs.resize(in, n);
      for (int j = 0; j < n; ++j)
        xs.col(j) = Eigen::Map<const detail::VecX<Real>>(X.data() + static_cast<std::size_t>(columns[j]) * in, in);
    }
    Mat gW;
    gW.noalias() = dy * xs.transpose();
    dW += gW;
    const detail::VecX<Real> gb = dy.rowwise().sum();
    db += gb;
    if (l == 0 && dinput.empty()) break;
    Mat dx;
    dx.noalias() = W.transpose() * dy;
    if (l > 0) {
      // ReLU gate of the previous layer: its output was zero.
      dx = (xs.array() > Real(0)).select(dx, Real(0));
      dy.swap(dx);
    } else {
      Eigen::Map<Mat>(dinput.data(), in, n) = dx;
    }
  }
}

}  // namespace pnvr
