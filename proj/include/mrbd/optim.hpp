#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "mrbd/tensor.hpp"

namespace mrbd {

template <class T>
using Gradients = std::vector<Tensor<T>>;

/// Zero-filled gradients shaped like `params`.
template <class T>
Gradients<T> zeros_like(const std::vector<Tensor<T>>& params) {
  Gradients<T> g;
  g.reserve(params.size());
  for (const auto& p : params) g.emplace_back(p.shape(), T(0));
  return g;
}

/// dst += src, entry-wise over matching tensor lists.
template <class T>
void accumulate(Gradients<T>& dst, const Gradients<T>& src) {
  if (dst.size() != src.size()) throw std::invalid_argument("accumulate: tensor count mismatch");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (dst[i].shape() != src[i].shape()) throw ShapeError("accumulate: shape mismatch " + shape_string(dst[i].shape()));
    auto d = dst[i].data();
    const auto s = src[i].data();
    for (std::size_t k = 0; k < d.size(); ++k) d[k] += s[k];
  }
}

/// L2 norm over every entry of every tensor, accumulated in double.
template <class T>
double global_norm(const Gradients<T>& grads) {
  double sq = 0.0;
  for (const auto& g : grads) {
    for (T v : g.data()) sq += static_cast<double>(v) * static_cast<double>(v);
  }
  return std::sqrt(sq);
}

/// Rescales all tensors by c/||g|| when the global norm exceeds c. Returns the
/// norm before clipping.
template <class T>
double clip_gradients(Gradients<T>& grads, double max_norm) {
  if (!(max_norm > 0.0)) throw std::invalid_argument("clip_gradients: max norm must be > 0");
  const double norm = global_norm(grads);
  if (norm > max_norm) {
    const T s = static_cast<T>(max_norm / norm);
    for (auto& g : grads) {
      for (auto& v : g.data()) v *= s;
    }
  }
  return norm;
}

template <class T>
struct AdamState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamState() = default;
  explicit AdamState(const std::vector<Tensor<T>>& params) : m(zeros_like(params)), v(zeros_like(params)) {}

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// One Adam step with bias correction. A nonzero `l2` adds 2*l2*theta to the
/// gradient (loss-side weight decay). Per-entry arithmetic runs in double.
template <class T>
void adam_update(std::vector<Tensor<T>>& params, const Gradients<T>& grads, AdamState<T>& state, double lr,
                 double l2 = 0.0) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw std::invalid_argument("adam_update: tensor count mismatch");
  }
  if (l2 < 0.0) throw std::invalid_argument("adam_update: weight decay must be >= 0");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != grads[i].shape()) {
      throw ShapeError("adam_update: gradient shape " + shape_string(grads[i].shape()) + " for parameter " +
                       shape_string(params[i].shape()));
    }
    auto p = params[i].data();
    const auto g = grads[i].data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = static_cast<double>(g[k]) + 2.0 * l2 * static_cast<double>(p[k]);
      const double mk = state.beta1 * static_cast<double>(m[k]) + (1.0 - state.beta1) * gk;
      const double vk = state.beta2 * static_cast<double>(v[k]) + (1.0 - state.beta2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      const double step = lr * (mk / c1) / (std::sqrt(vk / c2) + state.eps);
      p[k] = static_cast<T>(static_cast<double>(p[k]) - step);
    }
  }
}

}  // namespace mrbd
