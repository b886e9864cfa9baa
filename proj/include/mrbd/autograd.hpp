#pragma once

// Reverse-mode differentiation over a linear tape. Nodes are appended in
// evaluation order, so walking the tape backwards visits every node after
// all of its consumers.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mrbd/tensor.hpp"

namespace mrbd {

template <class T>
class Tape;

/// Handle to a tensor recorded on a Tape.
template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(id); }
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> leaf(Tensor<T> value, bool requires_grad = true) {
    nodes_.push_back(Node{std::move(value), {}, requires_grad, nullptr});
    return {this, nodes_.size() - 1};
  }
  Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

  /// Appends the result of a primitive. The backward function is kept only
  /// when some input needs a gradient.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs,
                BackwardFn backward) {
    bool needs = false;
    for (const auto& v : inputs) needs = needs || requires_grad(v.id);
    return push(std::move(value), needs, std::move(backward));
  }
  Var<T> record(Tensor<T> value, std::span<const Var<T>> inputs,
                BackwardFn backward) {
    bool needs = false;
    for (const auto& v : inputs) needs = needs || requires_grad(v.id);
    return push(std::move(value), needs, std::move(backward));
  }

  const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool has_grad(std::size_t id) const { return !nodes_[id].grad.empty(); }

  /// Gradient of the last backward() target with respect to `v`; zeros when
  /// `v` did not influence it.
  Tensor<T> grad(Var<T> v) const {
    const Node& n = nodes_[v.id];
    if (n.grad.empty()) return Tensor<T>(n.value.shape());
    return n.grad;
  }

  /// Buffer that backward functions accumulate into.
  Tensor<T>& grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }

  void backward(Var<T> loss) {
    if (loss.tape != this) {
      throw std::invalid_argument("backward: loss recorded on another tape");
    }
    if (value(loss.id).size() != 1) {
      throw ShapeError("backward: loss must be a scalar, got " +
                       shape_string(value(loss.id).shape()));
    }
    for (auto& n : nodes_) n.grad = Tensor<T>();
    if (!requires_grad(loss.id)) return;
    grad_buffer(loss.id)[0] = T(1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward && !n.grad.empty()) n.backward(*this, i);
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var<T> push(Tensor<T> value, bool needs, BackwardFn backward) {
    nodes_.push_back(Node{std::move(value), {}, needs,
                          needs ? std::move(backward) : BackwardFn{}});
    return {this, nodes_.size() - 1};
  }

  std::deque<Node> nodes_;  // stable addresses for value() references
};

namespace ag {

namespace detail {

[[noreturn]] inline void mismatch(const char* op, const Shape& a,
                                  const Shape& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a) +
                   " vs " + shape_string(b));
}

template <class T>
void require_same_tape(const char* op, Var<T> a, Var<T> b) {
  if (a.tape != b.tape) {
    throw std::invalid_argument(std::string(op) + ": operands on different tapes");
  }
}

// c[m,n] += a[m,k] * b[k,n]
template <class T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const T* a,
             const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      if (av == T(0)) continue;
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m,k] += g[m,n] * b[k,n]^T
template <class T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* g,
             const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T* brow = b + p * n;
      T acc = T(0);
      for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      c[i * k + p] += acc;
    }
  }
}

// c[k,n] += a[m,k]^T * g[m,n]
template <class T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T* a,
             const T* g, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      if (av == T(0)) continue;
      T* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

}  // namespace detail

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  detail::require_same_tape("matmul", a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  if (bv.rows() != k) detail::mismatch("matmul", av.shape(), bv.shape());
  Tensor<T> out = Tensor<T>::matrix(m, n);
  detail::gemm_nn(m, k, n, av.data().data(), bv.data().data(), out.data().data());
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {a, b}, [=](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad_buffer(self);
    if (t.requires_grad(ia)) {
      detail::gemm_nt(m, n, k, g.data().data(), t.value(ib).data().data(),
                      t.grad_buffer(ia).data().data());
    }
    if (t.requires_grad(ib)) {
      detail::gemm_tn(m, k, n, t.value(ia).data().data(), g.data().data(),
                      t.grad_buffer(ib).data().data());
    }
  });
}

/// Elementwise sum. `b` may also be a single row broadcast over the rows of `a`.
template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::require_same_tape("add", a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  const bool same = av.shape() == bv.shape();
  const bool bcast = !same && bv.rows() == 1 && bv.cols() == av.cols();
  if (!same && !bcast) detail::mismatch("add", av.shape(), bv.shape());
  Tensor<T> out = av;
  const std::size_t n = av.cols();
  if (bcast) {
    for (std::size_t i = 0; i < out.size(); i += n)
      for (std::size_t j = 0; j < n; ++j) out[i + j] += bv[j];
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  }
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {a, b}, [=](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad_buffer(self);
    if (t.requires_grad(ia)) {
      auto& ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(ib)) {
      auto& gb = t.grad_buffer(ib);
      if (bcast) {
        for (std::size_t i = 0; i < g.size(); i += n)
          for (std::size_t j = 0; j < n; ++j) gb[j] += g[i + j];
      } else {
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    }
  });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  detail::require_same_tape("sub", a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.shape() != bv.shape()) detail::mismatch("sub", av.shape(), bv.shape());
  Tensor<T> out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {a, b}, [=](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad_buffer(self);
    if (t.requires_grad(ia)) {
      auto& ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(ib)) {
      auto& gb = t.grad_buffer(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

/// Elementwise product. `b` may also be a single column broadcast over the
/// columns of `a`.
template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::require_same_tape("mul", a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  const bool same = av.shape() == bv.shape();
  const bool bcast = !same && bv.cols() == 1 && bv.rows() == av.rows();
  if (!same && !bcast) detail::mismatch("mul", av.shape(), bv.shape());
  const std::size_t n = av.cols();
  Tensor<T> out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[bcast ? i / n : i];
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {a, b}, [=](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad_buffer(self);
    const auto& x = t.value(ia);
    const auto& y = t.value(ib);
    if (t.requires_grad(ia)) {
      auto& ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[bcast ? i / n : i];
    }
    if (t.requires_grad(ib)) {
      auto& gb = t.grad_buffer(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[bcast ? i / n : i] += g[i] * x[i];
    }
  });
}

template <class T>
Var<T> scale(Var<T> a, T c) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v *= c;
  const std::size_t ia = a.id;
  return a.tape->record(std::move(out), {a}, [=](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad_buffer(self);
    auto& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
  });
}

/// Concatenation along the last axis.
template <class T>
Var<T> concat(std::span<const Var<T>> parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const std::size_t m = parts[0].rows();
  std::size_t total = 0;
  std::vector<std::size_t> offsets, widths, ids;
  for (const auto& p : parts) {
    if (p.tape != parts[0].tape) throw std::invalid_argument("concat: operands on different tapes");
    if (p.rows() != m) detail::mismatch("concat", parts[0].shape(), p.shape());
    offsets.push_back(total);
    widths.push_back(p.cols());
    ids.push_back(p.id);
    total += p.cols();
  }
  Tensor<T> out = Tensor<T>::matrix(m, total);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].value();
    for (std::size_t r = 0; r < m; ++r) {
      std::copy_n(v.row_span(r).begin(), widths[k], out.row_span(r).begin() + offsets[k]);
    }
  }
  return parts[0].tape->record(std::move(out), parts, [=](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad_buffer(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!t.requires_grad(ids[k])) continue;
      auto& gk = t.grad_buffer(ids[k]);
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < widths[k]; ++c) gk(r, c) += g(r, offsets[k] + c);
      }
    }
  });
}

template <class T>
Var<T> concat(std::initializer_list<Var<T>> parts) {
  return concat(std::span<const Var<T>>(parts.begin(), parts.size()));
}

template <class T>
Var<T> slice_cols(Var<T> a, std::size_t begin, std::size_t end) {
  const auto& av = a.value();
  if (begin >= end || end > av.cols()) {
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + "," +
                     std::to_string(end) + ") invalid for " + shape_string(av.shape()));
  }
  const std::size_t m = av.rows(), w = end - begin;
  Tensor<T> out = Tensor<T>::matrix(m, w);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < w; ++c) out(r, c) = av(r, begin + c);
  }
  const std::size_t ia = a.id;
  return a.tape->record(std::move(out), {a}, [=](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad_buffer(self);
    auto& ga = t.grad_buffer(ia);
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t c = 0; c < w; ++c) ga(r, begin + c) += g(r, c);
    }
  });
}

/// Row lookup (embedding): out[i] = table[ids[i]].
template <class T>
Var<T> gather_rows(Var<T> table, std::span<const std::int32_t> ids) {
  const auto& tv = table.value();
  const std::size_t d = tv.cols();
  if (ids.empty()) throw ShapeError("gather_rows: empty index list");
  Tensor<T> out = Tensor<T>::matrix(ids.size(), d);
  std::vector<std::int32_t> idx(ids.begin(), ids.end());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= tv.rows()) {
      throw ShapeError("gather_rows: index " + std::to_string(idx[i]) +
                       " out of range for " + shape_string(tv.shape()));
    }
    std::copy_n(tv.row_span(idx[i]).begin(), d, out.row_span(i).begin());
  }
  const std::size_t it = table.id;
  return table.tape->record(std::move(out), {table}, [=](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad_buffer(self);
    auto& gt = t.grad_buffer(it);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (std::size_t c = 0; c < d; ++c) gt(idx[i], c) += g(i, c);
    }
  });
}

template <class T>
Var<T> tanh(Var<T> a) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v = std::tanh(v);
  const std::size_t ia = a.id;
  return a.tape->record(std::move(out), {a}, [=](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad_buffer(self);
    const auto& y = t.value(self);
    auto& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (T(1) - y[i] * y[i]);
  });
}

template <class T>
Var<T> sigmoid(Var<T> a) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v = T(1) / (T(1) + std::exp(-v));
  const std::size_t ia = a.id;
  return a.tape->record(std::move(out), {a}, [=](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad_buffer(self);
    const auto& y = t.value(self);
    auto& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (T(1) - y[i]);
  });
}

/// Max-subtracted softmax along the last axis.
template <class T>
Tensor<T> softmax_rows_value(const Tensor<T>& x) {
  Tensor<T> out = x;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row_span(r);
    const T mx = *std::max_element(row.begin(), row.end());
    T sum = T(0);
    for (auto& v : row) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (auto& v : row) v /= sum;
  }
  return out;
}

template <class T>
Tensor<T> log_softmax_rows_value(const Tensor<T>& x) {
  Tensor<T> out = x;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row_span(r);
    const T mx = *std::max_element(row.begin(), row.end());
    T sum = T(0);
    for (T v : row) sum += std::exp(v - mx);
    const T lse = mx + std::log(sum);
    for (auto& v : row) v -= lse;
  }
  return out;
}

template <class T>
Var<T> softmax_rows(Var<T> a) {
  Tensor<T> out = softmax_rows_value(a.value());
  const std::size_t ia = a.id;
  return a.tape->record(std::move(out), {a}, [=](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad_buffer(self);
    const auto& y = t.value(self);
    auto& ga = t.grad_buffer(ia);
    const std::size_t n = y.cols();
    for (std::size_t r = 0; r < y.rows(); ++r) {
      T dot = T(0);
      for (std::size_t c = 0; c < n; ++c) dot += g(r, c) * y(r, c);
      for (std::size_t c = 0; c < n; ++c) ga(r, c) += y(r, c) * (g(r, c) - dot);
    }
  });
}

template <class T>
Var<T> log_softmax_rows(Var<T> a) {
  Tensor<T> out = log_softmax_rows_value(a.value());
  const std::size_t ia = a.id;
  return a.tape->record(std::move(out), {a}, [=](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad_buffer(self);
    const auto& y = t.value(self);
    auto& ga = t.grad_buffer(ia);
    const std::size_t n = y.cols();
    for (std::size_t r = 0; r < y.rows(); ++r) {
      T gsum = T(0);
      for (std::size_t c = 0; c < n; ++c) gsum += g(r, c);
      for (std::size_t c = 0; c < n; ++c) ga(r, c) += g(r, c) - std::exp(y(r, c)) * gsum;
    }
  });
}

/// Builds an inverted-dropout mask: entries are 0 with probability 1-keep and
/// 1/keep otherwise.
template <class T, class Rng>
Tensor<T> make_dropout_mask(const Shape& shape, double keep, Rng& rng) {
  if (!(keep > 0.0 && keep <= 1.0)) {
    throw std::invalid_argument("dropout: keep probability must be in (0, 1]");
  }
  Tensor<T> mask(shape);
  std::bernoulli_distribution coin(keep);
  const T kept = static_cast<T>(1.0 / keep);
  for (auto& v : mask.data()) v = coin(rng) ? kept : T(0);
  return mask;
}

template <class T>
Var<T> dropout_mask_apply(Var<T> a, const Tensor<T>& mask) {
  if (mask.shape() != a.shape()) detail::mismatch("dropout_mask_apply", a.shape(), mask.shape());
  return mul(a, a.tape->constant(mask));
}

/// Sum of all entries as a [1,1] tensor.
template <class T>
Var<T> sum_all(Var<T> a) {
  T s = T(0);
  for (T v : a.value().data()) s += v;
  const std::size_t ia = a.id;
  return a.tape->record(Tensor<T>::scalar(s), {a}, [=](Tape<T>& t, std::size_t self) {
    const T g = t.grad_buffer(self)[0];
    auto& ga = t.grad_buffer(ia);
    for (auto& v : ga.data()) v += g;
  });
}

/// Per-row sums as an [m,1] column.
template <class T>
Var<T> sum_rows(Var<T> a) {
  const auto& av = a.value();
  const std::size_t m = av.rows(), n = av.cols();
  Tensor<T> out = Tensor<T>::matrix(m, 1);
  for (std::size_t r = 0; r < m; ++r) {
    T s = T(0);
    for (T v : av.row_span(r)) s += v;
    out[r] = s;
  }
  const std::size_t ia = a.id;
  return a.tape->record(std::move(out), {a}, [=](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad_buffer(self);
    auto& ga = t.grad_buffer(ia);
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t c = 0; c < n; ++c) ga(r, c) += g[r];
    }
  });
}

/// out[r] = a[r, cols[r]] as an [m,1] column.
template <class T>
Var<T> pick(Var<T> a, std::span<const std::int32_t> cols) {
  const auto& av = a.value();
  const std::size_t m = av.rows();
  if (cols.size() != m) {
    throw ShapeError("pick: " + std::to_string(cols.size()) + " indices for " +
                     shape_string(av.shape()));
  }
  std::vector<std::int32_t> idx(cols.begin(), cols.end());
  Tensor<T> out = Tensor<T>::matrix(m, 1);
  for (std::size_t r = 0; r < m; ++r) {
    if (idx[r] < 0 || static_cast<std::size_t>(idx[r]) >= av.cols()) {
      throw ShapeError("pick: index " + std::to_string(idx[r]) + " out of range for " +
                       shape_string(av.shape()));
    }
    out[r] = av(r, idx[r]);
  }
  const std::size_t ia = a.id;
  return a.tape->record(std::move(out), {a}, [=](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad_buffer(self);
    auto& ga = t.grad_buffer(ia);
    for (std::size_t r = 0; r < m; ++r) ga(r, idx[r]) += g[r];
  });
}

/// Row-wise choice: out[r] = keep[r] ? a[r] : b[r]. Used to freeze recurrent
/// state across padded positions.
template <class T>
Var<T> select_rows(std::span<const std::uint8_t> keep, Var<T> a, Var<T> b) {
  detail::require_same_tape("select_rows", a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.shape() != bv.shape() || keep.size() != av.rows()) {
    detail::mismatch("select_rows", av.shape(), bv.shape());
  }
  std::vector<std::uint8_t> k(keep.begin(), keep.end());
  const std::size_t n = av.cols();
  Tensor<T> out = bv;
  for (std::size_t r = 0; r < k.size(); ++r) {
    if (k[r]) std::copy_n(av.row_span(r).begin(), n, out.row_span(r).begin());
  }
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {a, b}, [=](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad_buffer(self);
    for (std::size_t r = 0; r < k.size(); ++r) {
      const std::size_t target = k[r] ? ia : ib;
      if (!t.requires_grad(target)) continue;
      auto& gt = t.grad_buffer(target);
      for (std::size_t c = 0; c < n; ++c) gt(r, c) += g(r, c);
    }
  });
}

/// Copy of `a` that blocks gradient flow.
template <class T>
Var<T> detach(Var<T> a) {
  return a.tape->constant(a.value());
}

}  // namespace ag

/// Max over coordinates of |analytic - central difference| / max(1, |central
/// difference|) for a scalar function of several tensors. `f` builds the
/// function on the given tape from leaves holding the points.
template <class T, class F>
T finite_difference_check(F&& f, const std::vector<Tensor<T>>& points, T step) {
  if (!(step > T(0))) throw std::invalid_argument("finite_difference_check: step must be > 0");
  std::vector<Tensor<T>> analytic;
  {
    Tape<T> tape;
    std::vector<Var<T>> leaves;
    for (const auto& p : points) leaves.push_back(tape.leaf(p));
    Var<T> out = f(tape, std::span<const Var<T>>(leaves));
    tape.backward(out);
    for (const auto& l : leaves) analytic.push_back(tape.grad(l));
  }
  auto eval = [&](const std::vector<Tensor<T>>& at) {
    Tape<T> tape;
    std::vector<Var<T>> leaves;
    for (const auto& p : at) leaves.push_back(tape.leaf(p, false));
    return f(tape, std::span<const Var<T>>(leaves)).value().item();
  };
  T worst = T(0);
  std::vector<Tensor<T>> probe = points;
  for (std::size_t k = 0; k < points.size(); ++k) {
    for (std::size_t i = 0; i < points[k].size(); ++i) {
      const T orig = probe[k][i];
      probe[k][i] = orig + step;
      const T up = eval(probe);
      probe[k][i] = orig - step;
      const T down = eval(probe);
      probe[k][i] = orig;
      const T numeric = (up - down) / (T(2) * step);
      const T err = std::abs(analytic[k][i] - numeric) / std::max(T(1), std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

template <class T, class F>
T finite_difference_check(F&& f, const Tensor<T>& point, T step) {
  return finite_difference_check<T>(
      [&](Tape<T>& tape, std::span<const Var<T>> xs) { return f(tape, xs[0]); },
      std::vector<Tensor<T>>{point}, step);
}

}  // namespace mrbd
