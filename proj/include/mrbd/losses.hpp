#pragma once

// Loss algebra for supervised, distillation and bidirectional-distillation
// training. Every quantity exists twice: as a plain function over probability
// vectors (used by evaluation and as a test oracle) and as a tape-recorded
// graph over logits (used by the trainers).
//
// Divergences use natural logs with probabilities clamped to [1e-8, 1]
// inside the log. The fused term follows the ordering
//   KL(M || P) = sum_w M(w) log(M(w) / P(w)),  M = (P + Q) / 2,
// and the bidirectional loss is 0.5 KL(M || P) + 0.5 KL(M || Q).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mrbd/autograd.hpp"
#include "mrbd/corpus.hpp"
#include "mrbd/model.hpp"

namespace mrbd {

inline constexpr double kProbFloor = 1e-8;

using Distribution = std::vector<double>;
using DistributionSeq = std::vector<Distribution>;

template <class T>
T clamp_prob(T p) {
  return std::clamp(p, static_cast<T>(kProbFloor), T(1));
}

namespace detail {

inline void require_same_length(const char* op, std::size_t a, std::size_t b) {
  if (a != b) {
    throw std::invalid_argument(std::string(op) + ": length mismatch " + std::to_string(a) + " vs " +
                                std::to_string(b));
  }
}

}  // namespace detail

/// -sum_j ln p_j(y_j).
inline double nll_loss(const DistributionSeq& dists, const TokenSeq& target) {
  detail::require_same_length("nll_loss", dists.size(), target.size());
  double s = 0.0;
  for (std::size_t j = 0; j < dists.size(); ++j) s -= std::log(clamp_prob(dists[j].at(target[j])));
  return s;
}

/// sum_w a(w) ln(a(w) / b(w)).
inline double kl_divergence(const Distribution& a, const Distribution& b) {
  detail::require_same_length("kl_divergence", a.size(), b.size());
  double s = 0.0;
  for (std::size_t w = 0; w < a.size(); ++w) s += a[w] * (std::log(clamp_prob(a[w])) - std::log(clamp_prob(b[w])));
  return s;
}

/// Teacher-to-student KL summed over decoding steps; the teacher is the first
/// argument.
inline double kd_kl_loss(const DistributionSeq& teacher, const DistributionSeq& student) {
  detail::require_same_length("kd_kl_loss", teacher.size(), student.size());
  double s = 0.0;
  for (std::size_t j = 0; j < teacher.size(); ++j) s += kl_divergence(teacher[j], student[j]);
  return s;
}

/// Which peers a student imitates at one iteration. bits[k] refers to the
/// k-th peer in index order with the student itself skipped.
struct GateMask {
  std::vector<std::uint8_t> bits;
  std::size_t selected = 0;
  double probability = 1.0;

  /// Student index of the k-th peer of student `self`.
  static std::size_t peer_index(std::size_t self, std::size_t k) { return k < self ? k : k + 1; }
};

/// N-1 independent Bernoulli(p) draws, redrawn as a whole until at least one
/// peer is selected.
template <class Rng>
GateMask sample_gate(std::size_t students, std::size_t self, double p, Rng& rng) {
  if (students < 2) throw std::invalid_argument("sample_gate: need at least 2 students");
  if (self >= students) throw std::invalid_argument("sample_gate: self index out of range");
  if (!(p > 0.0 && p <= 1.0)) throw std::invalid_argument("sample_gate: imitation probability must be in (0,1]");
  GateMask m;
  m.probability = p;
  m.bits.assign(students - 1, 0);
  std::bernoulli_distribution coin(p);
  while (m.selected == 0) {
    m.selected = 0;
    for (auto& b : m.bits) {
      b = coin(rng) ? 1 : 0;
      m.selected += b;
    }
  }
  return m;
}

/// (1/H) sum_i g_i p_i for one decoding step.
inline Distribution aggregate_peers(std::span<const Distribution> peers, const GateMask& mask) {
  detail::require_same_length("aggregate_peers", peers.size(), mask.bits.size());
  std::size_t h = 0;
  for (auto b : mask.bits) h += b;
  if (h == 0) throw std::invalid_argument("aggregate_peers: gate selects no peer");
  Distribution out;
  for (std::size_t i = 0; i < peers.size(); ++i) {
    if (!mask.bits[i]) continue;
    if (out.empty()) out.assign(peers[i].size(), 0.0);
    detail::require_same_length("aggregate_peers", out.size(), peers[i].size());
    for (std::size_t w = 0; w < out.size(); ++w) out[w] += peers[i][w];
  }
  for (auto& v : out) v /= static_cast<double>(h);
  return out;
}

inline Distribution fuse(const Distribution& student, const Distribution& aggregate) {
  detail::require_same_length("fuse", student.size(), aggregate.size());
  Distribution out(student.size());
  for (std::size_t w = 0; w < out.size(); ++w) out[w] = 0.5 * student[w] + 0.5 * aggregate[w];
  return out;
}

/// KL from the fused distribution to one side.
inline double fused_kl(const Distribution& fused, const Distribution& side) { return kl_divergence(fused, side); }

inline double js_step(const Distribution& p, const Distribution& q) {
  const Distribution m = fuse(p, q);
  return 0.5 * fused_kl(m, p) + 0.5 * fused_kl(m, q);
}

inline double js_loss(const DistributionSeq& student, const DistributionSeq& aggregate) {
  detail::require_same_length("js_loss", student.size(), aggregate.size());
  double s = 0.0;
  for (std::size_t j = 0; j < student.size(); ++j) s += js_step(student[j], aggregate[j]);
  return s;
}

/// Cross-entropy against (1 - eps) one-hot + eps / |V| uniform.
inline double label_smoothing_loss(const DistributionSeq& dists, const TokenSeq& target, double eps) {
  if (!(eps >= 0.0 && eps < 1.0)) throw std::invalid_argument("label_smoothing_loss: eps must be in [0,1)");
  if (eps == 0.0) return nll_loss(dists, target);
  detail::require_same_length("label_smoothing_loss", dists.size(), target.size());
  double s = 0.0;
  for (std::size_t j = 0; j < dists.size(); ++j) {
    const double v = static_cast<double>(dists[j].size());
    for (std::size_t w = 0; w < dists[j].size(); ++w) {
      const double q = (w == static_cast<std::size_t>(target[j]) ? 1.0 - eps : 0.0) + eps / v;
      s -= q * std::log(clamp_prob(dists[j][w]));
    }
  }
  return s;
}

/// lambda * sum ||theta||^2 over all tensors.
template <class T>
double weight_decay_penalty(const ModelParams<T>& params, double lambda) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("weight_decay_penalty: lambda must be >= 0");
  if (lambda == 0.0) return 0.0;
  double s = 0.0;
  for (const auto& t : params.tensors()) {
    for (T v : t.data()) s += static_cast<double>(v) * static_cast<double>(v);
  }
  return lambda * s;
}

/// Per-student loss terms. `distill` is the divergence computed on
/// temperature-softened distributions; the objective scales it by T^2.
struct LossBreakdown {
  double nll = 0.0;
  double distill = 0.0;
  double temperature = 1.0;

  double coefficient() const { return temperature * temperature; }
  double total() const { return nll + coefficient() * distill; }
};

/// sum_n (nll_n + T^2 * distill_n).
inline double total_objective(std::span<const LossBreakdown> parts, double temperature) {
  double s = 0.0;
  for (const auto& b : parts) {
    if (!std::isfinite(b.nll) || !std::isfinite(b.distill)) {
      throw std::invalid_argument("total_objective: non-finite loss term");
    }
    s += b.nll + temperature * temperature * b.distill;
  }
  return s;
}

namespace graph {

/// softmax(logits / T) along rows.
template <class T>
Var<T> soften(Var<T> logits, double temperature) {
  return ag::softmax_rows(ag::scale(logits, static_cast<T>(1.0 / temperature)));
}

/// Row-wise sum_w a(w) (ln clamp(a(w)) - ln clamp(b(w))) as an [m,1] column,
/// differentiable in both arguments.
template <class T>
Var<T> kl_rows(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.shape() != bv.shape()) ag::detail::mismatch("kl_rows", av.shape(), bv.shape());
  const std::size_t m = av.rows(), n = av.cols();
  Tensor<T> out = Tensor<T>::matrix(m, 1);
  for (std::size_t r = 0; r < m; ++r) {
    T s = T(0);
    for (std::size_t c = 0; c < n; ++c) {
      s += av(r, c) * (std::log(clamp_prob(av(r, c))) - std::log(clamp_prob(bv(r, c))));
    }
    out[r] = s;
  }
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {a, b}, [=](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad_buffer(self);
    const auto& x = t.value(ia);
    const auto& y = t.value(ib);
    const T lo = static_cast<T>(kProbFloor);
    if (t.requires_grad(ia)) {
      auto& gx = t.grad_buffer(ia);
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < n; ++c) {
          const T xc = clamp_prob(x(r, c));
          T d = std::log(xc) - std::log(clamp_prob(y(r, c)));
          if (x(r, c) >= lo && x(r, c) <= T(1)) d += x(r, c) / xc;
          gx(r, c) += g[r] * d;
        }
      }
    }
    if (t.requires_grad(ib)) {
      auto& gy = t.grad_buffer(ib);
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < n; ++c) {
          if (y(r, c) >= lo && y(r, c) <= T(1)) gy(r, c) -= g[r] * (x(r, c) / y(r, c));
        }
      }
    }
  });
}

template <class T>
Var<T> fuse(Var<T> student, Var<T> aggregate) {
  return ag::add(ag::scale(student, T(0.5)), ag::scale(aggregate, T(0.5)));
}

/// 0.5 KL(M || P) + 0.5 KL(M || Q) per row; gradients reach P and Q both
/// directly and through M.
template <class T>
Var<T> js_rows(Var<T> p, Var<T> q) {
  const Var<T> m = fuse(p, q);
  return ag::add(ag::scale(kl_rows(m, p), T(0.5)), ag::scale(kl_rows(m, q), T(0.5)));
}

/// Gated mean of the selected peers' distributions.
template <class T>
Var<T> aggregate(std::span<const Var<T>> peers, const GateMask& mask) {
  detail::require_same_length("aggregate", peers.size(), mask.bits.size());
  std::optional<Var<T>> sum;
  std::size_t h = 0;
  for (std::size_t i = 0; i < peers.size(); ++i) {
    if (!mask.bits[i]) continue;
    sum = sum ? ag::add(*sum, peers[i]) : peers[i];
    ++h;
  }
  if (h == 0) throw std::invalid_argument("aggregate: gate selects no peer");
  return ag::scale(*sum, static_cast<T>(1.0 / static_cast<double>(h)));
}

/// Weighted sum of an [B,1] column over rows whose mask is set.
template <class T>
Var<T> masked_sum(Var<T> column, std::span<const std::uint8_t> mask, double weight) {
  Tensor<T> w = Tensor<T>::matrix(mask.size(), 1);
  for (std::size_t r = 0; r < mask.size(); ++r) w[r] = mask[r] ? static_cast<T>(weight) : T(0);
  return ag::sum_all(ag::mul(column, column.tape->constant(std::move(w))));
}

/// -ln p(target) per row, with optional label smoothing.
template <class T>
Var<T> token_loss_rows(Var<T> logits, std::span<const TokenId> targets, double label_smoothing) {
  const Var<T> logp = ag::log_softmax_rows(logits);
  const Var<T> picked = ag::pick(logp, targets);
  if (label_smoothing == 0.0) return ag::scale(picked, T(-1));
  const double v = static_cast<double>(logits.cols());
  return ag::scale(ag::add(ag::scale(picked, static_cast<T>(1.0 - label_smoothing)),
                           ag::scale(ag::sum_rows(logp), static_cast<T>(label_smoothing / v))),
                   T(-1));
}

/// Supervised loss of a batch: summed over steps, averaged over the batch.
template <class T>
Var<T> sequence_nll(const DecoderOutput<T>& out, const Batch& batch, double label_smoothing = 0.0) {
  const double inv_b = 1.0 / static_cast<double>(batch.size);
  std::optional<Var<T>> total;
  for (std::size_t j = 0; j < out.logits.size(); ++j) {
    const Var<T> step = masked_sum(token_loss_rows(out.logits[j], batch.target[j], label_smoothing),
                                   batch.target_mask[j], inv_b);
    total = total ? ag::add(*total, step) : step;
  }
  return *total;
}

/// Summed-over-steps, batch-averaged divergence between two aligned
/// sequences of [B,V] distributions, given a per-row divergence.
template <class T, class RowDivergence>
Var<T> sequence_divergence(std::span<const Var<T>> a, std::span<const Var<T>> b, const Batch& batch,
                           RowDivergence&& rows) {
  detail::require_same_length("sequence_divergence", a.size(), b.size());
  const double inv_b = 1.0 / static_cast<double>(batch.size);
  std::optional<Var<T>> total;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const Var<T> step = masked_sum(rows(a[j], b[j]), batch.target_mask[j], inv_b);
    total = total ? ag::add(*total, step) : step;
  }
  return *total;
}

template <class T>
struct TermLoss {
  Var<T> nll;
  Var<T> distill;  // before the T^2 factor
  Var<T> total;
};

/// One student's term of the group objective on one batch:
/// NLL + T^2 * distill, where distill compares the student's T-softened
/// predictions with the equal mean of the given peers'. Bidirectional uses
/// the fused JS form; otherwise KL(peers || student).
template <class T>
TermLoss<T> mrbd_term_loss(const DecoderOutput<T>& student, std::span<const DecoderOutput<T>* const> peers,
                           const Batch& batch, double temperature, double label_smoothing, bool bidirectional) {
  if (peers.empty()) throw std::invalid_argument("mrbd_term_loss: no peers");
  const Var<T> nll = sequence_nll(student, batch, label_smoothing);
  const GateMask all{std::vector<std::uint8_t>(peers.size(), 1), peers.size(), 1.0};
  std::vector<Var<T>> p, q;
  for (std::size_t j = 0; j < student.logits.size(); ++j) {
    p.push_back(soften(student.logits[j], temperature));
    std::vector<Var<T>> at;
    for (const auto* o : peers) at.push_back(soften(o->logits.at(j), temperature));
    q.push_back(aggregate<T>(at, all));
  }
  const Var<T> distill = bidirectional
                             ? sequence_divergence<T>(p, q, batch, [](Var<T> a, Var<T> b) { return js_rows(a, b); })
                             : sequence_divergence<T>(q, p, batch, [](Var<T> a, Var<T> b) { return kl_rows(a, b); });
  return {nll, distill, ag::add(nll, ag::scale(distill, static_cast<T>(temperature * temperature)))};
}

/// NLL + T^2 KL(teacher mean || student) with the teachers' outputs taken as
/// given (callers bind them without gradients).
template <class T>
TermLoss<T> imitation_loss(const DecoderOutput<T>& student, std::span<const DecoderOutput<T>* const> teachers,
                           const Batch& batch, double temperature, double label_smoothing) {
  const Var<T> nll = sequence_nll(student, batch, label_smoothing);
  if (teachers.empty()) return {nll, nll.tape->constant(Tensor<T>::scalar(T(0))), nll};
  const GateMask all{std::vector<std::uint8_t>(teachers.size(), 1), teachers.size(), 1.0};
  std::vector<Var<T>> target, soft;
  for (std::size_t j = 0; j < student.logits.size(); ++j) {
    std::vector<Var<T>> at;
    for (const auto* o : teachers) at.push_back(soften(o->logits.at(j), temperature));
    target.push_back(aggregate<T>(at, all));
    soft.push_back(soften(student.logits[j], temperature));
  }
  const Var<T> kl = sequence_divergence<T>(target, soft, batch, [](Var<T> a, Var<T> b) { return kl_rows(a, b); });
  return {nll, kl, ag::add(nll, ag::scale(kl, static_cast<T>(temperature * temperature)))};
}

}  // namespace graph

/// Mean per-pair NLL over a corpus with dropout off. Pairs are evaluated in
/// corpus order in batches of `batch_size`; per-pair sums run in double.
template <class T>
double corpus_nll(const ModelParams<T>& params, const Corpus& corpus, std::size_t batch_size = 64) {
  if (corpus.pairs.empty()) throw std::invalid_argument("corpus_nll: empty corpus");
  if (batch_size == 0) throw std::invalid_argument("corpus_nll: batch size must be >= 1");
  double total = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < corpus.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(corpus.size(), start + batch_size); ++i) idx.push_back(i);
    const Batch batch = make_batch(corpus, idx);
    Tape<T> tape;
    const auto leaves = bind_params(tape, params, false);
    const auto out = forward_logits<T>(params, leaves, batch, nullptr);
    std::vector<double> per(batch.size, 0.0);
    for (std::size_t j = 0; j < out.logits.size(); ++j) {
      const auto rows = graph::token_loss_rows(out.logits[j], batch.target[j], 0.0);
      const auto& v = rows.value();
      for (std::size_t b = 0; b < batch.size; ++b) {
        if (batch.target_mask[j][b]) per[b] += static_cast<double>(v[b]);
      }
    }
    for (double x : per) total += x;
  }
  return total / static_cast<double>(corpus.size());
}

}  // namespace mrbd
