#pragma once

// Corpus-level response metrics over n-grams.
//   dist_n: percentage of distinct n-grams among all generated n-grams
//   ent_n:  mean -log2 p_g(w) over the generated n-gram multiset, p_g from training data
//   dis_n:  mean log2(p_r(w) / p(w)) over the set of reference n-grams
// Frequencies that enter a log are add-eps smoothed (eps = 1e-10) over the
// union of the supports involved, then normalised.

#include <cmath>
#include <cstddef>
#include <map>
#include <set>
#include <span>
#include <stdexcept>
#include <vector>

namespace mrbd {

inline constexpr double kNgramSmoothing = 1e-10;

template <class Tok>
using Ngram = std::vector<Tok>;

template <class Tok>
using NgramCounts = std::map<Ngram<Tok>, std::size_t>;

template <class Tok>
NgramCounts<Tok> count_ngrams(std::span<const std::vector<Tok>> seqs, std::size_t n) {
  if (n == 0) throw std::invalid_argument("ngrams: n must be >= 1");
  NgramCounts<Tok> c;
  for (const auto& s : seqs) {
    for (std::size_t i = 0; i + n <= s.size(); ++i) ++c[Ngram<Tok>(s.begin() + i, s.begin() + i + n)];
  }
  return c;
}

template <class Tok>
std::size_t total_count(const NgramCounts<Tok>& c) {
  std::size_t t = 0;
  for (const auto& [_, k] : c) t += k;
  return t;
}

namespace detail {

/// Smoothed probability of `w` under `c` with the given support size.
template <class Tok>
double smoothed(const NgramCounts<Tok>& c, std::size_t total, std::size_t support, const Ngram<Tok>& w) {
  const auto it = c.find(w);
  const double k = it == c.end() ? 0.0 : static_cast<double>(it->second);
  return (k + kNgramSmoothing) / (static_cast<double>(total) + kNgramSmoothing * static_cast<double>(support));
}

template <class Tok>
std::size_t union_size(const NgramCounts<Tok>& a, const NgramCounts<Tok>& b) {
  std::size_t n = a.size();
  for (const auto& [w, _] : b) n += a.count(w) ? 0 : 1;
  return n;
}

}  // namespace detail

template <class Tok>
double dist_n(std::span<const std::vector<Tok>> responses, std::size_t n) {
  if (responses.empty()) throw std::invalid_argument("dist_n: no responses");
  const auto c = count_ngrams(responses, n);
  const std::size_t total = total_count(c);
  if (total == 0) return 0.0;
  return 100.0 * static_cast<double>(c.size()) / static_cast<double>(total);
}

template <class Tok>
double ent_n(std::span<const std::vector<Tok>> responses, const NgramCounts<Tok>& train, std::size_t n) {
  const auto gen = count_ngrams(responses, n);
  const std::size_t u = total_count(gen);
  if (u == 0) return 0.0;
  const std::size_t support = detail::union_size(train, gen);
  const std::size_t train_total = total_count(train);
  double s = 0.0;
  for (const auto& [w, k] : gen) {
    s -= static_cast<double>(k) * std::log2(detail::smoothed(train, train_total, support, w));
  }
  return s / static_cast<double>(u);
}

template <class Tok>
double dis_n(std::span<const std::vector<Tok>> responses, std::span<const std::vector<Tok>> references,
             std::size_t n) {
  const auto gen = count_ngrams(responses, n);
  const auto ref = count_ngrams(references, n);
  if (ref.empty()) return 0.0;
  const std::size_t support = detail::union_size(ref, gen);
  const std::size_t gt = total_count(gen), rt = total_count(ref);
  double s = 0.0;
  for (const auto& [w, _] : ref) {
    s += std::log2(detail::smoothed(ref, rt, support, w) / detail::smoothed(gen, gt, support, w));
  }
  return s / static_cast<double>(ref.size());
}

/// Mean natural-log entropy of the equal mixture of the given models'
/// distributions, step by step. dists[model][step][word].
inline double prediction_entropy(std::span<const std::vector<std::vector<double>>> dists) {
  if (dists.empty() || dists[0].empty()) throw std::invalid_argument("prediction_entropy: no distributions");
  const std::size_t steps = dists[0].size();
  double total = 0.0;
  for (std::size_t j = 0; j < steps; ++j) {
    std::vector<double> mix(dists[0][j].size(), 0.0);
    for (const auto& d : dists) {
      if (d.size() != steps || d[j].size() != mix.size()) throw std::invalid_argument("prediction_entropy: ragged input");
      for (std::size_t w = 0; w < mix.size(); ++w) mix[w] += d[j][w];
    }
    double h = 0.0;
    for (double p : mix) {
      p /= static_cast<double>(dists.size());
      if (p > 0.0) h -= p * std::log(p);
    }
    total += h;
  }
  return total / static_cast<double>(steps);
}

/// Mean Euclidean distance between the distributions of every unordered pair
/// of models, averaged over steps.
inline double prediction_diversity(std::span<const std::vector<std::vector<double>>> dists) {
  if (dists.size() < 2) throw std::invalid_argument("prediction_diversity: need at least 2 models");
  const std::size_t steps = dists[0].size();
  if (steps == 0) throw std::invalid_argument("prediction_diversity: no steps");
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < dists.size(); ++a) {
    for (std::size_t b = a + 1; b < dists.size(); ++b) {
      if (dists[a].size() != steps || dists[b].size() != steps) {
        throw std::invalid_argument("prediction_diversity: ragged input");
      }
      for (std::size_t j = 0; j < steps; ++j) {
        double sq = 0.0;
        for (std::size_t w = 0; w < dists[a][j].size(); ++w) {
          const double d = dists[a][j][w] - dists[b][j][w];
          sq += d * d;
        }
        total += std::sqrt(sq);
      }
      ++pairs;
    }
  }
  return total / static_cast<double>(pairs * steps);
}

}  // namespace mrbd
