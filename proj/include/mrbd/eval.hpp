#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mrbd/corpus.hpp"
#include "mrbd/losses.hpp"
#include "mrbd/metrics.hpp"
#include "mrbd/model.hpp"
#include "mrbd/rng.hpp"
#include "mrbd/trainer.hpp"

namespace mrbd {

template <class T>
double test_nll(const ModelParams<T>& params, const Corpus& corpus, std::size_t batch = 64) {
  return corpus_nll(params, corpus, batch);
}

/// Greedy responses for every history of `corpus`, decoded in batches.
template <class T>
std::vector<TokenSeq> decode_corpus(const ModelParams<T>& params, const Corpus& corpus, std::size_t batch = 64) {
  std::vector<TokenSeq> out;
  out.reserve(corpus.size());
  std::vector<TokenSeq> hs;
  for (std::size_t start = 0; start < corpus.size(); start += batch) {
    hs.clear();
    for (std::size_t i = start; i < std::min(corpus.size(), start + batch); ++i) hs.push_back(corpus.pairs[i].history);
    for (auto& r : greedy_decode(params, std::span<const TokenSeq>(hs), params.config().max_decode_len)) {
      out.push_back(std::move(r));
    }
  }
  return out;
}

/// The six response metrics plus test NLL, in report order.
struct MetricReport {
  double dist1 = 0, dist2 = 0, ent1 = 0, ent2 = 0, dis1 = 0, dis2 = 0, test_nll = 0;

  static constexpr const char* kNames[] = {"dist_1", "dist_2", "ent_1", "ent_2", "dis_1", "dis_2", "test_nll"};
  std::vector<double> values() const { return {dist1, dist2, ent1, ent2, dis1, dis2, test_nll}; }
};

inline MetricReport evaluate_responses(std::span<const TokenSeq> generated, const Corpus& train, const Corpus& test) {
  std::vector<TokenSeq> refs, train_resp;
  for (const auto& p : test.pairs) refs.push_back(p.response);
  for (const auto& p : train.pairs) train_resp.push_back(p.response);
  MetricReport r;
  r.dist1 = dist_n<TokenId>(generated, 1);
  r.dist2 = dist_n<TokenId>(generated, 2);
  r.ent1 = ent_n<TokenId>(generated, count_ngrams<TokenId>(train_resp, 1), 1);
  r.ent2 = ent_n<TokenId>(generated, count_ngrams<TokenId>(train_resp, 2), 2);
  r.dis1 = dis_n<TokenId>(generated, refs, 1);
  r.dis2 = dis_n<TokenId>(generated, refs, 2);
  return r;
}

template <class T>
MetricReport evaluate_model(const ModelParams<T>& params, const Corpus& train, const Corpus& test,
                            std::size_t batch = 64) {
  const auto gen = decode_corpus(params, test, batch);
  MetricReport r = evaluate_responses(gen, train, test);
  r.test_nll = test_nll(params, test, batch);
  return r;
}

/// Teacher-forced T=1 distributions of one model over every target step of
/// the probe pairs, in pair order.
template <class T>
std::vector<std::vector<double>> probe_distributions(const ModelParams<T>& params, const Corpus& probe) {
  std::vector<std::vector<double>> out;
  for (const auto& pair : probe.pairs) {
    for (const auto& step : forward_teacher_forced(params, pair, false, 1.0)) out.emplace_back(step.begin(), step.end());
  }
  return out;
}

/// Entropy of the equal mixture of the first `k` models (all when fewer).
template <class T>
double group_prediction_entropy(std::span<const ModelParams<T>> models, const Corpus& probe, std::size_t k = 3) {
  std::vector<std::vector<std::vector<double>>> d;
  for (std::size_t i = 0; i < std::min(k, models.size()); ++i) d.push_back(probe_distributions(models[i], probe));
  return prediction_entropy(d);
}

template <class T>
double group_prediction_diversity(std::span<const ModelParams<T>> models, const Corpus& probe) {
  std::vector<std::vector<std::vector<double>>> d;
  for (const auto& m : models) d.push_back(probe_distributions(m, probe));
  return prediction_diversity(d);
}

struct PerturbSpec {
  std::vector<double> sigmas;
  std::size_t trials = 10;
  std::uint64_t seed = 0;

  void validate() const {
    if (sigmas.empty()) throw ConfigError("perturb: no sigma values");
    for (double s : sigmas) {
      if (!(s >= 0.0) || !std::isfinite(s)) throw ConfigError("perturb: sigma values must be >= 0");
    }
    if (trials == 0) throw ConfigError("perturb: trials must be >= 1");
  }
};

struct PerturbRow {
  double sigma = 0.0;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation over trials, 0 for a single trial
  std::vector<double> losses;
};

/// Test loss under i.i.d. N(0, sigma^2) noise added to every parameter. Trial t
/// of sigma index i draws from stream "perturb:i:t"; `params` is not modified.
template <class T>
std::vector<PerturbRow> perturb_sweep(const ModelParams<T>& params, const Corpus& test, const PerturbSpec& spec,
                                      std::size_t threads = 1, std::size_t batch = 64) {
  spec.validate();
  std::vector<PerturbRow> rows(spec.sigmas.size());
  std::vector<double> losses(spec.sigmas.size() * spec.trials);
  detail::parallel_for(losses.size(), threads, [&](std::size_t job) {
    const std::size_t i = job / spec.trials, t = job % spec.trials;
    const double sigma = spec.sigmas[i];
    ModelParams<T> noisy = params;
    Rng rng = make_rng(spec.seed, stream_name("perturb", i, t));
    std::normal_distribution<double> n(0.0, 1.0);
    for (auto& tensor : noisy.tensors()) {
      for (auto& v : tensor.data()) v = static_cast<T>(static_cast<double>(v) + sigma * n(rng));
    }
    losses[job] = corpus_nll(noisy, test, batch);
  });
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto& r = rows[i];
    r.sigma = spec.sigmas[i];
    r.losses.assign(losses.begin() + static_cast<std::ptrdiff_t>(i * spec.trials),
                    losses.begin() + static_cast<std::ptrdiff_t>((i + 1) * spec.trials));
    double s = 0.0;
    for (double x : r.losses) s += x;
    r.mean = s / static_cast<double>(spec.trials);
    if (spec.trials > 1) {
      double sq = 0.0;
      for (double x : r.losses) sq += (x - r.mean) * (x - r.mean);
      r.stddev = std::sqrt(sq / static_cast<double>(spec.trials - 1));
    }
  }
  return rows;
}

struct NoiseRow {
  double fraction = 0.0;
  double test_nll = 0.0;
  std::size_t selected = 0;
  TrainResult run;
};

/// Retrains from scratch on a noise-injected copy of the training set for
/// each fraction and reports the selected model's clean-test NLL.
inline std::vector<NoiseRow> noise_sweep(const ModelConfig& model, const TrainConfig& cfg, const Corpus& train,
                                         const Corpus& validation, const Corpus& test,
                                         std::span<const double> fractions, std::uint64_t noise_seed,
                                         const TrainObserver* observer = nullptr) {
  if (fractions.empty()) throw ConfigError("noise sweep: no fractions");
  for (double f : fractions) {
    if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("noise sweep: fractions must be in [0,1]");
  }
  std::vector<NoiseRow> rows;
  for (double f : fractions) {
    const Corpus noisy = inject_noise(train, NoiseSpec{f, noise_seed});
    NoiseRow row;
    row.fraction = f;
    row.run = train_group(model, cfg, noisy, validation, observer);
    row.selected = row.run.selected;
    row.test_nll = test_nll(row.run.models[row.selected], test, cfg.eval_batch);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace mrbd
