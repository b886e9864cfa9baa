#pragma once

// Training strategies over a group of seq2seq students:
//   plain  one model, NLL only
//   kd     teacher pre-trained with NLL, then a fresh student on NLL + T^2 KL(teacher || student)
//   ct     two pre-trained students, independent batches, iterative mutual imitation
//   dml    N students on shared batches, iterative imitation of the mean of the others
//   mrbd   N students on their own subtasks, gated peer aggregation, bidirectional
//          JS distillation and one simultaneous update per step

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "mrbd/corpus.hpp"
#include "mrbd/losses.hpp"
#include "mrbd/model.hpp"
#include "mrbd/optim.hpp"
#include "mrbd/rng.hpp"

namespace mrbd {

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct TrainingDiverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Strategy { plain, kd, ct, dml, mrbd };

inline std::string_view strategy_name(Strategy s) {
  switch (s) {
    case Strategy::plain: return "plain";
    case Strategy::kd: return "kd";
    case Strategy::ct: return "ct";
    case Strategy::dml: return "dml";
    case Strategy::mrbd: return "mrbd";
  }
  return "?";
}

inline Strategy parse_strategy(std::string_view s) {
  for (Strategy v : {Strategy::plain, Strategy::kd, Strategy::ct, Strategy::dml, Strategy::mrbd}) {
    if (strategy_name(v) == s) return v;
  }
  throw ConfigError("unknown strategy '" + std::string(s) + "' (expected plain, kd, ct, dml or mrbd)");
}

struct TrainConfig {
  Strategy strategy = Strategy::mrbd;
  std::size_t students = 0;  // 0 picks the strategy default
  double imitation = 0.5;
  double temperature = 3.0;
  double learning_rate = 1e-3;
  double clip_norm = 5.0;
  std::size_t batch_size = 64;
  std::size_t epochs = 10;
  std::size_t pretrain_epochs = 3;
  std::size_t patience = 5;
  double overlap = 0.0;
  double label_smoothing = 0.0;
  double weight_decay = 0.0;
  bool bidirectional = true;
  bool shared_init = false;
  std::size_t threads = 2;
  std::size_t max_steps = 0;  // per phase; 0 means no limit
  std::size_t eval_batch = 64;
  std::uint64_t seed = 1;

  std::size_t group_size() const {
    if (students != 0) return students;
    switch (strategy) {
      case Strategy::plain: return 1;
      case Strategy::kd:
      case Strategy::ct:
      case Strategy::dml: return 2;
      case Strategy::mrbd: return 6;
    }
    return 1;
  }

  bool pretrains() const { return strategy == Strategy::kd || strategy == Strategy::ct; }

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("train config: " + m); };
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be > 0");
    if (!(clip_norm > 0.0)) fail("clip_norm must be > 0");
    if (!(temperature > 0.0) || !std::isfinite(temperature)) fail("temperature must be > 0");
    if (batch_size == 0) fail("batch_size must be >= 1");
    if (eval_batch == 0) fail("eval_batch must be >= 1");
    if (epochs == 0) fail("epochs must be >= 1");
    if (patience == 0) fail("patience must be >= 1");
    if (threads == 0) fail("threads must be >= 1");
    if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) fail("label_smoothing must be in [0,1)");
    if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) fail("weight_decay must be >= 0");
    if (pretrains() && pretrain_epochs == 0) fail("pretrain_epochs must be >= 1 for kd and ct");
    const std::size_t n = group_size();
    switch (strategy) {
      case Strategy::plain:
        if (n != 1) fail("plain trains exactly 1 model");
        break;
      case Strategy::kd:
        if (n != 2) fail("kd uses exactly 2 models (teacher, student)");
        break;
      case Strategy::ct:
        if (n != 2) fail("ct needs exactly 2 students");
        break;
      case Strategy::dml:
        if (n < 2) fail("dml needs at least 2 students");
        break;
      case Strategy::mrbd:
        if (n < 2) fail("mrbd needs at least 2 students");
        if (!(imitation > 0.0 && imitation <= 1.0)) fail("imitation probability must be in (0,1]");
        if (!(overlap >= 0.0 && overlap <= 1.0)) fail("overlap must be in [0,1]");
        break;
    }
  }
};

struct LogRow {
  std::string phase;
  std::size_t epoch = 0;
  std::size_t student = 0;
  double train_nll = 0.0;
  double train_distill = 0.0;
  double val_nll = 0.0;
};

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

/// Per-(epoch, model) losses. Wall time is kept in `epoch_seconds` and written
/// to its own file so the loss log stays reproducible byte for byte.
struct TrainingLog {
  std::vector<LogRow> rows;
  std::vector<std::pair<std::string, double>> epoch_seconds;

  std::string csv() const {
    std::string s = "phase,epoch,student,train_nll,train_distill,val_nll\n";
    for (const auto& r : rows) {
      s += r.phase + "," + std::to_string(r.epoch) + "," + std::to_string(r.student) + "," +
           format_double(r.train_nll) + "," + format_double(r.train_distill) + "," + format_double(r.val_nll) + "\n";
    }
    return s;
  }

  std::string timing_csv() const {
    std::string s = "phase,epoch,seconds\n";
    std::size_t e = 0;
    std::string last;
    for (const auto& [phase, sec] : epoch_seconds) {
      e = phase == last ? e + 1 : 1;
      last = phase;
      s += phase + "," + std::to_string(e) + "," + format_double(sec) + "\n";
    }
    return s;
  }
};

inline constexpr std::uint64_t kNoVersion = std::numeric_limits<std::uint64_t>::max();

/// What happened in one optimisation step. Hash fields are filled only when
/// the observer asks for audits.
struct StepInfo {
  std::string_view phase;
  std::size_t epoch = 0;
  std::size_t step = 0;  // 1-based within the phase
  std::vector<std::vector<std::size_t>> batches;  // train-corpus indices per model
  std::vector<double> nll;                        // batch-mean NLL per model (NaN if idle)
  std::vector<double> distill;                    // batch-mean distillation term, unscaled
  std::vector<GateMask> gates;                    // mrbd only
  std::vector<std::uint64_t> versions;            // update count per model after the step
  // target_versions[n][m]: version of model m whose predictions model n imitated
  std::vector<std::vector<std::uint64_t>> target_versions;
  std::vector<std::uint64_t> start_hashes;
  std::vector<std::vector<std::uint64_t>> read_hashes;  // [term][model], mrbd
  std::vector<std::uint64_t> end_hashes;
  const std::vector<ModelParams<float>>* models = nullptr;
};

struct TrainObserver {
  std::function<void(const StepInfo&)> on_step;
  std::function<void(std::string_view phase, const std::vector<ModelParams<float>>&)> on_phase_end;
  bool audit = false;
};

struct TrainResult {
  std::vector<ModelParams<float>> models;
  std::vector<std::string> roles;
  std::size_t selected = 0;
  std::vector<double> val_nll;  // per model, at the restored snapshot
  TrainingLog log;
  std::vector<std::uint64_t> supervised;  // NLL-supervised examples per model, main phase
  std::size_t pretrain_steps = 0;
  std::size_t steps = 0;
  std::size_t epochs_run = 0;
  std::vector<std::vector<std::size_t>> subsets;  // mrbd subtask assignment
};

/// Index of the lowest validation NLL; ties go to the lowest index.
inline std::size_t argmin_first(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("select: no candidates");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] < v[best]) best = i;
  }
  return best;
}

inline std::pair<std::size_t, double> select_best_student(std::span<const ModelParams<float>> models,
                                                          const Corpus& validation, std::size_t batch = 64) {
  std::vector<double> v;
  for (const auto& m : models) v.push_back(corpus_nll(m, validation, batch));
  const std::size_t i = argmin_first(v);
  return {i, v[i]};
}

namespace detail {

template <class Fn>
void parallel_for(std::size_t count, std::size_t threads, Fn&& fn) {
  const std::size_t workers = std::min(threads, count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(count);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < count;) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

inline std::size_t steps_for(std::size_t n, std::size_t batch) { return (n + batch - 1) / batch; }

/// Shuffles `items` and cuts them into `steps` contiguous batches whose sizes
/// differ by at most one, so every item is seen exactly once.
inline std::vector<std::vector<std::size_t>> epoch_batches(std::vector<std::size_t> items, std::size_t steps,
                                                           Rng rng) {
  std::shuffle(items.begin(), items.end(), rng);
  std::vector<std::vector<std::size_t>> out(steps);
  const std::size_t base = items.size() / steps, extra = items.size() % steps;
  std::size_t at = 0;
  for (std::size_t s = 0; s < steps; ++s) {
    const std::size_t len = base + (s < extra ? 1 : 0);
    out[s].assign(items.begin() + static_cast<std::ptrdiff_t>(at),
                  items.begin() + static_cast<std::ptrdiff_t>(at + len));
    at += len;
  }
  return out;
}

inline std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

template <class T>
Gradients<T> collect(const Tape<T>& tape, std::span<const Var<T>> leaves) {
  Gradients<T> g;
  g.reserve(leaves.size());
  for (const auto& v : leaves) g.push_back(tape.grad(v));
  return g;
}

inline void check_finite(double v, std::string_view what, std::string_view phase, std::size_t epoch,
                         std::size_t step, std::size_t model) {
  if (!std::isfinite(v)) {
    throw TrainingDiverged(std::string(what) + " is not finite (phase " + std::string(phase) + ", epoch " +
                           std::to_string(epoch) + ", step " + std::to_string(step) + ", model " +
                           std::to_string(model) + ")");
  }
}

struct TermOutput {
  double nll = 0.0;
  double distill = 0.0;
  std::vector<std::optional<Gradients<float>>> grads;  // per model
  std::vector<std::uint64_t> read_hashes;
};

struct Trainer {
  const ModelConfig& model;
  const TrainConfig& cfg;
  const Corpus& train;
  const Corpus& validation;
  const TrainObserver* observer;

  std::vector<ModelParams<float>> params;
  std::vector<AdamState<float>> adam;
  std::vector<std::uint64_t> versions;
  TrainResult result;

  Trainer(const ModelConfig& m, const TrainConfig& c, const Corpus& tr, const Corpus& va, const TrainObserver* obs)
      : model(m), cfg(c), train(tr), validation(va), observer(obs) {
    const std::size_t n = cfg.group_size();
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint64_t s = cfg.shared_init ? stream_seed(cfg.seed, "init") : stream_seed(cfg.seed, stream_name("init", i));
      params.push_back(init_params<float>(model, s));
      adam.emplace_back(params.back().tensors());
    }
    versions.assign(n, 0);
    result.supervised.assign(n, 0);
  }

  bool auditing() const { return observer && observer->audit; }

  Rng dropout_rng(std::string_view phase, std::size_t step, std::size_t term, std::size_t m) const {
    return make_rng(cfg.seed, stream_name(std::string("dropout-") + std::string(phase), step, term, m));
  }

  void update(std::size_t m, Gradients<float>& g) {
    clip_gradients(g, cfg.clip_norm);
    adam_update(params[m].tensors(), g, adam[m], cfg.learning_rate, cfg.weight_decay);
    ++versions[m];
  }

  /// NLL on `batch` plus T^2 KL(target || student) where the target is the
  /// equal mean of the teachers' detached, eval-mode predictions.
  TermOutput imitation_term(std::size_t m, std::span<const std::size_t> teachers, const Batch& batch, Rng* drop) {
    Tape<float> tape;
    const auto leaves = bind_params(tape, params[m], true);
    const auto out = forward_logits<float>(params[m], leaves, batch, drop);
    std::vector<DecoderOutput<float>> touts;
    for (auto t : teachers) {
      const auto tl = bind_params(tape, params[t], false);
      touts.push_back(forward_logits<float>(params[t], tl, batch, nullptr));
    }
    std::vector<const DecoderOutput<float>*> tp;
    for (const auto& o : touts) tp.push_back(&o);
    const auto loss = graph::imitation_loss<float>(out, tp, batch, cfg.temperature, cfg.label_smoothing);
    return finish_term(tape, loss, {m}, {leaves});
  }

  /// Term n of the group objective, evaluated on student n's batch. Peers
  /// forward on the same batch and receive gradients through the
  /// distillation loss unless it is unidirectional.
  TermOutput mrbd_term(std::size_t n, const Batch& batch, const GateMask& gate, std::size_t step) {
    const std::size_t N = params.size();
    Tape<float> tape;
    std::vector<std::size_t> members{n};
    for (std::size_t k = 0; k < gate.bits.size(); ++k) {
      if (gate.bits[k]) members.push_back(GateMask::peer_index(n, k));
    }
    const bool train_mode = model.dropout > 0.0;
    std::vector<std::vector<Var<float>>> leaves;
    std::vector<DecoderOutput<float>> outs;
    for (auto m : members) {
      leaves.push_back(bind_params(tape, params[m], m == n || cfg.bidirectional));
      Rng rng = dropout_rng("train", step, n, m);
      outs.push_back(forward_logits<float>(params[m], leaves.back(), batch, train_mode ? &rng : nullptr));
    }
    std::vector<const DecoderOutput<float>*> peers;
    for (std::size_t i = 1; i < outs.size(); ++i) peers.push_back(&outs[i]);
    const auto loss = graph::mrbd_term_loss<float>(outs[0], peers, batch, cfg.temperature, cfg.label_smoothing,
                                                   cfg.bidirectional);
    std::vector<std::size_t> trained{n};
    std::vector<std::vector<Var<float>>> trained_leaves{leaves[0]};
    if (cfg.bidirectional) {
      for (std::size_t i = 1; i < members.size(); ++i) {
        trained.push_back(members[i]);
        trained_leaves.push_back(leaves[i]);
      }
    }
    TermOutput r = finish_term(tape, loss, trained, trained_leaves);
    if (auditing()) {
      r.read_hashes.assign(N, 0);
      for (auto m : members) r.read_hashes[m] = params[m].hash();
    }
    return r;
  }

  TermOutput finish_term(Tape<float>& tape, const graph::TermLoss<float>& loss, const std::vector<std::size_t>& who,
                         const std::vector<std::vector<Var<float>>>& leaves) {
    TermOutput r;
    r.nll = loss.nll.value().item();
    r.distill = loss.distill.value().item();
    if (!std::isfinite(loss.total.value().item())) {
      r.nll = std::numeric_limits<double>::quiet_NaN();
      return r;
    }
    tape.backward(loss.total);
    r.grads.resize(params.size());
    for (std::size_t i = 0; i < who.size(); ++i) r.grads[who[i]] = collect<float>(tape, leaves[i]);
    return r;
  }

  StepInfo new_step(std::string_view phase, std::size_t epoch, std::size_t step) const {
    StepInfo info;
    info.phase = phase;
    info.epoch = epoch;
    info.step = step;
    const std::size_t N = params.size();
    info.batches.resize(N);
    info.nll.assign(N, std::numeric_limits<double>::quiet_NaN());
    info.distill.assign(N, 0.0);
    info.target_versions.assign(N, std::vector<std::uint64_t>(N, kNoVersion));
    if (auditing()) {
      for (const auto& p : params) info.start_hashes.push_back(p.hash());
    }
    return info;
  }

  void finish_step(StepInfo& info) {
    info.versions = versions;
    if (auditing()) {
      for (const auto& p : params) info.end_hashes.push_back(p.hash());
    }
    info.models = &params;
    if (observer && observer->on_step) observer->on_step(info);
  }

  struct EpochTotals {
    std::vector<double> nll, distill;
    std::vector<std::size_t> count;
    bool stop = false;
  };

  /// Runs up to `epochs` epochs with validation-based early stopping over the
  /// tracked models, then restores each tracked model to its best snapshot.
  template <class EpochFn>
  void run_phase(std::string_view phase, std::span<const std::size_t> tracked, std::size_t epochs, EpochFn&& epoch_fn) {
    std::vector<double> best(params.size(), std::numeric_limits<double>::infinity());
    std::vector<std::optional<ModelParams<float>>> snapshot(params.size());
    std::size_t stale = 0;
    for (std::size_t e = 1; e <= epochs; ++e) {
      const auto t0 = std::chrono::steady_clock::now();
      EpochTotals totals{std::vector<double>(params.size(), 0.0), std::vector<double>(params.size(), 0.0),
                         std::vector<std::size_t>(params.size(), 0), false};
      epoch_fn(e, totals);
      std::vector<double> val(params.size(), 0.0);
      parallel_for(tracked.size(), cfg.threads,
                   [&](std::size_t i) { val[tracked[i]] = corpus_nll(params[tracked[i]], validation, cfg.eval_batch); });
      bool improved = false;
      for (auto m : tracked) {
        check_finite(val[m], "validation NLL", phase, e, 0, m);
        const double c = static_cast<double>(std::max<std::size_t>(totals.count[m], 1));
        result.log.rows.push_back({std::string(phase), e, m, totals.nll[m] / c, totals.distill[m] / c, val[m]});
        if (val[m] < best[m]) {
          best[m] = val[m];
          snapshot[m] = params[m];
          improved = true;
        }
      }
      result.log.epoch_seconds.emplace_back(
          std::string(phase), std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
      if (phase == "train") result.epochs_run = e;
      stale = improved ? 0 : stale + 1;
      if (totals.stop || stale >= cfg.patience) break;
    }
    for (auto m : tracked) {
      if (snapshot[m]) params[m] = std::move(*snapshot[m]);
    }
    if (observer && observer->on_phase_end) observer->on_phase_end(phase, params);
  }

  bool step_limit(std::size_t step) const { return cfg.max_steps != 0 && step >= cfg.max_steps; }

  /// Independent NLL-only training of each model in `who` on the full set.
  void supervised_phase(std::string_view phase, std::span<const std::size_t> who, std::size_t epochs, bool count) {
    const std::size_t S = steps_for(train.size(), cfg.batch_size);
    std::size_t step = 0;
    run_phase(phase, who, epochs, [&](std::size_t e, EpochTotals& tot) {
      std::vector<std::vector<std::vector<std::size_t>>> plan(params.size());
      for (auto m : who) {
        plan[m] = epoch_batches(iota_indices(train.size()), S, make_rng(cfg.seed, stream_name(std::string("batch-") + std::string(phase), m, e)));
      }
      for (std::size_t s = 0; s < S && !tot.stop; ++s) {
        ++step;
        StepInfo info = new_step(phase, e, step);
        for (auto m : who) {
          const auto& idx = plan[m][s];
          if (idx.empty()) continue;
          const Batch batch = make_batch(train, idx);
          Rng rng = dropout_rng(phase, step, m, m);
          TermOutput r = imitation_term(m, {}, batch, model.dropout > 0.0 ? &rng : nullptr);
          check_finite(r.nll, "training loss", phase, e, step, m);
          update(m, *r.grads[m]);
          info.batches[m] = idx;
          info.nll[m] = r.nll;
          tot.nll[m] += r.nll * static_cast<double>(idx.size());
          tot.count[m] += idx.size();
          if (count) result.supervised[m] += idx.size();
        }
        finish_step(info);
        tot.stop = step_limit(step);
      }
    });
    if (phase == "pretrain") result.pretrain_steps = step;
    if (phase == "train") result.steps = step;
  }

  void run_plain() {
    const std::size_t who[] = {0};
    supervised_phase("train", who, cfg.epochs, true);
    result.roles = {"model"};
  }

  void run_kd() {
    const std::size_t teacher[] = {0};
    supervised_phase("pretrain", teacher, cfg.pretrain_epochs, false);
    const std::size_t S = steps_for(train.size(), cfg.batch_size);
    const std::size_t who[] = {1};
    std::size_t step = 0;
    run_phase("train", who, cfg.epochs, [&](std::size_t e, EpochTotals& tot) {
      const auto plan = epoch_batches(iota_indices(train.size()), S, make_rng(cfg.seed, stream_name("batch-train", 1, e)));
      for (std::size_t s = 0; s < S && !tot.stop; ++s) {
        ++step;
        StepInfo info = new_step("train", e, step);
        const Batch batch = make_batch(train, plan[s]);
        Rng rng = dropout_rng("train", step, 1, 1);
        const std::size_t t[] = {0};
        info.target_versions[1][0] = versions[0];
        TermOutput r = imitation_term(1, t, batch, model.dropout > 0.0 ? &rng : nullptr);
        check_finite(r.nll, "training loss", "train", e, step, 1);
        update(1, *r.grads[1]);
        info.batches[1] = plan[s];
        info.nll[1] = r.nll;
        info.distill[1] = r.distill;
        tot.nll[1] += r.nll * static_cast<double>(plan[s].size());
        tot.distill[1] += r.distill * static_cast<double>(plan[s].size());
        tot.count[1] += plan[s].size();
        result.supervised[1] += plan[s].size();
        finish_step(info);
        tot.stop = step_limit(step);
      }
    });
    result.steps = step;
    result.roles = {"teacher", "student"};
  }

  /// ct and dml: students update one after another; each imitation target is
  /// recomputed from the peers' current parameters.
  void run_iterative(bool shared_batches) {
    const std::size_t N = params.size();
    const auto everyone = iota_indices(N);
    if (cfg.strategy == Strategy::ct) supervised_phase("pretrain", everyone, cfg.pretrain_epochs, false);
    const std::size_t S = steps_for(train.size(), cfg.batch_size);
    std::size_t step = 0;
    run_phase("train", everyone, cfg.epochs, [&](std::size_t e, EpochTotals& tot) {
      std::vector<std::vector<std::vector<std::size_t>>> plan(N);
      for (std::size_t n = 0; n < N; ++n) {
        const std::string stream = shared_batches ? stream_name("batch-shared", e) : stream_name("batch-train", n, e);
        plan[n] = epoch_batches(iota_indices(train.size()), S, make_rng(cfg.seed, stream));
      }
      for (std::size_t s = 0; s < S && !tot.stop; ++s) {
        ++step;
        StepInfo info = new_step("train", e, step);
        for (std::size_t n = 0; n < N; ++n) {
          const auto& idx = plan[n][s];
          const Batch batch = make_batch(train, idx);
          std::vector<std::size_t> peers;
          for (std::size_t m = 0; m < N; ++m) {
            if (m == n) continue;
            peers.push_back(m);
            info.target_versions[n][m] = versions[m];
          }
          Rng rng = dropout_rng("train", step, n, n);
          TermOutput r = imitation_term(n, peers, batch, model.dropout > 0.0 ? &rng : nullptr);
          check_finite(r.nll, "training loss", "train", e, step, n);
          update(n, *r.grads[n]);
          info.batches[n] = idx;
          info.nll[n] = r.nll;
          info.distill[n] = r.distill;
          tot.nll[n] += r.nll * static_cast<double>(idx.size());
          tot.distill[n] += r.distill * static_cast<double>(idx.size());
          tot.count[n] += idx.size();
          result.supervised[n] += idx.size();
        }
        finish_step(info);
        tot.stop = step_limit(step);
      }
    });
    result.steps = step;
    for (std::size_t n = 0; n < N; ++n) result.roles.push_back("student" + std::to_string(n));
  }

  void run_mrbd() {
    const std::size_t N = params.size();
    const auto part = partition(train.size(), N, cfg.overlap, cfg.seed);
    result.subsets = part.subsets;
    std::size_t S = 0;
    for (const auto& sub : part.subsets) S = std::max(S, steps_for(sub.size(), cfg.batch_size));
    std::vector<Rng> gate_rng;
    for (std::size_t n = 0; n < N; ++n) gate_rng.push_back(make_rng(cfg.seed, stream_name("gate", n)));
    const auto everyone = iota_indices(N);
    std::size_t step = 0;
    run_phase("train", everyone, cfg.epochs, [&](std::size_t e, EpochTotals& tot) {
      std::vector<std::vector<std::vector<std::size_t>>> plan(N);
      for (std::size_t n = 0; n < N; ++n) {
        plan[n] = epoch_batches(part.subsets[n], S, make_rng(cfg.seed, stream_name("batch-train", n, e)));
      }
      for (std::size_t s = 0; s < S && !tot.stop; ++s) {
        ++step;
        StepInfo info = new_step("train", e, step);
        std::vector<GateMask> gates;
        for (std::size_t n = 0; n < N; ++n) gates.push_back(sample_gate(N, n, cfg.imitation, gate_rng[n]));
        std::vector<std::optional<Batch>> batches(N);
        for (std::size_t n = 0; n < N; ++n) {
          if (!plan[n][s].empty()) batches[n] = make_batch(train, plan[n][s]);
        }
        // every term reads the parameters as they were at the start of the step
        std::vector<TermOutput> terms(N);
        parallel_for(N, cfg.threads, [&](std::size_t n) {
          if (batches[n]) terms[n] = mrbd_term(n, *batches[n], gates[n], step);
        });
        for (std::size_t n = 0; n < N; ++n) {
          if (!batches[n]) continue;
          check_finite(terms[n].nll, "training loss", "train", e, step, n);
          for (std::size_t m = 0; m < N; ++m) {
            if (n == m || gates[n].bits[n < m ? m - 1 : m]) info.target_versions[n][m] = versions[m];
          }
        }
        // barrier: reduce per-model gradients in fixed term order, then one update each
        std::vector<Gradients<float>> grads;
        for (std::size_t m = 0; m < N; ++m) grads.push_back(zeros_like(params[m].tensors()));
        for (std::size_t n = 0; n < N; ++n) {
          for (std::size_t m = 0; m < N; ++m) {
            if (batches[n] && terms[n].grads[m]) accumulate(grads[m], *terms[n].grads[m]);
          }
        }
        if (auditing()) {
          for (auto& t : terms) info.read_hashes.push_back(t.read_hashes);
        }
        for (std::size_t m = 0; m < N; ++m) update(m, grads[m]);
        for (std::size_t n = 0; n < N; ++n) {
          const auto& idx = plan[n][s];
          info.batches[n] = idx;
          if (idx.empty()) continue;
          info.nll[n] = terms[n].nll;
          info.distill[n] = terms[n].distill;
          tot.nll[n] += terms[n].nll * static_cast<double>(idx.size());
          tot.distill[n] += terms[n].distill * static_cast<double>(idx.size());
          tot.count[n] += idx.size();
          result.supervised[n] += idx.size();
        }
        info.gates = std::move(gates);
        finish_step(info);
        tot.stop = step_limit(step);
      }
    });
    result.steps = step;
    for (std::size_t n = 0; n < N; ++n) result.roles.push_back("student" + std::to_string(n));
  }
};

}  // namespace detail

/// Trains the configured strategy from scratch and returns every model,
/// each restored to its best validation snapshot, plus the selected index.
inline TrainResult train_group(const ModelConfig& model, const TrainConfig& cfg, const Corpus& train,
                               const Corpus& validation, const TrainObserver* observer = nullptr) {
  model.validate();
  cfg.validate();
  if (train.pairs.empty()) throw ConfigError("train: empty training corpus");
  if (validation.pairs.empty()) throw ConfigError("train: empty validation corpus");
  if (cfg.strategy == Strategy::mrbd && cfg.group_size() > train.size()) {
    throw ConfigError("train: more students than training pairs");
  }
  detail::Trainer t(model, cfg, train, validation, observer);
  switch (cfg.strategy) {
    case Strategy::plain: t.run_plain(); break;
    case Strategy::kd: t.run_kd(); break;
    case Strategy::ct: t.run_iterative(false); break;
    case Strategy::dml: t.run_iterative(true); break;
    case Strategy::mrbd: t.run_mrbd(); break;
  }
  TrainResult r = std::move(t.result);
  r.models = std::move(t.params);
  for (const auto& m : r.models) r.val_nll.push_back(corpus_nll(m, validation, cfg.eval_batch));
  if (cfg.strategy == Strategy::kd) {
    r.selected = 1;
  } else {
    r.selected = argmin_first(r.val_nll);
  }
  return r;
}

}  // namespace mrbd
