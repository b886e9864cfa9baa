#pragma once

// Attention encoder-decoder over GRUs. The encoder is a stack of
// bidirectional GRU layers over the history; the decoder is a stack of
// unidirectional GRU layers whose first layer reads [embedding(y_{j-1});
// context_j], with context_j produced by additive attention from the previous
// top decoder state over the concatenated top encoder states.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mrbd/autograd.hpp"
#include "mrbd/corpus.hpp"
#include "mrbd/rng.hpp"
#include "mrbd/tensor.hpp"

namespace mrbd {

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 32;
  std::size_t hidden_dim = 32;
  std::size_t encoder_layers = 2;
  std::size_t decoder_layers = 2;
  double dropout = 0.1;
  std::size_t max_decode_len = 25;

  void validate() const {
    if (vocab_size < Vocabulary::kReserved + 1 || embed_dim == 0 || hidden_dim == 0 ||
        encoder_layers == 0 || decoder_layers == 0 || max_decode_len == 0) {
      throw std::invalid_argument("model config: all dimensions must be positive and vocab_size >= 5");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) {
      throw std::invalid_argument("model config: dropout must be in [0,1)");
    }
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Positions of named tensors inside ModelParams.
struct ParamLayout {
  struct Gru {
    std::size_t w_x, w_h, b_x, b_h;
  };
  std::size_t embedding = 0;
  std::vector<std::array<Gru, 2>> encoder;  // [layer][forward, backward]
  std::vector<std::array<std::size_t, 2>> bridge;  // [layer][W, b]
  std::size_t attn_query = 0, attn_key = 0, attn_score = 0;
  std::vector<Gru> decoder;
  std::size_t out_w = 0, out_b = 0;
};

template <class T>
class ModelParams {
 public:
  ModelParams() = default;

  explicit ModelParams(const ModelConfig& cfg) : config_(cfg) {
    cfg.validate();
    const std::size_t E = cfg.embed_dim, H = cfg.hidden_dim, V = cfg.vocab_size;
    layout_.embedding = add("embedding", {V, E}, false);
    auto gru = [&](const std::string& prefix, std::size_t in) {
      return ParamLayout::Gru{add(prefix + ".W_x", {in, 3 * H}, false), add(prefix + ".W_h", {H, 3 * H}, false),
                              add(prefix + ".b_x", {1, 3 * H}, true), add(prefix + ".b_h", {1, 3 * H}, true)};
    };
    for (std::size_t l = 0; l < cfg.encoder_layers; ++l) {
      const std::size_t in = l == 0 ? E : 2 * H;
      const std::string p = "encoder.l" + std::to_string(l);
      layout_.encoder.push_back({gru(p + ".fwd", in), gru(p + ".bwd", in)});
    }
    for (std::size_t l = 0; l < cfg.decoder_layers; ++l) {
      const std::string p = "bridge.l" + std::to_string(l);
      layout_.bridge.push_back({add(p + ".W", {2 * H, H}, false), add(p + ".b", {1, H}, true)});
    }
    layout_.attn_query = add("attention.W_query", {H, H}, false);
    layout_.attn_key = add("attention.W_key", {2 * H, H}, false);
    layout_.attn_score = add("attention.v", {H, 1}, false);
    for (std::size_t l = 0; l < cfg.decoder_layers; ++l) {
      const std::size_t in = l == 0 ? E + 2 * H : H;
      layout_.decoder.push_back(gru("decoder.l" + std::to_string(l), in));
    }
    layout_.out_w = add("output.W", {3 * H, V}, false);
    layout_.out_b = add("output.b", {1, V}, true);
  }

  const ModelConfig& config() const noexcept { return config_; }
  const ParamLayout& layout() const noexcept { return layout_; }
  std::size_t size() const noexcept { return tensors_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  bool is_bias(std::size_t i) const { return bias_[i]; }
  Tensor<T>& tensor(std::size_t i) { return tensors_[i]; }
  const Tensor<T>& tensor(std::size_t i) const { return tensors_[i]; }
  std::vector<Tensor<T>>& tensors() noexcept { return tensors_; }
  const std::vector<Tensor<T>>& tensors() const noexcept { return tensors_; }

  std::optional<std::size_t> find(const std::string& n) const {
    for (std::size_t i = 0; i < names_.size(); ++i) {
      if (names_[i] == n) return i;
    }
    return std::nullopt;
  }
  Tensor<T>& operator[](const std::string& n) { return tensors_.at(index_of(n)); }
  const Tensor<T>& operator[](const std::string& n) const { return tensors_.at(index_of(n)); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.size();
    return n;
  }

  template <class U>
  ModelParams<U> cast() const {
    ModelParams<U> out(config_);
    for (std::size_t i = 0; i < size(); ++i) out.tensor(i) = tensors_[i].template cast<U>();
    return out;
  }

  /// FNV-1a over the raw bytes of every tensor.
  std::uint64_t hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& t : tensors_) {
      const auto* bytes = reinterpret_cast<const unsigned char*>(t.data().data());
      for (std::size_t i = 0; i < t.size() * sizeof(T); ++i) {
        h ^= bytes[i];
        h *= 0x100000001b3ULL;
      }
    }
    return h;
  }

  friend bool operator==(const ModelParams& a, const ModelParams& b) {
    return a.config_ == b.config_ && a.names_ == b.names_ && a.tensors_ == b.tensors_;
  }

 private:
  std::size_t add(std::string n, Shape shape, bool bias) {
    names_.push_back(std::move(n));
    tensors_.emplace_back(std::move(shape));
    bias_.push_back(bias);
    return tensors_.size() - 1;
  }
  std::size_t index_of(const std::string& n) const {
    if (auto i = find(n)) return *i;
    throw std::out_of_range("model params: no tensor named '" + n + "'");
  }

  ModelConfig config_;
  ParamLayout layout_;
  std::vector<std::string> names_;
  std::vector<Tensor<T>> tensors_;
  std::vector<bool> bias_;
};

inline constexpr double kInitRange = 0.08;

/// Weights uniform in [-0.08, 0.08], biases zero.
template <class T = float>
ModelParams<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParams<T> p(cfg);
  Rng rng = make_rng(seed, "init");
  std::uniform_real_distribution<double> u(-kInitRange, kInitRange);
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p.is_bias(i)) continue;
    for (auto& v : p.tensor(i).data()) {
      v = std::clamp(static_cast<T>(u(rng)), static_cast<T>(-kInitRange), static_cast<T>(kInitRange));
    }
  }
  return p;
}

/// A padded, time-major view of several dialogue pairs. Decoder targets are
/// the response followed by EOS; decoder inputs are BOS followed by the
/// response.
struct Batch {
  std::size_t size = 0;
  std::vector<std::vector<TokenId>> source;             // [S][B]
  std::vector<std::vector<std::uint8_t>> source_mask;   // [S][B]
  std::vector<std::vector<TokenId>> decoder_input;      // [L][B]
  std::vector<std::vector<TokenId>> target;             // [L][B]
  std::vector<std::vector<std::uint8_t>> target_mask;   // [L][B]

  std::size_t source_len() const { return source.size(); }
  std::size_t target_len() const { return target.size(); }
  std::size_t target_tokens() const {
    std::size_t n = 0;
    for (const auto& m : target_mask) {
      for (auto v : m) n += v;
    }
    return n;
  }
};

inline void check_pair(const DialoguePair& p) {
  if (p.history.empty()) throw std::invalid_argument("model: empty history");
  if (p.response.empty()) throw std::invalid_argument("model: empty response");
}

inline Batch make_batch(std::span<const DialoguePair* const> pairs) {
  if (pairs.empty()) throw std::invalid_argument("make_batch: no pairs");
  Batch b;
  b.size = pairs.size();
  std::size_t S = 0, L = 0;
  for (const auto* p : pairs) {
    check_pair(*p);
    S = std::max(S, p->history.size());
    L = std::max(L, p->response.size() + 1);
  }
  b.source.assign(S, std::vector<TokenId>(b.size, Vocabulary::kPad));
  b.source_mask.assign(S, std::vector<std::uint8_t>(b.size, 0));
  b.decoder_input.assign(L, std::vector<TokenId>(b.size, Vocabulary::kPad));
  b.target.assign(L, std::vector<TokenId>(b.size, Vocabulary::kPad));
  b.target_mask.assign(L, std::vector<std::uint8_t>(b.size, 0));
  for (std::size_t i = 0; i < b.size; ++i) {
    const auto& p = *pairs[i];
    for (std::size_t t = 0; t < p.history.size(); ++t) {
      b.source[t][i] = p.history[t];
      b.source_mask[t][i] = 1;
    }
    const std::size_t n = p.response.size();
    for (std::size_t j = 0; j <= n; ++j) {
      b.decoder_input[j][i] = j == 0 ? Vocabulary::kBos : p.response[j - 1];
      b.target[j][i] = j == n ? Vocabulary::kEos : p.response[j];
      b.target_mask[j][i] = 1;
    }
  }
  return b;
}

inline Batch make_batch(const Corpus& corpus, std::span<const std::size_t> indices) {
  std::vector<const DialoguePair*> ptrs;
  ptrs.reserve(indices.size());
  for (auto i : indices) ptrs.push_back(&corpus.pairs.at(i));
  return make_batch(std::span<const DialoguePair* const>(ptrs));
}

inline Batch make_batch(const DialoguePair& pair) {
  const DialoguePair* p = &pair;
  return make_batch(std::span<const DialoguePair* const>(&p, 1));
}

/// Puts every parameter on the tape as a leaf.
template <class T>
std::vector<Var<T>> bind_params(Tape<T>& tape, const ModelParams<T>& params, bool requires_grad) {
  std::vector<Var<T>> out;
  out.reserve(params.size());
  for (const auto& t : params.tensors()) out.push_back(tape.leaf(t, requires_grad));
  return out;
}

template <class T>
struct DecoderOutput {
  std::vector<Var<T>> logits;     // [L] of [B,V]
  std::vector<Var<T>> attention;  // [L] of [B,S]
};

template <class T>
struct EncoderState {
  std::vector<Var<T>> outputs;  // [S] of [B,2H]
  std::vector<Var<T>> keys;     // [S] of [B,H]
  Tensor<T> score_mask;         // [B,S], 0 or a large negative
  std::vector<Var<T>> decoder_init;
};

namespace detail {

template <class T>
class Network {
 public:
  Network(const ModelConfig& cfg, const ParamLayout& layout, std::span<const Var<T>> leaves, Rng* dropout_rng)
      : cfg_(cfg), layout_(layout), p_(leaves), rng_(dropout_rng) {}

  EncoderState<T> encode(const Batch& batch) {
    const std::size_t S = batch.source_len(), B = batch.size, H = cfg_.hidden_dim;
    Tape<T>& tape = *p_[0].tape;
    std::vector<Var<T>> inputs;
    for (std::size_t t = 0; t < S; ++t) inputs.push_back(dropout(embed(batch.source[t])));
    EncoderState<T> st;
    std::vector<Var<T>> finals;
    for (std::size_t l = 0; l < cfg_.encoder_layers; ++l) {
      std::vector<Var<T>> fwd(S), bwd(S);
      Var<T> h = tape.constant(Tensor<T>::matrix(B, H));
      for (std::size_t t = 0; t < S; ++t) h = fwd[t] = gru_masked(layout_.encoder[l][0], inputs[t], h, batch.source_mask[t]);
      const Var<T> last_fwd = h;
      h = tape.constant(Tensor<T>::matrix(B, H));
      for (std::size_t t = S; t-- > 0;) h = bwd[t] = gru_masked(layout_.encoder[l][1], inputs[t], h, batch.source_mask[t]);
      finals.push_back(ag::concat({last_fwd, bwd[0]}));
      std::vector<Var<T>> next(S);
      for (std::size_t t = 0; t < S; ++t) next[t] = ag::concat({fwd[t], bwd[t]});
      if (l + 1 < cfg_.encoder_layers) {
        for (auto& v : next) v = dropout(v);
      }
      inputs = std::move(next);
    }
    st.outputs = inputs;
    for (const auto& o : st.outputs) st.keys.push_back(ag::matmul(o, p_[layout_.attn_key]));
    st.score_mask = Tensor<T>::matrix(B, S);
    for (std::size_t t = 0; t < S; ++t) {
      for (std::size_t b = 0; b < B; ++b) {
        if (!batch.source_mask[t][b]) st.score_mask(b, t) = static_cast<T>(-1e9);
      }
    }
    for (std::size_t l = 0; l < cfg_.decoder_layers; ++l) {
      const auto& [w, bias] = layout_.bridge[l];
      const Var<T> src = finals[std::min(l, finals.size() - 1)];
      st.decoder_init.push_back(ag::tanh(ag::add(ag::matmul(src, p_[w]), p_[bias])));
    }
    return st;
  }

  /// One decoder step; updates `state` in place and returns (logits, attention).
  std::pair<Var<T>, Var<T>> step(const EncoderState<T>& enc, std::vector<Var<T>>& state,
                                 std::span<const TokenId> prev_tokens) {
    Tape<T>& tape = *p_[0].tape;
    const std::size_t S = enc.outputs.size();
    const Var<T> query = ag::matmul(state.back(), p_[layout_.attn_query]);
    std::vector<Var<T>> scores;
    scores.reserve(S);
    for (std::size_t t = 0; t < S; ++t) {
      scores.push_back(ag::matmul(ag::tanh(ag::add(query, enc.keys[t])), p_[layout_.attn_score]));
    }
    Var<T> energy = ag::concat(std::span<const Var<T>>(scores));
    energy = ag::add(energy, tape.constant(enc.score_mask));
    const Var<T> weights = ag::softmax_rows(energy);
    Var<T> context = ag::mul(enc.outputs[0], ag::slice_cols(weights, 0, 1));
    for (std::size_t t = 1; t < S; ++t) {
      context = ag::add(context, ag::mul(enc.outputs[t], ag::slice_cols(weights, t, t + 1)));
    }
    Var<T> x = ag::concat({dropout(embed(prev_tokens)), context});
    for (std::size_t l = 0; l < cfg_.decoder_layers; ++l) {
      state[l] = gru(layout_.decoder[l], x, state[l]);
      x = l + 1 < cfg_.decoder_layers ? dropout(state[l]) : state[l];
    }
    const Var<T> features = dropout(ag::concat({state.back(), context}));
    const Var<T> logits = ag::add(ag::matmul(features, p_[layout_.out_w]), p_[layout_.out_b]);
    return {logits, weights};
  }

  DecoderOutput<T> teacher_forced(const Batch& batch) {
    const EncoderState<T> enc = encode(batch);
    std::vector<Var<T>> state = enc.decoder_init;
    DecoderOutput<T> out;
    for (std::size_t j = 0; j < batch.target_len(); ++j) {
      auto [logits, weights] = step(enc, state, batch.decoder_input[j]);
      out.logits.push_back(logits);
      out.attention.push_back(weights);
    }
    return out;
  }

 private:
  Var<T> embed(std::span<const TokenId> ids) {
    for (TokenId id : ids) {
      if (id < 0 || static_cast<std::size_t>(id) >= cfg_.vocab_size) {
        throw std::invalid_argument("model: token id " + std::to_string(id) + " outside vocabulary of size " +
                                    std::to_string(cfg_.vocab_size));
      }
    }
    return ag::gather_rows(p_[layout_.embedding], ids);
  }

  Var<T> dropout(Var<T> x) {
    if (!rng_ || cfg_.dropout <= 0.0) return x;
    return ag::dropout_mask_apply(x, ag::make_dropout_mask<T>(x.shape(), 1.0 - cfg_.dropout, *rng_));
  }

  Var<T> gru(const ParamLayout::Gru& g, Var<T> x, Var<T> h) {
    const std::size_t H = cfg_.hidden_dim;
    const Var<T> gx = ag::add(ag::matmul(x, p_[g.w_x]), p_[g.b_x]);
    const Var<T> gh = ag::add(ag::matmul(h, p_[g.w_h]), p_[g.b_h]);
    const Var<T> r = ag::sigmoid(ag::add(ag::slice_cols(gx, 0, H), ag::slice_cols(gh, 0, H)));
    const Var<T> z = ag::sigmoid(ag::add(ag::slice_cols(gx, H, 2 * H), ag::slice_cols(gh, H, 2 * H)));
    const Var<T> n = ag::tanh(ag::add(ag::slice_cols(gx, 2 * H, 3 * H), ag::mul(r, ag::slice_cols(gh, 2 * H, 3 * H))));
    // h' = (1 - z) * n + z * h
    return ag::add(n, ag::mul(z, ag::sub(h, n)));
  }

  Var<T> gru_masked(const ParamLayout::Gru& g, Var<T> x, Var<T> h, std::span<const std::uint8_t> keep) {
    const Var<T> next = gru(g, x, h);
    if (std::all_of(keep.begin(), keep.end(), [](auto v) { return v != 0; })) return next;
    return ag::select_rows(keep, next, h);
  }

  const ModelConfig& cfg_;
  const ParamLayout& layout_;
  std::span<const Var<T>> p_;
  Rng* rng_;
};

}  // namespace detail

/// Teacher-forced logits for a batch. Dropout is active iff `dropout_rng`
/// is non-null.
template <class T>
DecoderOutput<T> forward_logits(const ModelParams<T>& params, std::span<const Var<T>> leaves, const Batch& batch,
                                Rng* dropout_rng) {
  detail::Network<T> net(params.config(), params.layout(), leaves, dropout_rng);
  return net.teacher_forced(batch);
}

template <class T>
using StepDistributions = std::vector<std::vector<T>>;

/// Per-step softmax(logits / T) for one pair.
template <class T>
StepDistributions<T> forward_teacher_forced(const ModelParams<T>& params, const DialoguePair& pair, bool train,
                                            double temperature, std::uint64_t dropout_seed = 0) {
  if (!(temperature > 0.0)) throw std::invalid_argument("forward: temperature must be > 0");
  check_pair(pair);
  Tape<T> tape;
  const auto leaves = bind_params(tape, params, false);
  Rng rng = make_rng(dropout_seed, "dropout");
  const Batch batch = make_batch(pair);
  const auto out = forward_logits<T>(params, leaves, batch, train ? &rng : nullptr);
  StepDistributions<T> dists;
  for (const auto& l : out.logits) {
    const auto p = ag::softmax_rows(ag::scale(l, static_cast<T>(1.0 / temperature)));
    dists.emplace_back(p.value().data().begin(), p.value().data().end());
  }
  return dists;
}

/// Per-step attention weights over history positions.
template <class T>
std::vector<std::vector<T>> attention_weights(const ModelParams<T>& params, const DialoguePair& pair) {
  Tape<T> tape;
  const auto leaves = bind_params(tape, params, false);
  const auto out = forward_logits<T>(params, leaves, make_batch(pair), nullptr);
  std::vector<std::vector<T>> w;
  for (const auto& a : out.attention) w.emplace_back(a.value().data().begin(), a.value().data().end());
  return w;
}

/// Argmax decoding from BOS until EOS or `max_len` tokens; EOS is not part of
/// the returned sequences.
template <class T>
std::vector<TokenSeq> greedy_decode(const ModelParams<T>& params, std::span<const TokenSeq> histories,
                                    std::size_t max_len) {
  std::vector<DialoguePair> pairs;
  for (const auto& h : histories) pairs.push_back({h, {Vocabulary::kEos}});
  std::vector<const DialoguePair*> ptrs;
  for (const auto& p : pairs) ptrs.push_back(&p);
  const Batch batch = make_batch(std::span<const DialoguePair* const>(ptrs));
  Tape<T> tape;
  const auto leaves = bind_params(tape, params, false);
  detail::Network<T> net(params.config(), params.layout(), leaves, nullptr);
  const EncoderState<T> enc = net.encode(batch);
  std::vector<Var<T>> state = enc.decoder_init;
  const std::size_t B = batch.size;
  std::vector<TokenSeq> out(B);
  std::vector<bool> done(B, false);
  std::vector<TokenId> prev(B, Vocabulary::kBos);
  for (std::size_t j = 0; j < max_len; ++j) {
    auto [logits, weights] = net.step(enc, state, prev);
    const auto& lv = logits.value();
    bool all_done = true;
    for (std::size_t b = 0; b < B; ++b) {
      const auto row = lv.row_span(b);
      const auto best = static_cast<TokenId>(std::max_element(row.begin(), row.end()) - row.begin());
      prev[b] = best;
      if (done[b]) continue;
      if (best == Vocabulary::kEos) {
        done[b] = true;
      } else {
        out[b].push_back(best);
      }
      all_done = all_done && done[b];
    }
    if (all_done) break;
  }
  return out;
}

template <class T>
TokenSeq greedy_decode(const ModelParams<T>& params, const TokenSeq& history, std::size_t max_len) {
  if (history.empty()) throw std::invalid_argument("greedy_decode: empty history");
  return greedy_decode(params, std::span<const TokenSeq>(&history, 1), max_len).front();
}

// Checkpoint container: a text header (format version, model config, tensor
// manifest) terminated by a "payload" line, followed by every tensor as
// little-endian float32 in manifest order.

inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline std::uint32_t to_little_endian(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  }
  return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const ModelParams<float>& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(path + ": cannot open for writing");
  const auto& c = params.config();
  std::ostringstream head;
  head << std::setprecision(17);
  head << "mrbd-checkpoint " << kCheckpointVersion << '\n'
       << "vocab_size " << c.vocab_size << '\n'
       << "embed_dim " << c.embed_dim << '\n'
       << "hidden_dim " << c.hidden_dim << '\n'
       << "encoder_layers " << c.encoder_layers << '\n'
       << "decoder_layers " << c.decoder_layers << '\n'
       << "dropout " << c.dropout << '\n'
       << "max_decode_len " << c.max_decode_len << '\n'
       << "tensors " << params.size() << '\n';
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& t = params.tensor(i);
    head << params.name(i) << ' ' << t.rows() << ' ' << t.cols() << '\n';
  }
  head << "payload\n";
  out << head.str();
  for (const auto& t : params.tensors()) {
    for (float v : t.data()) {
      const std::uint32_t bits = detail::to_little_endian(std::bit_cast<std::uint32_t>(v));
      out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
  }
  if (!out) throw FormatError(path + ": write failed");
}

inline ModelParams<float> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open");
  auto expect_line = [&](const std::string& key) {
    std::string line;
    if (!std::getline(in, line)) throw FormatError(path + ": truncated header");
    std::istringstream is(line);
    std::string k, v;
    is >> k >> v;
    if (k != key) throw FormatError(path + ": expected '" + key + "', found '" + k + "'");
    return v;
  };
  if (expect_line("mrbd-checkpoint") != std::to_string(kCheckpointVersion)) {
    throw FormatError(path + ": unsupported checkpoint version");
  }
  ModelConfig c;
  try {
    c.vocab_size = std::stoul(expect_line("vocab_size"));
    c.embed_dim = std::stoul(expect_line("embed_dim"));
    c.hidden_dim = std::stoul(expect_line("hidden_dim"));
    c.encoder_layers = std::stoul(expect_line("encoder_layers"));
    c.decoder_layers = std::stoul(expect_line("decoder_layers"));
    c.dropout = std::stod(expect_line("dropout"));
    c.max_decode_len = std::stoul(expect_line("max_decode_len"));
  } catch (const std::logic_error&) {
    throw FormatError(path + ": malformed config header");
  }
  ModelParams<float> params(c);
  const std::size_t count = std::stoul(expect_line("tensors"));
  if (count != params.size()) throw FormatError(path + ": tensor count does not match config");
  for (std::size_t i = 0; i < count; ++i) {
    std::string line;
    std::getline(in, line);
    std::istringstream is(line);
    std::string name;
    std::size_t r = 0, k = 0;
    is >> name >> r >> k;
    const auto& t = params.tensor(i);
    if (name != params.name(i) || r != t.rows() || k != t.cols()) {
      throw FormatError(path + ": manifest entry '" + line + "' does not match config");
    }
  }
  std::string marker;
  std::getline(in, marker);
  if (marker != "payload") throw FormatError(path + ": missing payload marker");
  for (auto& t : params.tensors()) {
    for (auto& v : t.data()) {
      std::uint32_t bits = 0;
      if (!in.read(reinterpret_cast<char*>(&bits), sizeof bits)) throw FormatError(path + ": truncated payload");
      v = std::bit_cast<float>(detail::to_little_endian(bits));
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError(path + ": trailing bytes after payload");
  return params;
}

}  // namespace mrbd
