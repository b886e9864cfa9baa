#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mrbd/rng.hpp"

namespace mrbd {

/// Raised for unreadable or malformed pair/vocabulary files.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::size_t kMinResponseTokens = 5;
inline constexpr std::size_t kMaxTurnTokens = 25;

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;
using Words = std::vector<std::string>;

enum class Split { train, validation, test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "?";
}

template <class Seq>
struct BasicPair {
  Seq history;
  Seq response;
  friend bool operator==(const BasicPair&, const BasicPair&) = default;
};

template <class Seq>
struct BasicCorpus {
  std::vector<BasicPair<Seq>> pairs;
  Split split = Split::train;

  std::size_t size() const noexcept { return pairs.size(); }
  friend bool operator==(const BasicCorpus&, const BasicCorpus&) = default;
};

/// Word-level pairs as read from disk.
using TextPair = BasicPair<Words>;
using TextCorpus = BasicCorpus<Words>;
/// Id-level pairs consumed by the model.
using DialoguePair = BasicPair<TokenSeq>;
using Corpus = BasicCorpus<TokenSeq>;

inline Words split_tokens(const std::string& s) {
  Words out;
  std::istringstream is(s);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

inline std::string join_tokens(const Words& w) {
  std::string out;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (i) out += ' ';
    out += w[i];
  }
  return out;
}

/// Applies the length policy: responses shorter than five words are dropped,
/// turns longer than 25 words are truncated. Returns false when the pair is
/// discarded.
inline bool filter_pair(TextPair& pair) {
  if (pair.history.empty() || pair.response.size() < kMinResponseTokens) return false;
  if (pair.history.size() > kMaxTurnTokens) pair.history.resize(kMaxTurnTokens);
  if (pair.response.size() > kMaxTurnTokens) pair.response.resize(kMaxTurnTokens);
  return true;
}

/// Reads a pair file: one pair per line, history TAB response, tokens
/// separated by spaces.
inline TextCorpus load_pairs(const std::string& path, Split split = Split::train) {
  std::ifstream in(path);
  if (!in) throw FormatError(path + ": cannot open");
  TextCorpus corpus;
  corpus.split = split;
  std::string line;
  std::size_t lineno = 0, nonblank = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++nonblank;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
      throw FormatError(path + ":" + std::to_string(lineno) +
                        ": expected exactly one TAB between history and response");
    }
    TextPair pair{split_tokens(line.substr(0, tab)), split_tokens(line.substr(tab + 1))};
    if (filter_pair(pair)) corpus.pairs.push_back(std::move(pair));
  }
  if (nonblank == 0) throw FormatError(path + ": empty pair file");
  if (corpus.pairs.empty()) throw FormatError(path + ": no pairs survive length filtering");
  return corpus;
}

inline void write_pairs(const std::string& path, const TextCorpus& corpus) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(path + ": cannot open for writing");
  for (const auto& p : corpus.pairs) {
    out << join_tokens(p.history) << '\t' << join_tokens(p.response) << '\n';
  }
  if (!out) throw FormatError(path + ": write failed");
}

class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr TokenId kBos = 2;
  static constexpr TokenId kEos = 3;
  static constexpr std::size_t kReserved = 4;

  Vocabulary() : Vocabulary(Words{}) {}

  /// `tokens` excludes the reserved entries.
  explicit Vocabulary(const Words& tokens) {
    for (const char* r : {"<pad>", "<unk>", "<s>", "</s>"}) add(r);
    for (const auto& t : tokens) {
      if (index_.count(t)) throw FormatError("vocabulary: duplicate token '" + t + "'");
      add(t);
    }
  }

  std::size_t size() const noexcept { return tokens_.size(); }
  const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  TokenId id(const std::string& tok) const {
    auto it = index_.find(tok);
    return it == index_.end() ? kUnk : it->second;
  }
  bool contains(const std::string& tok) const { return index_.count(tok) != 0; }
  const Words& tokens() const noexcept { return tokens_; }

  TokenSeq encode(const Words& w) const {
    TokenSeq out;
    out.reserve(w.size());
    for (const auto& t : w) out.push_back(id(t));
    return out;
  }
  Words decode(const TokenSeq& s) const {
    Words out;
    for (TokenId t : s) out.push_back(token(t));
    return out;
  }

  /// One token per line in id order, reserved entries included.
  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError(path + ": cannot open for writing");
    for (const auto& t : tokens_) out << t << '\n';
  }
  static Vocabulary load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError(path + ": cannot open");
    Words all;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      all.push_back(line);
    }
    if (all.size() < kReserved) throw FormatError(path + ": vocabulary lacks reserved entries");
    return Vocabulary(Words(all.begin() + kReserved, all.end()));
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.tokens_ == b.tokens_;
  }

 private:
  void add(const std::string& t) {
    index_.emplace(t, static_cast<TokenId>(tokens_.size()));
    tokens_.push_back(t);
  }

  Words tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Frequency-ranked vocabulary with lexicographic tie-breaking; keeps the
/// cap - 4 most frequent words after the reserved entries.
inline Vocabulary build_vocab(const TextCorpus& corpus, std::size_t cap) {
  if (cap < Vocabulary::kReserved + 1) {
    throw std::invalid_argument("build_vocab: cap must be at least 5, got " + std::to_string(cap));
  }
  if (corpus.pairs.empty()) throw std::invalid_argument("build_vocab: empty corpus");
  std::map<std::string, std::size_t> freq;
  for (const auto& p : corpus.pairs) {
    for (const auto& t : p.history) ++freq[t];
    for (const auto& t : p.response) ++freq[t];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Words keep;
  for (const auto& [tok, n] : ranked) {
    if (keep.size() + Vocabulary::kReserved >= cap) break;
    keep.push_back(tok);
  }
  return Vocabulary(keep);
}

inline Corpus encode(const TextCorpus& text, const Vocabulary& vocab) {
  Corpus out;
  out.split = text.split;
  out.pairs.reserve(text.size());
  for (const auto& p : text.pairs) out.pairs.push_back({vocab.encode(p.history), vocab.encode(p.response)});
  return out;
}

inline Corpus load_pairs(const std::string& path, const Vocabulary& vocab,
                         Split split = Split::train) {
  return encode(load_pairs(path, split), vocab);
}

struct SubtaskPartition {
  std::size_t students = 0;
  double overlap = 0.0;
  std::uint64_t seed = 0;
  /// Disjoint shards; shard n is always contained in subset n.
  std::vector<std::vector<std::size_t>> shards;
  std::vector<std::vector<std::size_t>> subsets;
};

/// Shuffles indices [0, m) and cuts them into `n` near-equal shards, then
/// augments shard k with round(r * |rest|) indices sampled without
/// replacement from the other shards.
inline SubtaskPartition partition(std::size_t m, std::size_t n, double r, std::uint64_t seed) {
  if (n < 2) throw std::invalid_argument("partition: need at least 2 students");
  if (!(r >= 0.0 && r <= 1.0)) throw std::invalid_argument("partition: overlap ratio must be in [0,1]");
  if (n > m) {
    throw std::invalid_argument("partition: " + std::to_string(n) + " students exceed " +
                                std::to_string(m) + " pairs");
  }
  SubtaskPartition out{n, r, seed, {}, {}};
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_rng(seed, "partition");
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> owner(m);
  std::size_t begin = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t len = m / n + (k < m % n ? 1 : 0);
    out.shards.emplace_back(order.begin() + begin, order.begin() + begin + len);
    for (std::size_t i = begin; i < begin + len; ++i) owner[order[i]] = k;
    begin += len;
  }
  for (std::size_t k = 0; k < n; ++k) {
    std::vector<std::size_t> rest;
    for (std::size_t i : order) {
      if (owner[i] != k) rest.push_back(i);
    }
    const auto extra = static_cast<std::size_t>(std::llround(r * static_cast<double>(rest.size())));
    Rng pick = make_rng(seed, stream_name("overlap", k));
    std::shuffle(rest.begin(), rest.end(), pick);
    std::vector<std::size_t> subset = out.shards[k];
    subset.insert(subset.end(), rest.begin(), rest.begin() + extra);
    out.subsets.push_back(std::move(subset));
  }
  return out;
}

template <class Seq>
SubtaskPartition partition(const BasicCorpus<Seq>& corpus, std::size_t n, double r,
                           std::uint64_t seed) {
  return partition(corpus.size(), n, r, seed);
}

struct NoiseSpec {
  double fraction = 0.0;
  std::uint64_t seed = 0;
};

/// Replaces the responses of round(fraction * M) uniformly chosen pairs with
/// the response of another uniformly chosen pair. Histories are untouched.
template <class Seq>
BasicCorpus<Seq> inject_noise(const BasicCorpus<Seq>& corpus, const NoiseSpec& spec) {
  if (!(spec.fraction >= 0.0 && spec.fraction <= 1.0)) {
    throw std::invalid_argument("inject_noise: fraction must be in [0,1]");
  }
  BasicCorpus<Seq> out = corpus;
  const std::size_t m = corpus.size();
  const auto count = static_cast<std::size_t>(std::llround(spec.fraction * static_cast<double>(m)));
  if (count == 0 || m < 2) return out;
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_rng(spec.seed, "noise");
  std::shuffle(order.begin(), order.end(), rng);
  std::uniform_int_distribution<std::size_t> other(0, m - 2);
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t i = order[k];
    // A few redraws avoid donors whose response happens to equal the original.
    std::size_t j = 0;
    for (int attempt = 0; attempt < 16; ++attempt) {
      j = other(rng);
      if (j >= i) ++j;
      if (corpus.pairs[j].response != corpus.pairs[i].response) break;
    }
    out.pairs[i].response = corpus.pairs[j].response;
  }
  return out;
}

}  // namespace mrbd
