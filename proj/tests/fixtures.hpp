#pragma once

#include "mrbd/corpus.hpp"
#include "mrbd/model.hpp"
#include "mrbd/synthetic.hpp"

namespace mrbd::testing {

struct Dataset {
  Vocabulary vocab;
  Corpus train, validation, test;
};

inline Dataset synthetic_dataset(std::size_t train, std::size_t validation, std::size_t test, std::uint64_t seed,
                                 std::size_t templates = 8, double noise = 0.0) {
  const auto splits = synthetic::generate(templates, noise, {train, validation, test}, seed);
  Dataset d;
  d.vocab = build_vocab(splits.train, 512);
  d.train = encode(splits.train, d.vocab);
  d.validation = encode(splits.validation, d.vocab);
  d.test = encode(splits.test, d.vocab);
  return d;
}

inline ModelConfig tiny_model(std::size_t vocab, std::size_t dim = 8, double dropout = 0.0) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.embed_dim = dim;
  c.hidden_dim = dim;
  c.dropout = dropout;
  c.max_decode_len = 12;
  return c;
}

}  // namespace mrbd::testing
