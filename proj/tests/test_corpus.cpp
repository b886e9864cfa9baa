#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "mrbd/corpus.hpp"
#include "mrbd/synthetic.hpp"

namespace mrbd {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() / ("mrbd_corpus_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                         "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  std::string file(const std::string& name, const std::string& content) const {
    const auto p = (path_ / name).string();
    std::ofstream(p, std::ios::binary) << content;
    return p;
  }
  std::string path(const std::string& name) const { return (path_ / name).string(); }

 private:
  fs::path path_;
};

std::string repeat_words(std::size_t n) {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) s += (i ? " w" : "w") + std::to_string(i);
  return s;
}

TEST(LoadPairs, SingleLine) {
  TempDir dir;
  const auto c = load_pairs(dir.file("a.txt", "hello there\tgeneral kenobi here it is now\n"));
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c.pairs[0].history, (Words{"hello", "there"}));
  EXPECT_EQ(c.pairs[0].response.size(), 6u);
}

TEST(LoadPairs, ShortResponseDiscarded) {
  TempDir dir;
  const auto c = load_pairs(dir.file("a.txt", "a b\tone two three four\nx y\tone two three four five\n"));
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c.pairs[0].history, (Words{"x", "y"}));
}

TEST(LoadPairs, LongHistoryTruncated) {
  TempDir dir;
  const auto c = load_pairs(dir.file("a.txt", repeat_words(30) + "\t" + repeat_words(27) + "\n"));
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c.pairs[0].history.size(), 25u);
  EXPECT_EQ(c.pairs[0].history.back(), "w24");
  EXPECT_EQ(c.pairs[0].response.size(), 25u);
}

TEST(LoadPairs, MalformedLineReportsLineNumber) {
  TempDir dir;
  try {
    load_pairs(dir.file("a.txt", "a\tb c d e f\nno tab here\n"));
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
  }
}

TEST(LoadPairs, EmptyFileRejected) {
  TempDir dir;
  EXPECT_THROW(load_pairs(dir.file("a.txt", "")), FormatError);
  EXPECT_THROW(load_pairs(dir.path("missing.txt")), FormatError);
}

TEST(LoadPairs, WriteRoundTrip) {
  TempDir dir;
  const auto splits = synthetic::generate(6, 0.2, {50, 5, 5}, 3);
  write_pairs(dir.path("t.txt"), splits.train);
  EXPECT_EQ(load_pairs(dir.path("t.txt")), splits.train);
}

TEST(LoadPairs, UnknownTokensMapToUnk) {
  TempDir dir;
  const Vocabulary vocab(Words{"a", "b"});
  const auto c = load_pairs(dir.file("a.txt", "a zz\tb b b b q\n"), vocab);
  EXPECT_EQ(c.pairs[0].history, (TokenSeq{4, Vocabulary::kUnk}));
  EXPECT_EQ(c.pairs[0].response.back(), Vocabulary::kUnk);
}

TextCorpus corpus_of(std::initializer_list<std::pair<const char*, const char*>> lines) {
  TextCorpus c;
  for (const auto& [h, r] : lines) c.pairs.push_back({split_tokens(h), split_tokens(r)});
  return c;
}

TEST(BuildVocab, SmallCorpus) {
  const auto v = build_vocab(corpus_of({{"a a", "b"}}), 6);
  EXPECT_EQ(v.tokens(), (Words{"<pad>", "<unk>", "<s>", "</s>", "a", "b"}));
}

TEST(BuildVocab, TiesBreakLexicographically) {
  const auto v = build_vocab(corpus_of({{"c b", "c b"}}), 5);
  ASSERT_EQ(v.size(), 5u);
  EXPECT_EQ(v.token(4), "b");
}

TEST(BuildVocab, CapBelowFiveRejected) {
  EXPECT_THROW(build_vocab(corpus_of({{"a", "b"}}), 4), std::invalid_argument);
}

TEST(BuildVocab, SaveLoadRoundTrip) {
  TempDir dir;
  const auto v = build_vocab(corpus_of({{"x y z", "y z z"}}), 100);
  v.save(dir.path("v.txt"));
  EXPECT_EQ(Vocabulary::load(dir.path("v.txt")), v);
}

TEST(Partition, DisjointAtZeroOverlap) {
  const auto p = partition(12, 3, 0.0, 1);
  std::set<std::size_t> all;
  for (const auto& s : p.subsets) {
    EXPECT_EQ(s.size(), 4u);
    all.insert(s.begin(), s.end());
  }
  EXPECT_EQ(all.size(), 12u);
}

TEST(Partition, FullOverlapIsFullSet) {
  const auto p = partition(12, 3, 1.0, 1);
  for (const auto& s : p.subsets) {
    EXPECT_EQ(std::set<std::size_t>(s.begin(), s.end()).size(), 12u);
  }
}

TEST(Partition, QuarterOverlapSize) {
  const auto p = partition(12, 3, 0.25, 1);
  for (const auto& s : p.subsets) EXPECT_EQ(s.size(), 6u);
}

TEST(Partition, Errors) {
  EXPECT_THROW(partition(3, 4, 0.0, 1), std::invalid_argument);
  EXPECT_THROW(partition(10, 1, 0.0, 1), std::invalid_argument);
  EXPECT_THROW(partition(10, 2, 1.5, 1), std::invalid_argument);
}

TEST(Partition, LawsOverRandomTriples) {
  Rng rng(99);
  std::uniform_int_distribution<std::size_t> mdist(2, 300);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t m = mdist(rng);
    const std::size_t n = std::uniform_int_distribution<std::size_t>(2, std::min<std::size_t>(m, 8))(rng);
    const std::uint64_t seed = rng();
    const auto p0 = partition(m, n, 0.0, seed);
    std::vector<int> hits(m, 0);
    std::size_t lo = m, hi = 0;
    for (const auto& s : p0.subsets) {
      for (auto i : s) ++hits[i];
      lo = std::min(lo, s.size());
      hi = std::max(hi, s.size());
    }
    for (int h : hits) ASSERT_EQ(h, 1);
    ASSERT_LE(hi - lo, 1u);
    for (double r : {0.25, 0.5}) {
      const auto pr = partition(m, n, r, seed);
      for (std::size_t k = 0; k < n; ++k) {
        std::set<std::size_t> sub(pr.subsets[k].begin(), pr.subsets[k].end());
        ASSERT_EQ(sub.size(), pr.subsets[k].size());
        for (auto i : pr.shards[k]) ASSERT_TRUE(sub.count(i));
      }
    }
  }
}

TEST(Partition, DeterministicGivenSeed) {
  EXPECT_EQ(partition(50, 4, 0.3, 8).subsets, partition(50, 4, 0.3, 8).subsets);
  EXPECT_NE(partition(50, 4, 0.3, 8).subsets, partition(50, 4, 0.3, 9).subsets);
}

Corpus numbered(std::size_t m) {
  Corpus c;
  for (std::size_t i = 0; i < m; ++i) {
    c.pairs.push_back({{static_cast<TokenId>(i)}, {static_cast<TokenId>(i), 7, 7, 7, 7}});
  }
  return c;
}

std::size_t count_changed(const Corpus& a, const Corpus& b) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.pairs[i].history, b.pairs[i].history);
    n += a.pairs[i].response != b.pairs[i].response;
  }
  return n;
}

TEST(InjectNoise, ZeroFractionUnchanged) {
  const auto c = numbered(20);
  EXPECT_EQ(inject_noise(c, {0.0, 1}), c);
}

TEST(InjectNoise, FullFractionOnTwoPairs) {
  const auto c = numbered(2);
  EXPECT_EQ(count_changed(c, inject_noise(c, {1.0, 1})), 2u);
}

TEST(InjectNoise, ExactCount) {
  const auto c = numbered(100);
  EXPECT_EQ(count_changed(c, inject_noise(c, {0.25, 5})), 25u);
  for (double f : {0.1, 0.33, 0.5, 0.77}) {
    EXPECT_EQ(count_changed(c, inject_noise(c, {f, 11})), static_cast<std::size_t>(std::llround(f * 100)));
  }
}

TEST(Synthetic, SizesAndLengths) {
  const auto s = synthetic::generate(12, 0.0, {200, 40, 40}, 7);
  EXPECT_EQ(s.train.size(), 200u);
  EXPECT_EQ(s.validation.size(), 40u);
  EXPECT_EQ(s.test.size(), 40u);
  for (const auto* c : {&s.train, &s.validation, &s.test}) {
    for (const auto& p : c->pairs) {
      EXPECT_GE(p.response.size(), kMinResponseTokens);
      EXPECT_LE(p.response.size(), kMaxTurnTokens);
      EXPECT_LE(p.history.size(), kMaxTurnTokens);
    }
  }
}

TEST(Synthetic, Deterministic) {
  const auto a = synthetic::generate(12, 0.3, {200, 40, 40}, 7);
  const auto b = synthetic::generate(12, 0.3, {200, 40, 40}, 7);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
}

TEST(Synthetic, SplitsShareNoInstances) {
  const auto s = synthetic::generate(12, 0.0, {300, 60, 60}, 2);
  std::set<Words> train;
  for (const auto& p : s.train.pairs) train.insert(p.history);
  for (const auto& p : s.test.pairs) EXPECT_FALSE(train.count(p.history));
  for (const auto& p : s.validation.pairs) EXPECT_FALSE(train.count(p.history));
}

TEST(Synthetic, NoiseRateCountsTemplateMismatches) {
  const auto s = synthetic::generate(12, 0.3, {200, 40, 40}, 7);
  std::size_t off = 0;
  for (const auto& p : s.train.pairs) off += *synthetic::expected_response(p.history) != p.response;
  EXPECT_EQ(off, 60u);
  for (const auto& p : s.test.pairs) EXPECT_EQ(*synthetic::expected_response(p.history), p.response);
}

}  // namespace
}  // namespace mrbd
