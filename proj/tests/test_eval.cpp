#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "mrbd/eval.hpp"

namespace mrbd {
namespace {

using testing::synthetic_dataset;
using testing::tiny_model;
using Text = std::vector<std::vector<std::string>>;

Text text(std::initializer_list<const char*> lines) {
  Text t;
  for (const char* l : lines) t.push_back(split_tokens(l));
  return t;
}

TEST(Dist, Examples) {
  EXPECT_DOUBLE_EQ(dist_n<std::string>(text({"a b", "a c"}), 1), 75.0);
  EXPECT_DOUBLE_EQ(dist_n<std::string>(text({"a b", "a c"}), 2), 100.0);
  EXPECT_DOUBLE_EQ(dist_n<std::string>(text({"x", "x", "x", "x"}), 1), 25.0);
  EXPECT_DOUBLE_EQ(dist_n<std::string>(text({"a b c", "d e"}), 1), 100.0);
  EXPECT_EQ(dist_n<std::string>(text({"a", "b"}), 2), 0.0);
  EXPECT_THROW(dist_n<std::string>(Text{}, 1), std::invalid_argument);
}

TEST(Ent, UniformTrainingStats) {
  const Text train = text({"w x y z"});
  const auto stats = count_ngrams<std::string>(train, 1);
  EXPECT_NEAR(ent_n<std::string>(text({"w x", "z z y"}), stats, 1), 2.0, 1e-9);
  const auto one = count_ngrams<std::string>(text({"q q q"}), 1);
  EXPECT_NEAR(ent_n<std::string>(text({"q"}), one, 1), 0.0, 1e-9);
}

TEST(Ent, RarerTokensScoreHigher) {
  const auto stats = count_ngrams<std::string>(text({"a a a a a a b", "a a c"}), 1);
  const double common = ent_n<std::string>(text({"a a a"}), stats, 1);
  const double rare = ent_n<std::string>(text({"b c b"}), stats, 1);
  EXPECT_GT(rare, common);
  EXPECT_GE(common, 0.0);
}

TEST(Dis, Examples) {
  const Text x = text({"a b c", "b c d e", "a a"});
  EXPECT_NEAR(dis_n<std::string>(x, x, 1), 0.0, 1e-9);
  EXPECT_NEAR(dis_n<std::string>(x, x, 2), 0.0, 1e-9);
  EXPECT_NEAR(dis_n<std::string>(text({"a a a a b"}), text({"a a a a a"}), 1), std::log2(1.0 / 0.8), 1e-6);
  const double unseen = dis_n<std::string>(text({"a a"}), text({"b b"}), 1);
  EXPECT_TRUE(std::isfinite(unseen));
  EXPECT_GT(unseen, 0.0);
}

TEST(PredictionEntropy, Values) {
  using D = std::vector<std::vector<double>>;
  const std::vector<D> onehot{{{1, 0, 0}}};
  EXPECT_EQ(prediction_entropy(onehot), 0.0);
  const std::vector<D> uniform{{std::vector<double>(8, 0.125)}};
  EXPECT_NEAR(prediction_entropy(uniform), std::log(8.0), 1e-12);
  const std::vector<D> opposed{{{1, 0}}, {{0, 1}}};
  EXPECT_NEAR(prediction_entropy(opposed), std::log(2.0), 1e-9);
}

TEST(PredictionDiversity, Values) {
  using D = std::vector<std::vector<double>>;
  const std::vector<D> same{{{0.2, 0.8}}, {{0.2, 0.8}}, {{0.2, 0.8}}};
  EXPECT_EQ(prediction_diversity(same), 0.0);
  const std::vector<D> opposed{{{1, 0}}, {{0, 1}}};
  EXPECT_NEAR(prediction_diversity(opposed), std::sqrt(2.0), 1e-9);
  const std::vector<D> a{{{0.1, 0.9}, {0.5, 0.5}}, {{0.7, 0.3}, {0.2, 0.8}}, {{0.3, 0.7}, {0.9, 0.1}}};
  const std::vector<D> b{a[2], a[0], a[1]};
  EXPECT_NEAR(prediction_diversity(a), prediction_diversity(b), 1e-15);
  EXPECT_THROW(prediction_diversity(std::vector<D>{a[0]}), std::invalid_argument);
}

TEST(TestNll, UniformModelIsLogV) {
  const auto d = synthetic_dataset(20, 5, 5, 3);
  auto p = init_params<float>(tiny_model(d.vocab.size(), 4), 1);
  p["output.W"].fill(0.0f);
  double steps = 0;
  for (const auto& pr : d.test.pairs) steps += static_cast<double>(pr.response.size() + 1);
  const double expect = steps / static_cast<double>(d.test.size()) * std::log(static_cast<double>(d.vocab.size()));
  EXPECT_NEAR(test_nll(p, d.test), expect, 1e-4 * expect);
  EXPECT_EQ(test_nll(p, d.test), test_nll(p, d.test));
}

TEST(Report, HasSevenColumns) {
  const auto d = synthetic_dataset(20, 5, 5, 3);
  const auto p = init_params<float>(tiny_model(d.vocab.size(), 4), 1);
  const auto r = evaluate_model(p, d.train, d.test);
  EXPECT_EQ(r.values().size(), 7u);
  EXPECT_EQ(std::size(MetricReport::kNames), 7u);
  const auto again = evaluate_model(p, d.train, d.test);
  EXPECT_EQ(r.values(), again.values());
}

class Harness : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    data_ = new testing::Dataset(synthetic_dataset(80, 16, 16, 9));
    TrainConfig c;
    c.strategy = Strategy::plain;
    c.batch_size = 8;
    c.epochs = 4;
    c.learning_rate = 0.01;
    trained_ = new ModelParams<float>(train_group(tiny_model(data_->vocab.size(), 8), c, data_->train,
                                                  data_->validation).models[0]);
  }
  static void TearDownTestSuite() {
    delete trained_;
    delete data_;
  }
  static testing::Dataset* data_;
  static ModelParams<float>* trained_;
};

testing::Dataset* Harness::data_ = nullptr;
ModelParams<float>* Harness::trained_ = nullptr;

TEST_F(Harness, PerturbZeroSigmaIsFixedPoint) {
  const auto before = *trained_;
  const double base = test_nll(*trained_, data_->test);
  const auto rows = perturb_sweep(*trained_, data_->test, PerturbSpec{{0.0, 0.01, 0.1}, 10, 4}, 2);
  ASSERT_EQ(rows.size(), 3u);
  for (double l : rows[0].losses) EXPECT_EQ(l, base);
  EXPECT_EQ(rows[0].stddev, 0.0);
  EXPECT_GT(rows[2].mean, base);
  EXPECT_EQ(*trained_, before);
}

TEST_F(Harness, PerturbIsDeterministicAcrossThreads) {
  const PerturbSpec spec{{0.05}, 4, 8};
  const auto a = perturb_sweep(*trained_, data_->test, spec, 1);
  const auto b = perturb_sweep(*trained_, data_->test, spec, 3);
  EXPECT_EQ(a[0].losses, b[0].losses);
}

TEST_F(Harness, PerturbRejectsBadSpec) {
  EXPECT_THROW(perturb_sweep(*trained_, data_->test, PerturbSpec{{0.1, -0.2}, 3, 1}), ConfigError);
  EXPECT_THROW(perturb_sweep(*trained_, data_->test, PerturbSpec{{0.1}, 0, 1}), ConfigError);
}

TEST_F(Harness, NoiseSweepZeroReproducesCleanRun) {
  TrainConfig c;
  c.strategy = Strategy::mrbd;
  c.students = 3;
  c.batch_size = 8;
  c.epochs = 1;
  c.learning_rate = 0.01;
  const ModelConfig mc = tiny_model(data_->vocab.size(), 6, 0.1);
  const double fr[] = {0.0, 0.5};
  const auto rows = noise_sweep(mc, c, data_->train, data_->validation, data_->test, fr, 3);
  ASSERT_EQ(rows.size(), 2u);
  const auto clean = train_group(mc, c, data_->train, data_->validation);
  EXPECT_EQ(rows[0].run.models, clean.models);
  EXPECT_EQ(rows[0].test_nll, test_nll(clean.models[clean.selected], data_->test));
  EXPECT_THROW(noise_sweep(mc, c, data_->train, data_->validation, data_->test, std::vector<double>{1.5}, 3),
               ConfigError);
}

TEST_F(Harness, GroupEntropyAndDiversityBounds) {
  const std::vector<ModelParams<float>> group{*trained_, init_params<float>(trained_->config(), 5)};
  const double h = group_prediction_entropy<float>(group, data_->test);
  EXPECT_GE(h, 0.0);
  EXPECT_LE(h, std::log(static_cast<double>(data_->vocab.size())) + 1e-9);
  const double dv = group_prediction_diversity<float>(group, data_->test);
  EXPECT_GT(dv, 0.0);
  EXPECT_LE(dv, std::sqrt(2.0));
  const std::vector<ModelParams<float>> same{*trained_, *trained_};
  EXPECT_EQ(group_prediction_diversity<float>(same, data_->test), 0.0);
}

}  // namespace
}  // namespace mrbd
