#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mrbd/losses.hpp"

namespace mrbd {
namespace {

Distribution random_dist(std::size_t n, Rng& rng) {
  std::gamma_distribution<double> g(0.5, 1.0);
  Distribution d(n);
  double s = 0;
  for (auto& v : d) s += (v = g(rng) + 1e-300);
  for (auto& v : d) v /= s;
  return d;
}

TEST(Nll, UniformOverFour) {
  EXPECT_NEAR(nll_loss({{0.25, 0.25, 0.25, 0.25}}, {2}), std::log(4.0), 1e-12);
}

TEST(Nll, CertainTargetIsZero) { EXPECT_EQ(nll_loss({{0.0, 1.0}}, {1}), 0.0); }

TEST(Nll, TwoHalfSteps) {
  EXPECT_NEAR(nll_loss({{0.5, 0.5}, {0.5, 0.5}}, {0, 1}), 2 * std::log(2.0), 1e-12);
  EXPECT_THROW(nll_loss({{0.5, 0.5}}, {0, 1}), std::invalid_argument);
}

TEST(KdKl, Values) {
  EXPECT_EQ(kd_kl_loss({{0.3, 0.7}}, {{0.3, 0.7}}), 0.0);
  EXPECT_NEAR(kd_kl_loss({{0.8, 0.2}}, {{0.5, 0.5}}), 0.8 * std::log(1.6) + 0.2 * std::log(0.4), 1e-12);
  EXPECT_NEAR(kd_kl_loss({{0.8, 0.2}}, {{0.5, 0.5}}), 0.1927, 1e-4);
  EXPECT_THROW(kd_kl_loss({{0.5, 0.5}}, {}), std::invalid_argument);
}

TEST(KdKl, NonNegativeOnRandomPairs) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const auto a = random_dist(6, rng), b = random_dist(6, rng);
    EXPECT_GE(kd_kl_loss({a}, {b}), -1e-9);
  }
}

TEST(Gate, FullProbabilitySelectsAll) {
  Rng rng(2);
  const auto m = sample_gate(6, 2, 1.0, rng);
  EXPECT_EQ(m.selected, 5u);
  for (auto b : m.bits) EXPECT_EQ(b, 1);
}

TEST(Gate, ZeroProbabilityRejected) {
  Rng rng(2);
  EXPECT_THROW(sample_gate(4, 0, 0.0, rng), std::invalid_argument);
  EXPECT_THROW(sample_gate(1, 0, 0.5, rng), std::invalid_argument);
}

TEST(Gate, ResampledMeanMatchesTruncatedBinomial) {
  Rng rng(3);
  double sum = 0;
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) {
    const auto m = sample_gate(6, 0, 0.5, rng);
    ASSERT_GE(m.selected, 1u);
    sum += static_cast<double>(m.selected);
  }
  const double mean = sum / draws;
  EXPECT_NEAR(2.5 / (1 - std::pow(0.5, 5)), 2.5806, 1e-4);
  EXPECT_GE(mean, 2.56);
  EXPECT_LE(mean, 2.60);
}

TEST(Gate, PeerIndexSkipsSelf) {
  EXPECT_EQ(GateMask::peer_index(2, 0), 0u);
  EXPECT_EQ(GateMask::peer_index(2, 1), 1u);
  EXPECT_EQ(GateMask::peer_index(2, 2), 3u);
}

TEST(Aggregate, IdenticalPeers) {
  const Distribution d{0.1, 0.6, 0.3};
  const std::vector<Distribution> peers{d, d, d};
  EXPECT_EQ(aggregate_peers(peers, GateMask{{1, 0, 1}, 2, 0.5}), d);
}

TEST(Aggregate, GatedExample) {
  const std::vector<Distribution> peers{{1, 0}, {0, 1}, {0.5, 0.5}};
  const auto out = aggregate_peers(peers, GateMask{{1, 0, 1}, 2, 0.5});
  EXPECT_EQ(out, (Distribution{0.75, 0.25}));
  EXPECT_THROW(aggregate_peers(peers, GateMask{{0, 0, 0}, 0, 0.5}), std::invalid_argument);
}

TEST(Aggregate, RandomOutputsAreDistributions) {
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    std::vector<Distribution> peers;
    for (int k = 0; k < 5; ++k) peers.push_back(random_dist(7, rng));
    const auto out = aggregate_peers(peers, sample_gate(6, 3, 0.4, rng));
    double s = 0;
    for (double v : out) {
      EXPECT_GE(v, 0.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Fuse, Values) {
  EXPECT_EQ(fuse({1, 0}, {0, 1}), (Distribution{0.5, 0.5}));
  EXPECT_EQ(fuse({0.3, 0.7}, {0.3, 0.7}), (Distribution{0.3, 0.7}));
  const auto f = fuse({0.8, 0.2}, {0.2, 0.8});
  EXPECT_NEAR(f[0], 0.5, 1e-15);
  EXPECT_NEAR(f[1], 0.5, 1e-15);
}

TEST(FusedKl, Values) {
  EXPECT_EQ(fused_kl({0.4, 0.6}, {0.4, 0.6}), 0.0);
  EXPECT_NEAR(fused_kl({0.5, 0.5}, {0.8, 0.2}), 0.5 * std::log(0.5 / 0.8) + 0.5 * std::log(0.5 / 0.2), 1e-12);
  EXPECT_NEAR(fused_kl({0.5, 0.5}, {0.8, 0.2}), 0.2231, 1e-4);
}

TEST(Js, Values) {
  EXPECT_EQ(js_loss({{0.8, 0.2}}, {{0.8, 0.2}}), 0.0);
  EXPECT_NEAR(js_loss({{0.8, 0.2}}, {{0.2, 0.8}}), 0.2231, 1e-4);
  EXPECT_THROW(js_loss({{0.8, 0.2}}, {}), std::invalid_argument);
}

TEST(Js, SymmetricAndNonNegative) {
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) {
    const auto p = random_dist(5, rng), q = random_dist(5, rng);
    const double a = js_loss({p}, {q}), b = js_loss({q}, {p});
    EXPECT_NEAR(a, b, 1e-9);
    EXPECT_GE(a, -1e-9);
    EXPECT_GE(fused_kl(fuse(p, q), p), -1e-9);
  }
}

// With the fused distribution in the first KL slot the value is not capped
// at ln 2; near-disjoint inputs exceed it.
TEST(Js, FusedFirstSlotIsUnbounded) {
  EXPECT_LE(js_step({0.8, 0.2}, {0.2, 0.8}), std::log(2.0));
  EXPECT_GT(js_step({1.0, 0.0}, {0.0, 1.0}), std::log(2.0));
}

TEST(Objective, Arithmetic) {
  const LossBreakdown one{2.0, 0.5, 1.0};
  EXPECT_EQ(total_objective(std::span(&one, 1), 1.0), 2.5);
  const LossBreakdown three{2.0, 0.5, 3.0};
  EXPECT_EQ(total_objective(std::span(&three, 1), 3.0), 6.5);
  EXPECT_EQ(three.total(), 6.5);
  const std::vector<LossBreakdown> zeros{{1.0, 0.0, 3.0}, {2.5, 0.0, 3.0}};
  EXPECT_EQ(total_objective(zeros, 3.0), 3.5);
}

TEST(Regularizers, LabelSmoothing) {
  const DistributionSeq d{{0.2, 0.5, 0.3}, {0.6, 0.1, 0.3}};
  EXPECT_EQ(label_smoothing_loss(d, {1, 0}, 0.0), nll_loss(d, {1, 0}));
  EXPECT_NEAR(label_smoothing_loss({{0.5, 0.5}}, {0}, 0.2), std::log(2.0), 1e-12);
}

TEST(Regularizers, WeightDecay) {
  ModelConfig cfg;
  cfg.vocab_size = 6;
  cfg.embed_dim = cfg.hidden_dim = 2;
  auto p = init_params<double>(cfg, 1);
  EXPECT_EQ(weight_decay_penalty(p, 0.0), 0.0);
  double sq = 0;
  for (const auto& t : p.tensors()) {
    for (double v : t.data()) sq += v * v;
  }
  EXPECT_NEAR(weight_decay_penalty(p, 0.5), 0.5 * sq, 1e-12);
}

// Graph route versus the plain-value route.
TEST(Graph, MatchesValueRoute) {
  Rng rng(6);
  for (int i = 0; i < 50; ++i) {
    const auto p = random_dist(6, rng), q = random_dist(6, rng);
    Tape<double> tape;
    auto pv = tape.constant(Tensor<double>::row(p));
    auto qv = tape.constant(Tensor<double>::row(q));
    EXPECT_NEAR(graph::js_rows(pv, qv).value().item(), js_step(p, q), 1e-12);
    EXPECT_NEAR(graph::kl_rows(pv, qv).value().item(), kl_divergence(p, q), 1e-12);
  }
}

TEST(Graph, SoftenAtUnitTemperatureIsSoftmax) {
  Tape<float> tape;
  auto x = tape.constant(Tensor<float>::row({0.3f, -1.7f, 2.2f, 0.01f}));
  EXPECT_EQ(graph::soften(x, 1.0).value(), ag::softmax_rows(x).value());
}

TEST(Graph, JsGradientMatchesFiniteDifferences) {
  Rng rng(7);
  std::normal_distribution<double> n(0, 1.5);
  Tensor<double> a({3, 5}), b({3, 5});
  for (auto& v : a.data()) v = n(rng);
  for (auto& v : b.data()) v = n(rng);
  const double err = finite_difference_check<double>(
      [](Tape<double>&, std::span<const Var<double>> x) {
        return ag::sum_all(graph::js_rows(graph::soften(x[0], 3.0), graph::soften(x[1], 3.0)));
      },
      {a, b}, 1e-5);
  EXPECT_LT(err, 1e-4);
}

TEST(Graph, IdenticalInputsGiveExactZeroGradient) {
  Rng rng(8);
  std::normal_distribution<float> n(0, 2);
  Tensor<float> x({4, 9});
  for (auto& v : x.data()) v = n(rng);
  Tape<float> tape;
  auto a = tape.leaf(x);
  auto b = tape.leaf(x);
  auto pa = graph::soften(a, 3.0), pb = graph::soften(b, 3.0);
  const Var<float> peers[] = {pb, pb};
  auto q = graph::aggregate<float>(peers, GateMask{{1, 1}, 2, 1.0});
  auto loss = ag::scale(ag::sum_all(graph::js_rows(pa, q)), 9.0f);
  EXPECT_EQ(loss.value().item(), 0.0f);
  tape.backward(loss);
  const auto ga = tape.grad(a), gb = tape.grad(b);
  for (float g : ga.data()) EXPECT_EQ(g, 0.0f);
  for (float g : gb.data()) EXPECT_EQ(g, 0.0f);
}

TEST(Graph, LabelSmoothedTokenLoss) {
  Tape<double> tape;
  auto logits = tape.constant(Tensor<double>::row({0.0, 0.0}));
  const TokenId target[] = {0};
  EXPECT_NEAR(graph::token_loss_rows(logits, target, 0.2).value().item(), std::log(2.0), 1e-12);
}

}  // namespace
}  // namespace mrbd
