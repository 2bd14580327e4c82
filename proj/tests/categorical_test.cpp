#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "emapg/categorical.hpp"
#include "emapg/errors.hpp"
#include "emapg/fgen.hpp"
#include "emapg/rng.hpp"
#include "emapg/tape.hpp"

namespace emapg {
namespace {

ProbSlot probs(std::vector<double> p) { return ProbSlot::from_probs(p); }

std::vector<double> random_logits(CounterRng& rng, std::size_t v) {
  std::vector<double> z(v);
  for (double& x : z) x = rng.normal();
  return z;
}

TEST(ProbSlot, UniformLogits) {
  const std::vector<double> z(4, 0.7);
  const ProbSlot s = ProbSlot::from_logits(z);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(s.log_prob(j), -std::log(4.0), 1e-15);
}

TEST(ProbSlot, TwoTokenLogits) {
  const std::vector<double> z = {0.0, std::log(3.0)};
  const ProbSlot s = ProbSlot::from_logits(z);
  EXPECT_NEAR(s.prob(0), 0.25, 1e-15);
  EXPECT_NEAR(s.prob(1), 0.75, 1e-15);
}

TEST(ProbSlot, RejectsUnnormalized) {
  EXPECT_THROW(ProbSlot::from_log_probs({std::log(0.5), std::log(0.6)}), DomainError);
  const std::vector<double> neg = {-0.1, 1.1};
  EXPECT_THROW(ProbSlot::from_probs(neg), DomainError);
  EXPECT_THROW(ProbSlot::from_logits(std::vector<double>{}), ArgumentError);
}

TEST(Sampling, OneHotAlwaysReturnsItsIndex) {
  const ProbSlot s = probs({0.0, 0.0, 1.0, 0.0});
  CounterRng rng(0, 0, "test.onehot");
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(sample(s, rng), 2u);
}

TEST(Sampling, Deterministic) {
  const ProbSlot s = probs({0.1, 0.2, 0.3, 0.4});
  CounterRng a(5, 1, "test.det");
  CounterRng b(5, 1, "test.det");
  for (int i = 0; i < 200; ++i) EXPECT_EQ(sample(s, a), sample(s, b));
}

TEST(Sampling, EmpiricalFrequency) {
  const ProbSlot s = probs({0.25, 0.75});
  CounterRng rng(0, 0, "test.freq");
  const CategoricalSampler table(s);
  CounterRng rng2(0, 0, "test.freq");
  int ones = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const std::size_t x = sample(s, rng);
    EXPECT_EQ(x, table(rng2));
    ones += static_cast<int>(x);
  }
  EXPECT_NEAR(static_cast<double>(ones) / n, 0.75, 0.01);
}

TEST(Topk, Ordering) {
  const TopkIndexSet q = topk_indices(probs({0.1, 0.6, 0.3}), 2);
  ASSERT_EQ(q.size(), 2u);
  EXPECT_EQ(q.indices()[0], 1u);
  EXPECT_EQ(q.indices()[1], 2u);
  EXPECT_FALSE(q.contains(0));
}

TEST(Topk, EmptyAndTies) {
  EXPECT_EQ(topk_indices(probs({0.5, 0.5}), 0).size(), 0u);
  const TopkIndexSet q = topk_indices(probs({0.25, 0.25, 0.25, 0.25}), 2);
  EXPECT_TRUE(q.contains(0));
  EXPECT_TRUE(q.contains(1));
  EXPECT_THROW(topk_indices(probs({0.5, 0.5}), 3), ArgumentError);
}

TEST(ExactKl, HandComputedPair) {
  const ProbSlot p = probs({0.75, 0.25});
  const ProbSlot q = probs({0.5, 0.5});
  EXPECT_NEAR(exact_kl(p, q, KlDirection::kReverse), 0.75 * std::log(1.5) + 0.25 * std::log(0.5), 1e-15);
  EXPECT_NEAR(exact_kl(p, q, KlDirection::kReverse), 0.130812, 1e-6);
  EXPECT_NEAR(exact_kl(p, q, KlDirection::kForward), 0.143841, 1e-6);
}

TEST(ExactKl, ZeroAtEquality) {
  CounterRng rng(2, 0, "test.kl0");
  const ProbSlot p = ProbSlot::from_logits(random_logits(rng, 6));
  for (auto dir : {KlDirection::kReverse, KlDirection::kForward}) {
    EXPECT_NEAR(exact_kl(p, p, dir), 0.0, 1e-15);
    for (double g : exact_kl_grad(p, p, dir)) EXPECT_NEAR(g, 0.0, 1e-15);
  }
  for (const auto& f : FGenerator::catalog()) EXPECT_NEAR(exact_divergence(p, p, f), 0.0, 1e-14);
}

TEST(ExactKl, GradientMatchesFiniteDifferences) {
  CounterRng rng(4, 0, "test.klgrad");
  for (int trial = 0; trial < 10; ++trial) {
    auto z = random_logits(rng, 5);
    const ProbSlot ref = ProbSlot::from_logits(random_logits(rng, 5));
    for (auto dir : {KlDirection::kReverse, KlDirection::kForward}) {
      const auto g = exact_kl_grad(ProbSlot::from_logits(z), ref, dir);
      for (std::size_t i = 0; i < z.size(); ++i) {
        const double h = 1e-6;
        auto up = z, dn = z;
        up[i] += h;
        dn[i] -= h;
        const double fd =
            (exact_kl(ProbSlot::from_logits(up), ref, dir) - exact_kl(ProbSlot::from_logits(dn), ref, dir)) /
            (2 * h);
        EXPECT_NEAR(g[i], fd, 1e-8);
      }
    }
  }
}

TEST(ExactDivergence, KlGeneratorsAgreeWithKl) {
  CounterRng rng(6, 0, "test.fkl");
  const ProbSlot p = ProbSlot::from_logits(random_logits(rng, 7));
  const ProbSlot q = ProbSlot::from_logits(random_logits(rng, 7));
  // D_f(p || q) with f = t log t is KL(p || q); with f = -log t it is KL(q || p).
  EXPECT_NEAR(exact_divergence(p, q, FGenerator::reverse_kl()), exact_kl(p, q, KlDirection::kReverse), 1e-14);
  EXPECT_NEAR(exact_divergence(p, q, FGenerator::forward_kl()), exact_kl(p, q, KlDirection::kForward), 1e-14);
  const auto g1 = exact_divergence_grad(p, q, FGenerator::reverse_kl());
  const auto g2 = exact_kl_grad(p, q, KlDirection::kReverse);
  for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_NEAR(g1[i], g2[i], 1e-14);
  EXPECT_NEAR(exact_divergence(p, q, FGenerator::total_variation()), total_variation(p, q), 1e-15);
}

TEST(DiffSlot, LeafModeMatchesLogitMode) {
  CounterRng rng(8, 0, "test.leaf");
  const auto z = random_logits(rng, 6);
  Tape t1, t2;
  DiffSlot a(t1, z, DiffSlot::Mode::kLogits);
  DiffSlot b(t2, z, DiffSlot::Mode::kLogProbLeaves);
  const DiffScalar fa = a.log_prob(1) * 0.3 + exp(a.log_prob(4)) - a.log_prob(1) * a.log_prob(2);
  const DiffScalar fb = b.log_prob(1) * 0.3 + exp(b.log_prob(4)) - b.log_prob(1) * b.log_prob(2);
  EXPECT_DOUBLE_EQ(fa.value(), fb.value());
  const auto ga = a.logit_gradient(fa);
  const auto gb = b.logit_gradient(fb);
  for (std::size_t i = 0; i < ga.size(); ++i) EXPECT_NEAR(ga[i], gb[i], 1e-14);
  EXPECT_EQ(b.leaf_adjoints(t2.adjoints(fb)).size(), 3u);
}

}  // namespace
}  // namespace emapg
