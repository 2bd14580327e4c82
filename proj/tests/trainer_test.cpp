#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "emapg/errors.hpp"
#include "emapg/estimators.hpp"
#include "emapg/trainer.hpp"

namespace emapg {
namespace {

TaskSpec constant_task(std::size_t v, std::size_t l) {
  TaskSpec t;
  t.name = "constant";
  t.vocab = v;
  t.length = l;
  t.reward = [](std::span<const std::size_t>) { return 1.0; };
  return t;
}

TrainConfig small_config() {
  TrainConfig c;
  c.group_size = 8;
  c.steps = 5;
  c.seed = 3;
  c.kl.k = 2;
  return c;
}

std::vector<double> per_slot_logit_grad(std::vector<DiffSlot>& slots, const DiffScalar& out, Tape& tape) {
  const auto adj = tape.adjoints(out);
  std::vector<double> g;
  for (const auto& s : slots) {
    const auto gs = s.logit_gradient(adj);
    g.insert(g.end(), gs.begin(), gs.end());
  }
  return g;
}

TEST(Rollout, OneHotPolicyRepeats) {
  PolicyTable p(5, 4, false);
  for (std::size_t s = 0; s < p.num_slots(); ++s) p.logits(s)[3] = 1000.0;
  CounterRng rng(0, 0, "test.rollout");
  const Batch b = rollout(p, target_token_task(5, 4, 3), 16, rng);
  for (const auto& seq : b.sequences) EXPECT_EQ(seq, b.sequences[0]);
  EXPECT_EQ(b.sequences[0], (std::vector<std::size_t>{3, 3, 3, 3}));
  EXPECT_DOUBLE_EQ(b.rewards[0], 1.0);
}

TEST(Rollout, SeedDeterminism) {
  PolicyTable p(6, 3, true);
  const TaskSpec task = target_token_task(6, 3, 0);
  CounterRng a(9, 2, "train.rollout");
  CounterRng b(9, 2, "train.rollout");
  const Batch x = rollout(p, task, 10, a);
  const Batch y = rollout(p, task, 10, b);
  EXPECT_EQ(x.sequences, y.sequences);
  EXPECT_EQ(x.slots, y.slots);
  EXPECT_EQ(x.rewards, y.rewards);
}

TEST(Rollout, UniformPolicyMeanReward) {
  PolicyTable p(16, 8, false);
  CounterRng rng(1, 0, "test.uniform");
  const Batch b = rollout(p, target_token_task(16, 8, 0), 256, rng);
  const double mean = std::accumulate(b.rewards.begin(), b.rewards.end(), 0.0) / 256.0;
  EXPECT_NEAR(mean, 1.0 / 16.0, 0.02);
}

TEST(PolicyTable, MarkovSlots) {
  PolicyTable p(4, 3, true);
  EXPECT_EQ(p.num_slots(), 1u + 2u * 4u);
  EXPECT_EQ(p.slot_of(0, 3), 0u);
  EXPECT_EQ(p.slot_of(1, 2), 3u);
  EXPECT_EQ(p.slot_of(2, 0), 5u);
  EXPECT_THROW(p.slot_of(3, 0), ArgumentError);
}

TEST(Advantages, Examples) {
  const Advantages eq = grpo_advantages(std::vector{0.3, 0.3, 0.3});
  for (double a : eq.values) EXPECT_EQ(a, 0.0);
  const Advantages two = grpo_advantages(std::vector{1.0, 0.0});
  EXPECT_DOUBLE_EQ(two.values[0], 0.5);
  EXPECT_DOUBLE_EQ(two.values[1], -0.5);
  EXPECT_NEAR(two.std, std::sqrt(0.5), 1e-15);
  const Advantages r = grpo_advantages(std::vector{0.1, 0.7, 0.25, 0.9, 0.0});
  EXPECT_NEAR(std::accumulate(r.values.begin(), r.values.end(), 0.0), 0.0, 1e-12);
  EXPECT_THROW(grpo_advantages(std::vector{1.0}), ArgumentError);
}

TEST(ClipMask, Cases) {
  EXPECT_EQ(clip_mask(1.0, 1.3, 0.28, 0.2), 0);
  EXPECT_EQ(clip_mask(-1.0, 0.75, 0.28, 0.2), 0);
  EXPECT_EQ(clip_mask(1.0, 1.0, 0.28, 0.2), 1);
  EXPECT_EQ(clip_mask(0.0, 5.0, 0.28, 0.2), 1);
  EXPECT_EQ(clip_mask(-1.0, 1.3, 0.28, 0.2), 1);
  EXPECT_EQ(clip_mask(1.0, 0.5, 0.28, 0.2), 1);
}

TEST(Trainer, StationaryAtEquality) {
  TrainConfig c = small_config();
  c.optimizer = OptimizerKind::kSgd;
  c.lr = 1.0;
  c.kl.variant = EstimatorVariant::kK3;
  Trainer t(constant_task(5, 3), c);
  const auto before = t.params().data();
  t.step();
  EXPECT_EQ(t.params().data(), before);
}

// Top-k per-sample KL gradients cancel only in expectation at equality.
TEST(Trainer, TopkStationaryOnAverage) {
  TrainConfig c = small_config();
  c.optimizer = OptimizerKind::kSgd;
  c.lr = 1.0;
  c.group_size = 4096;
  c.kl_coef = 1.0;
  c.inner_epochs = 1;
  Trainer t(constant_task(5, 1), c);
  t.step();
  for (double x : t.params().data()) EXPECT_NEAR(x, 0.0, 0.05);
}

TEST(Trainer, FrozenAnchorWhenEtaIsOne) {
  TrainConfig c = small_config();
  c.ema_eta = 1.0;
  c.ema_interval = 2;
  c.init_scale = 0.5;
  Trainer t(target_token_task(5, 3, 1), c);
  const auto init = t.params().data();
  for (int i = 0; i < 7; ++i) t.step();
  EXPECT_EQ(t.anchor().data(), init);
  EXPECT_NE(t.params().data(), init);
}

TEST(Trainer, EmaScheduleZeroBased) {
  TrainConfig c = small_config();
  c.ema_interval = 3;
  Trainer t(target_token_task(5, 3, 1), c);
  for (std::size_t step = 0; step < 9; ++step) {
    const auto before = t.anchor().data();
    t.step();
    const bool updated = t.anchor().data() != before;
    EXPECT_EQ(updated, (step + 1) % 3 == 0) << "step " << step;
  }
}

TEST(Trainer, ZeroStepsLeavesParameters) {
  TrainConfig c = small_config();
  c.steps = 0;
  EXPECT_TRUE(train(target_token_task(5, 3, 1), c).empty());
}

TEST(Trainer, PlainPolicyGradientWithoutKl) {
  TrainConfig c = small_config();
  c.kl_coef = 0.0;
  c.inner_epochs = 1;
  c.optimizer = OptimizerKind::kSgd;
  c.lr = 0.3;
  c.init_scale = 0.4;
  const TaskSpec task = target_token_task(5, 3, 2);
  Trainer t(task, c);
  const PolicyTable before = t.params();

  CounterRng rng(c.seed, 0, "train.rollout");
  const Batch b = rollout(before, task, c.group_size, rng);
  const Advantages adv = grpo_advantages(b.rewards);
  std::vector<double> expect = before.data();
  const double scale = c.lr / (static_cast<double>(c.group_size * task.length) * std::max(adv.std, 1e-6));
  for (std::size_t i = 0; i < c.group_size; ++i) {
    for (std::size_t n = 0; n < task.length; ++n) {
      const std::size_t s = b.slots[i][n];
      const std::size_t y = b.sequences[i][n];
      for (std::size_t j = 0; j < task.vocab; ++j) {
        const double dlp = (j == y ? 1.0 : 0.0) - b.old_policy[s].prob(j);
        expect[s * task.vocab + j] += scale * adv.values[i] * dlp;
      }
    }
  }
  t.step();
  for (std::size_t k = 0; k < expect.size(); ++k) EXPECT_NEAR(t.params().data()[k], expect[k], 1e-14);
}

// Fixed-anchor GRPO with K3: loss written out by hand on the first batch.
TEST(Trainer, GrpoK3LossExpression) {
  TrainConfig c = small_config();
  c.ema_eta = 1.0;
  c.kl.variant = EstimatorVariant::kK3;
  c.kl.clip = ClipRange::reverse_default();
  c.kl_coef = 0.04;
  c.init_scale = 0.7;
  c.group_size = 6;
  const TaskSpec task = target_token_task(4, 3, 0);
  PolicyTable theta(4, 3, false);
  CounterRng init(1, 0, "test.grpo.init");
  for (double& z : theta.data()) z = init.normal();
  PolicyTable anchor(4, 3, false);
  for (double& z : anchor.data()) z = init.normal();

  CounterRng rng(2, 0, "test.grpo.batch");
  const Batch b = rollout(theta, task, c.group_size, rng);
  const Advantages adv = grpo_advantages(b.rewards);
  const auto anchor_slots = anchor.prob_slots();

  Tape tape;
  std::vector<DiffSlot> slots;
  for (std::size_t s = 0; s < theta.num_slots(); ++s) slots.emplace_back(tape, theta.logits(s));
  const LossParts parts = build_loss(slots, b, adv, anchor_slots, {}, c);
  const auto got = per_slot_logit_grad(slots, parts.loss, tape);

  const double n = static_cast<double>(c.group_size);
  const double l = static_cast<double>(task.length);
  const double sd = std::max(adv.std, 1e-6);
  double loss = 0.0;
  std::vector<double> grad(theta.data().size(), 0.0);
  for (std::size_t i = 0; i < c.group_size; ++i) {
    for (std::size_t t = 0; t < task.length; ++t) {
      const std::size_t s = b.slots[i][t];
      const std::size_t y = b.sequences[i][t];
      const ProbSlot& pi = b.old_policy[s];
      const double lw = anchor_slots[s].log_prob(y) - pi.log_prob(y);
      const double w = std::exp(lw);
      loss += -adv.values[i] / sd * pi.log_prob(y) / (n * l);
      loss += c.kl_coef * (-lw + w - 1.0) / n;
      // d/dlp: -A/(std N L) + beta (1 - w) / N
      const double coef = -adv.values[i] / (sd * n * l) + c.kl_coef * (1.0 - w) / n;
      for (std::size_t j = 0; j < task.vocab; ++j) {
        grad[s * task.vocab + j] += coef * ((j == y ? 1.0 : 0.0) - pi.prob(j));
      }
    }
  }
  EXPECT_NEAR(parts.loss.value(), loss, 1e-13);
  for (std::size_t k = 0; k < grad.size(); ++k) EXPECT_NEAR(got[k], grad[k], 1e-13);
  EXPECT_EQ(parts.clip_rate, 0.0);
}

TEST(Trainer, KlTermIsTokenKlSum) {
  TrainConfig c = small_config();
  c.kl_coef = 0.5;
  const TaskSpec task = constant_task(6, 3);
  PolicyTable theta(6, 3, false), anchor(6, 3, false);
  CounterRng init(4, 0, "test.kl.init");
  for (double& z : theta.data()) z = init.normal();
  for (double& z : anchor.data()) z = init.normal();
  CounterRng rng(5, 0, "test.kl.batch");
  const Batch b = rollout(theta, task, c.group_size, rng);
  const Advantages adv = grpo_advantages(b.rewards);
  const auto anchor_slots = anchor.prob_slots();
  c.kl.k = 4;
  std::vector<TopkIndexSet> q;
  for (const auto& s : b.old_policy) q.push_back(topk_indices(s, 4));

  Tape t1;
  std::vector<DiffSlot> s1;
  for (std::size_t s = 0; s < theta.num_slots(); ++s) s1.emplace_back(t1, theta.logits(s));
  const LossParts parts = build_loss(s1, b, adv, anchor_slots, q, c);
  const auto got = per_slot_logit_grad(s1, parts.loss, t1);

  Tape t2;
  std::vector<DiffSlot> s2;
  for (std::size_t s = 0; s < theta.num_slots(); ++s) s2.emplace_back(t2, theta.logits(s));
  std::vector<DiffScalar> sums;
  for (std::size_t i = 0; i < c.group_size; ++i) {
    std::vector<TapedPair> pos;
    std::vector<TopkIndexSet> qs;
    for (std::size_t n = 0; n < task.length; ++n) {
      const std::size_t s = b.slots[i][n];
      pos.emplace_back(s2[s], anchor_slots[s], &b.old_policy[s]);
      qs.push_back(q[s]);
    }
    sums.push_back(token_kl_sum(b.sequences[i], pos, c.kl, qs));
  }
  const DiffScalar kl = sum(std::span<const DiffScalar>(sums)) * (c.kl_coef / static_cast<double>(c.group_size));
  const auto want = per_slot_logit_grad(s2, kl, t2);
  EXPECT_NEAR(parts.loss.value(), kl.value(), 1e-14);
  for (std::size_t k = 0; k < want.size(); ++k) EXPECT_NEAR(got[k], want[k], 1e-14);
}

TEST(Trainer, LagStaysWithinEmaBound) {
  TrainConfig c = small_config();
  c.group_size = 32;
  c.optimizer = OptimizerKind::kSgd;
  c.inner_epochs = 1;
  c.lr = 0.5;
  c.ema_interval = 1;
  c.ema_eta = 0.9;
  c.kl_coef = 0.01;
  Trainer t(target_token_task(8, 4, 0), c);
  double max_move = 0.0;
  for (int step = 0; step < 100; ++step) {
    const auto before = t.params().data();
    const StepMetrics m = t.step();
    double move = 0.0;
    for (std::size_t k = 0; k < before.size(); ++k) {
      const double d = t.params().data()[k] - before[k];
      move += d * d;
    }
    max_move = std::max(max_move, std::sqrt(move));
    EXPECT_LE(m.lag_norm, 2.0 * max_move / (1.0 - c.ema_eta) + 1e-12) << "step " << step;
  }
}

TEST(Trainer, MetricsAreDeterministic) {
  TrainConfig c = small_config();
  c.steps = 6;
  const TaskSpec task = target_token_task(5, 3, 1);
  std::ostringstream a, b;
  write_metrics_csv(a, train(task, c));
  write_metrics_csv(b, train(task, c));
  EXPECT_EQ(a.str(), b.str());
  EXPECT_EQ(a.str().substr(0, a.str().find('\n')), "step,mean_reward,kl_value,lag_norm,adv_std,clip_rate");
}

TEST(Trainer, ConfigValidation) {
  TrainConfig c = small_config();
  c.group_size = 1;
  EXPECT_THROW(Trainer(target_token_task(5, 3, 1), c), ArgumentError);
  c = small_config();
  c.kl.k = 9;
  EXPECT_THROW(Trainer(target_token_task(5, 3, 1), c), ArgumentError);
  c = small_config();
  c.ema_eta = 1.5;
  EXPECT_THROW(Trainer(target_token_task(5, 3, 1), c), ArgumentError);
}

}  // namespace
}  // namespace emapg
