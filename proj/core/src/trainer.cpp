#include "emapg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

#include "emapg/errors.hpp"

namespace emapg {

TaskSpec target_token_task(std::size_t vocab, std::size_t length, std::size_t target) {
  if (vocab == 0 || length == 0) throw ArgumentError("vocab and length must be positive");
  if (target >= vocab) throw ArgumentError("target token out of range");
  TaskSpec t;
  t.name = "target_token";
  t.vocab = vocab;
  t.length = length;
  t.reward = [target, length](std::span<const std::size_t> seq) {
    const auto hits = std::count(seq.begin(), seq.end(), target);
    return static_cast<double>(hits) / static_cast<double>(length);
  };
  return t;
}

PolicyTable::PolicyTable(std::size_t vocab, std::size_t length, bool markov)
    : vocab_(vocab), length_(length), markov_(markov) {
  if (vocab == 0 || length == 0) throw ArgumentError("vocab and length must be positive");
  num_slots_ = markov ? 1 + (length - 1) * vocab : length;
  data_.assign(num_slots_ * vocab, 0.0);
}

std::size_t PolicyTable::slot_of(std::size_t position, std::size_t previous) const {
  if (position >= length_) throw ArgumentError("position out of range");
  if (!markov_) return position;
  if (position == 0) return 0;
  if (previous >= vocab_) throw ArgumentError("previous token out of range");
  return 1 + (position - 1) * vocab_ + previous;
}

std::span<double> PolicyTable::logits(std::size_t slot) {
  if (slot >= num_slots_) throw ArgumentError("slot out of range");
  return {data_.data() + slot * vocab_, vocab_};
}

std::span<const double> PolicyTable::logits(std::size_t slot) const {
  if (slot >= num_slots_) throw ArgumentError("slot out of range");
  return {data_.data() + slot * vocab_, vocab_};
}

std::vector<ProbSlot> PolicyTable::prob_slots() const {
  std::vector<ProbSlot> out;
  out.reserve(num_slots_);
  for (std::size_t s = 0; s < num_slots_; ++s) out.push_back(ProbSlot::from_logits(logits(s)));
  return out;
}

Batch rollout(const PolicyTable& policy, const TaskSpec& task, std::size_t group_size,
              CounterRng& rng) {
  if (policy.vocab() != task.vocab || policy.length() != task.length) {
    throw ArgumentError("policy shape does not match the task");
  }
  Batch b;
  b.old_policy = policy.prob_slots();
  b.sequences.resize(group_size);
  b.slots.resize(group_size);
  b.rewards.resize(group_size);
  for (std::size_t i = 0; i < group_size; ++i) {
    std::size_t prev = 0;
    for (std::size_t n = 0; n < task.length; ++n) {
      const std::size_t s = policy.slot_of(n, prev);
      const std::size_t y = sample(b.old_policy[s], rng);
      b.slots[i].push_back(s);
      b.sequences[i].push_back(y);
      prev = y;
    }
    b.rewards[i] = task.reward(b.sequences[i]);
  }
  return b;
}

Advantages grpo_advantages(std::span<const double> rewards) {
  const std::size_t n = rewards.size();
  if (n < 2) throw ArgumentError("group needs at least two rollouts");
  Advantages a;
  a.mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double r : rewards) ss += (r - a.mean) * (r - a.mean);
  a.std = std::sqrt(ss / static_cast<double>(n - 1));
  a.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) a.values[i] = rewards[i] - a.mean;
  return a;
}

int clip_mask(double advantage, double ratio, double eps_high, double eps_low) {
  if (advantage > 0.0 && ratio > 1.0 + eps_high) return 0;
  if (advantage < 0.0 && ratio < 1.0 - eps_low) return 0;
  return 1;
}

void TrainConfig::validate(const TaskSpec& task) const {
  if (group_size < 2) throw ArgumentError("group_size must be at least 2");
  if (inner_epochs == 0 || ema_interval == 0) {
    throw ArgumentError("inner_epochs and ema_interval must be positive");
  }
  if (!(lr > 0.0) || !(kl_coef >= 0.0)) throw ArgumentError("need lr > 0 and kl_coef >= 0");
  if (!(ema_eta >= 0.0 && ema_eta <= 1.0)) throw ArgumentError("ema_eta must lie in [0, 1]");
  if (!(eps_high >= 0.0) || !(eps_low >= 0.0 && eps_low <= 1.0)) {
    throw ArgumentError("bad clip epsilons");
  }
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0) ||
      !(adam_eps > 0.0)) {
    throw ArgumentError("bad Adam hyperparameters");
  }
  if (is_topk(kl.variant) && kl.k > task.vocab) throw ArgumentError("k exceeds vocabulary");
  kl.clip.validate();
  if (!task.reward) throw ArgumentError("task has no reward function");
}

LossParts build_loss(std::vector<DiffSlot>& theta_slots, const Batch& batch,
                     const Advantages& adv, const std::vector<ProbSlot>& anchor,
                     const std::vector<TopkIndexSet>& q_sets, const TrainConfig& cfg) {
  const std::size_t n_seq = batch.sequences.size();
  if (n_seq == 0 || adv.values.size() != n_seq) throw ArgumentError("batch/advantage mismatch");
  const std::size_t len = batch.sequences[0].size();
  std::vector<DiffScalar> pg_terms;
  std::vector<DiffScalar> kl_terms;
  std::size_t masked = 0;
  const double inv_std = 1.0 / std::max(adv.std, kMinAdvantageStd);
  for (std::size_t i = 0; i < n_seq; ++i) {
    const double a = adv.values[i];
    for (std::size_t n = 0; n < len; ++n) {
      const std::size_t slot = batch.slots[i][n];
      const std::size_t y = batch.sequences[i][n];
      DiffSlot& theta = theta_slots.at(slot);
      const DiffScalar lp = theta.log_prob(y);
      const double ratio = std::exp(lp.value() - batch.old_policy[slot].log_prob(y));
      if (clip_mask(a, ratio, cfg.eps_high, cfg.eps_low) == 1) {
        pg_terms.push_back((ratio * a * inv_std) * lp);
      } else {
        ++masked;
      }
      TapedPair pair(theta, anchor.at(slot), &batch.old_policy[slot]);
      const TopkIndexSet* q = q_sets.empty() ? nullptr : &q_sets.at(slot);
      kl_terms.push_back(estimate(pair, cfg.kl, y, q).value);
    }
  }
  const double norm = 1.0 / (static_cast<double>(n_seq) * static_cast<double>(len));
  const DiffScalar objective = sum(std::span<const DiffScalar>(pg_terms)) * norm;
  const DiffScalar kl = sum(std::span<const DiffScalar>(kl_terms)) / static_cast<double>(n_seq);
  LossParts out;
  out.loss = -objective + cfg.kl_coef * kl;
  out.objective = objective.value();
  out.kl = kl.value();
  out.clip_rate = static_cast<double>(masked) * norm;
  return out;
}

Trainer::Trainer(TaskSpec task, TrainConfig cfg)
    : task_(std::move(task)),
      cfg_(std::move(cfg)),
      params_(task_.vocab, task_.length, cfg_.markov),
      anchor_(task_.vocab, task_.length, cfg_.markov) {
  cfg_.validate(task_);
  if (cfg_.init_scale > 0.0) {
    CounterRng rng(cfg_.seed, 0, "train.init");
    for (double& z : params_.data()) z = cfg_.init_scale * rng.normal();
  }
  anchor_.data() = params_.data();
  adam_m_.assign(params_.data().size(), 0.0);
  adam_v_.assign(params_.data().size(), 0.0);
}

std::vector<TopkIndexSet> Trainer::index_sets(const Batch& batch) const {
  std::vector<TopkIndexSet> q;
  if (!is_topk(cfg_.kl.variant)) return q;
  const bool forward = cfg_.kl.variant == EstimatorVariant::kTopkForward;
  const std::vector<ProbSlot> anchor = forward ? anchor_.prob_slots() : std::vector<ProbSlot>{};
  for (std::size_t s = 0; s < params_.num_slots(); ++s) {
    q.push_back(topk_indices(forward ? anchor[s] : batch.old_policy[s], cfg_.kl.k));
  }
  return q;
}

void Trainer::apply_gradient(const std::vector<double>& grad) {
  auto& theta = params_.data();
  if (cfg_.optimizer == OptimizerKind::kSgd) {
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= cfg_.lr * grad[i];
    return;
  }
  ++adam_t_;
  const double c1 = 1.0 - std::pow(cfg_.adam_beta1, static_cast<double>(adam_t_));
  const double c2 = 1.0 - std::pow(cfg_.adam_beta2, static_cast<double>(adam_t_));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    adam_m_[i] = cfg_.adam_beta1 * adam_m_[i] + (1.0 - cfg_.adam_beta1) * grad[i];
    adam_v_[i] = cfg_.adam_beta2 * adam_v_[i] + (1.0 - cfg_.adam_beta2) * grad[i] * grad[i];
    theta[i] -= cfg_.lr * (adam_m_[i] / c1) / (std::sqrt(adam_v_[i] / c2) + cfg_.adam_eps);
  }
}

StepMetrics Trainer::step() {
  CounterRng rng(cfg_.seed, step_, "train.rollout");
  const Batch batch = rollout(params_, task_, cfg_.group_size, rng);
  const Advantages adv = grpo_advantages(batch.rewards);
  const std::vector<ProbSlot> anchor = anchor_.prob_slots();
  const std::vector<TopkIndexSet> q = index_sets(batch);

  StepMetrics m;
  m.step = step_;
  m.mean_reward = adv.mean;
  m.adv_std = adv.std;
  double clip_total = 0.0;
  for (std::size_t e = 0; e < cfg_.inner_epochs; ++e) {
    Tape tape;
    std::vector<DiffSlot> slots;
    slots.reserve(params_.num_slots());
    for (std::size_t s = 0; s < params_.num_slots(); ++s) slots.emplace_back(tape, params_.logits(s));
    const LossParts parts = build_loss(slots, batch, adv, anchor, q, cfg_);
    if (!std::isfinite(parts.loss.value())) {
      throw TrainingError("non-finite loss at step " + std::to_string(step_));
    }
    const std::vector<double> adj = tape.adjoints(parts.loss);
    std::vector<double> grad;
    grad.reserve(params_.data().size());
    for (const auto& slot : slots) {
      const std::vector<double> g = slot.logit_gradient(adj);
      grad.insert(grad.end(), g.begin(), g.end());
    }
    for (double g : grad) {
      if (!std::isfinite(g)) throw TrainingError("non-finite gradient at step " + std::to_string(step_));
    }
    apply_gradient(grad);
    if (e == 0) {
      m.kl_value = parts.kl;
      m.loss = parts.loss.value();
    }
    clip_total += parts.clip_rate;
  }
  m.clip_rate = clip_total / static_cast<double>(cfg_.inner_epochs);

  ++step_;
  if (step_ % cfg_.ema_interval == 0) {
    auto& a = anchor_.data();
    const auto& t = params_.data();
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = cfg_.ema_eta * a[i] + (1.0 - cfg_.ema_eta) * t[i];
  }
  double lag = 0.0;
  for (std::size_t i = 0; i < anchor_.data().size(); ++i) {
    const double d = params_.data()[i] - anchor_.data()[i];
    lag += d * d;
  }
  m.lag_norm = std::sqrt(lag);
  return m;
}

std::vector<StepMetrics> train(const TaskSpec& task, const TrainConfig& cfg) {
  Trainer trainer(task, cfg);
  std::vector<StepMetrics> out;
  out.reserve(cfg.steps);
  for (std::size_t t = 0; t < cfg.steps; ++t) out.push_back(trainer.step());
  return out;
}

void write_metrics_csv(std::ostream& os, std::span<const StepMetrics> metrics) {
  os << "step,mean_reward,kl_value,lag_norm,adv_std,clip_rate\n";
  char buf[256];
  for (const auto& m : metrics) {
    std::snprintf(buf, sizeof buf, "%zu,%.10g,%.10g,%.10g,%.10g,%.10g\n", m.step, m.mean_reward,
                  m.kl_value, m.lag_norm, m.adv_std, m.clip_rate);
    os << buf;
  }
}

double max_slot_kl(const PolicyTable& theta, const PolicyTable& anchor) {
  if (theta.num_slots() != anchor.num_slots() || theta.vocab() != anchor.vocab()) {
    throw ArgumentError("policy table shapes differ");
  }
  double worst = 0.0;
  for (std::size_t s = 0; s < theta.num_slots(); ++s) {
    worst = std::max(worst, exact_kl(ProbSlot::from_logits(theta.logits(s)),
                                     ProbSlot::from_logits(anchor.logits(s)), KlDirection::kReverse));
  }
  return worst;
}

}  // namespace emapg
