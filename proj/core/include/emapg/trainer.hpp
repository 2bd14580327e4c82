#pragma once

// Policy-gradient training of a tabular autoregressive policy with clipped
// group-relative advantages and a Top-k KL penalty toward an EMA anchor.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "emapg/categorical.hpp"
#include "emapg/estimators.hpp"

namespace emapg {

struct TaskSpec {
  std::string name;
  std::size_t vocab = 16;
  std::size_t length = 8;
  std::function<double(std::span<const std::size_t>)> reward;
};

// Reward = fraction of positions holding `target`.
TaskSpec target_token_task(std::size_t vocab = 16, std::size_t length = 8, std::size_t target = 0);

// Logit tables. Context-free: one slot per position. Markov: slot 0 for the
// first position, then one slot per (position, previous token).
class PolicyTable {
 public:
  PolicyTable(std::size_t vocab, std::size_t length, bool markov);

  std::size_t vocab() const { return vocab_; }
  std::size_t length() const { return length_; }
  bool markov() const { return markov_; }
  std::size_t num_slots() const { return num_slots_; }
  std::size_t slot_of(std::size_t position, std::size_t previous) const;

  std::span<double> logits(std::size_t slot);
  std::span<const double> logits(std::size_t slot) const;
  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }
  std::vector<ProbSlot> prob_slots() const;

 private:
  std::size_t vocab_;
  std::size_t length_;
  bool markov_;
  std::size_t num_slots_;
  std::vector<double> data_;
};

struct Batch {
  std::vector<std::vector<std::size_t>> sequences;  // N x L
  std::vector<std::vector<std::size_t>> slots;      // slot id per (i, n)
  std::vector<double> rewards;
  std::vector<ProbSlot> old_policy;  // pi_theta_old for every slot
};

Batch rollout(const PolicyTable& policy, const TaskSpec& task, std::size_t group_size,
              CounterRng& rng);

inline constexpr double kMinAdvantageStd = 1e-6;

struct Advantages {
  std::vector<double> values;  // R - mean; the loss divides by max(std, kMinAdvantageStd)
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (N - 1)
};

Advantages grpo_advantages(std::span<const double> rewards);

// 0 when the ratio left the trust region in the direction the advantage pushes.
int clip_mask(double advantage, double ratio, double eps_high, double eps_low);

enum class OptimizerKind { kSgd, kAdam };

struct TrainConfig {
  std::size_t group_size = 64;
  std::size_t steps = 500;
  std::size_t inner_epochs = 2;
  double lr = 0.05;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double kl_coef = 0.001;  // beta
  double ema_eta = 0.9;
  std::size_t ema_interval = 10;
  double eps_high = 0.28;
  double eps_low = 0.2;
  EstimatorSpec kl{EstimatorVariant::kTopkReverse, 8, ClipRange::reverse_default(),
                   TailForm::kCanonical};
  bool markov = false;
  double init_scale = 0.0;
  std::uint64_t seed = 0;

  void validate(const TaskSpec& task) const;
};

struct LossParts {
  DiffScalar loss;
  double objective = 0.0;  // J_clip / max(std, kMinAdvantageStd)
  double kl = 0.0;         // group-averaged token KL sum
  double clip_rate = 0.0;  // fraction of tokens with mask 0
};

// -J_clip / max(std, kMinAdvantageStd) + beta (1/N) sum_i sum_n KL_hat(i, n), built on `theta_slots`
// (one DiffSlot per policy slot).
LossParts build_loss(std::vector<DiffSlot>& theta_slots, const Batch& batch,
                     const Advantages& adv, const std::vector<ProbSlot>& anchor,
                     const std::vector<TopkIndexSet>& q_sets, const TrainConfig& cfg);

struct StepMetrics {
  std::size_t step = 0;
  double mean_reward = 0.0;
  double kl_value = 0.0;
  double lag_norm = 0.0;
  double adv_std = 0.0;
  double clip_rate = 0.0;
  double loss = 0.0;
};

class Trainer {
 public:
  Trainer(TaskSpec task, TrainConfig cfg);

  StepMetrics step();
  std::size_t steps_done() const { return step_; }
  const PolicyTable& params() const { return params_; }
  const PolicyTable& anchor() const { return anchor_; }
  const TaskSpec& task() const { return task_; }
  const TrainConfig& config() const { return cfg_; }

  // Index sets for a batch: top k of pi_old (reverse) or of the anchor (forward).
  std::vector<TopkIndexSet> index_sets(const Batch& batch) const;

 private:
  void apply_gradient(const std::vector<double>& grad);

  TaskSpec task_;
  TrainConfig cfg_;
  PolicyTable params_;
  PolicyTable anchor_;
  std::vector<double> adam_m_;
  std::vector<double> adam_v_;
  std::size_t adam_t_ = 0;
  std::size_t step_ = 0;
};

std::vector<StepMetrics> train(const TaskSpec& task, const TrainConfig& cfg);

void write_metrics_csv(std::ostream& os, std::span<const StepMetrics> metrics);

// max over slots of KL(pi_theta || pi_anchor).
double max_slot_kl(const PolicyTable& theta, const PolicyTable& anchor);

}  // namespace emapg
