#pragma once

// Categorical distributions over a finite vocabulary, kept in log space, and
// the exact divergences every estimator is checked against.

#include <cstddef>
#include <optional>
#include <utility>
#include <span>
#include <vector>

#include "emapg/fgen.hpp"
#include "emapg/rng.hpp"
#include "emapg/tape.hpp"

namespace emapg {

// Normalized log-probabilities of one slot.
class ProbSlot {
 public:
  ProbSlot() = default;
  static ProbSlot from_logits(std::span<const double> logits);
  // Takes log-probabilities that must already sum to one within 1e-9.
  static ProbSlot from_log_probs(std::vector<double> log_probs);
  static ProbSlot from_probs(std::span<const double> probs);

  std::size_t size() const { return log_probs_.size(); }
  double log_prob(std::size_t j) const { return log_probs_.at(j); }
  double prob(std::size_t j) const;
  std::span<const double> log_probs() const { return log_probs_; }
  std::vector<double> probs() const;

 private:
  std::vector<double> log_probs_;
};

// Indices of the k most probable tokens, most probable first; ties go to the
// smaller index.
class TopkIndexSet {
 public:
  TopkIndexSet() = default;
  TopkIndexSet(std::vector<std::size_t> indices, std::size_t vocab);

  std::span<const std::size_t> indices() const { return indices_; }
  std::size_t size() const { return indices_.size(); }
  bool contains(std::size_t j) const { return j < member_.size() && member_[j]; }

 private:
  std::vector<std::size_t> indices_;
  std::vector<bool> member_;
};

TopkIndexSet topk_indices(const ProbSlot& slot, std::size_t k);

// Current policy (logits, so it can be differentiated), frozen reference, and
// an optional sampling policy. Without one, samples come from pi_theta.
struct PolicyPair {
  std::vector<double> theta_logits;
  ProbSlot theta;
  ProbSlot ref;
  std::optional<ProbSlot> sampling;

  static PolicyPair make(std::vector<double> theta_logits, const ProbSlot& ref,
                         std::optional<ProbSlot> sampling = std::nullopt);
  std::size_t size() const { return theta.size(); }
  const ProbSlot& sampler() const { return sampling ? *sampling : theta; }
};

// Inverse-CDF sampling in index order.
std::size_t sample(const ProbSlot& slot, CounterRng& rng);

// Precomputed cumulative table for repeated draws from one slot.
class CategoricalSampler {
 public:
  explicit CategoricalSampler(const ProbSlot& slot);
  std::size_t operator()(CounterRng& rng) const;

 private:
  std::vector<double> cdf_;
};

// One slot of pi_theta put on a tape.
//
// kLogits: the logits are leaves and log pi(j) = z_j - logsumexp(z).
// kLogProbLeaves: each log pi(j) that gets used becomes its own leaf. The
// logit gradient is then recovered with the softmax Jacobian,
// dL/dz_i = c_i - pi_i sum_j c_j, in O(V + #used).
class DiffSlot {
 public:
  enum class Mode { kLogits, kLogProbLeaves };

  DiffSlot(Tape& tape, std::span<const double> logits, Mode mode = Mode::kLogits);
  // kLogProbLeaves slot over already normalized values.
  DiffSlot(Tape& tape, ProbSlot values);

  DiffScalar log_prob(std::size_t j);
  const ProbSlot& values() const { return values_; }
  std::size_t size() const { return values_.size(); }
  Mode mode() const { return mode_; }
  Tape& tape() const { return *tape_; }

  // Gradient of `out` with respect to the logits of this slot.
  std::vector<double> logit_gradient(const DiffScalar& out) const;
  // Same, reading from a precomputed adjoint vector of the tape.
  std::vector<double> logit_gradient(std::span<const double> adjoints) const;
  // kLogProbLeaves only: (token, dL/d log pi(token)) for every leaf created.
  std::vector<std::pair<std::size_t, double>> leaf_adjoints(std::span<const double> adjoints) const;

 private:
  Tape* tape_;
  Mode mode_;
  ProbSlot values_;
  std::vector<DiffScalar> leaves_;  // logits, or lazily created log-prob leaves
  std::vector<bool> made_;
  DiffScalar lse_;
};

enum class KlDirection { kReverse, kForward };

// KL(pi_theta || pi_ref) for kReverse, KL(pi_ref || pi_theta) for kForward.
double exact_kl(const ProbSlot& theta, const ProbSlot& ref, KlDirection dir);
// Gradient with respect to the logits of pi_theta:
//   reverse: pi_i (l_i - KL), l = log pi_theta - log pi_ref
//   forward: pi_i - pi_ref_i
std::vector<double> exact_kl_grad(const ProbSlot& theta, const ProbSlot& ref, KlDirection dir);

// D_f(pi_theta || pi_ref) = sum_j ref_j f(t_j), t = pi_theta / pi_ref.
double exact_divergence(const ProbSlot& theta, const ProbSlot& ref, const FGenerator& f);
// d/dz_i = pi_i (f'(t_i) - sum_j pi_j f'(t_j)).
std::vector<double> exact_divergence_grad(const ProbSlot& theta, const ProbSlot& ref,
                                          const FGenerator& f);

double total_variation(const ProbSlot& a, const ProbSlot& b);

}  // namespace emapg
