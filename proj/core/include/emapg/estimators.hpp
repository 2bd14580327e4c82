#pragma once

// Sampled KL estimators on a tape.
//
// For a token p drawn from the sampling policy:
//   w = pi_ref(p) / pi_theta(p),  r = exp(lp - sg(lp)) (value 1, gradient grad lp)
//   s = clip(sg(pi_theta(p) / pi_sampling(p)))      (s = 1 without a sampling policy)
//
//   K1  = -log w                    K4 = r sg(-log w)
//   K2  = (log w)^2 / 2             K5 = sg(w) log w + log r
//   K3  = -log w + w - 1            K3pp = r K3
//
// Every estimator is multiplied by s.

#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "emapg/categorical.hpp"
#include "emapg/tape.hpp"

namespace emapg {

enum class EstimatorVariant { kK1, kK2, kK3, kK3PlusPlus, kK4, kK5, kTopkReverse, kTopkForward };

std::string to_string(EstimatorVariant v);
EstimatorVariant parse_estimator(std::string_view name);
bool is_topk(EstimatorVariant v);

// Masked tail of the Top-k estimators.
//   kCanonical: r (-log w) for reverse, sg(w) log w for forward. Unbiased in
//               value and gradient for any index set q.
//   kBaseline:  K4 for reverse, K5 for forward. Same values, but the
//               score-function baseline inside K4/K5 only averages to zero
//               over the full vocabulary, so for 0 < |q| < V the expected
//               gradient is off by +grad M_q (reverse) or -grad M_q
//               (forward), M_q = sum_{j in q} pi_theta(j).
enum class TailForm { kCanonical, kBaseline };

std::string to_string(TailForm t);
TailForm parse_tail(std::string_view name);

struct ClipRange {
  double s_min = 0.0;
  double s_max = std::numeric_limits<double>::infinity();

  static ClipRange unclipped() { return {}; }
  static ClipRange reverse_default() { return {0.0, 10.0}; }
  static ClipRange forward_default() { return {0.0, 2.5}; }
  // s_min = s_max = 1 switches the correction off.
  static ClipRange disabled() { return {1.0, 1.0}; }

  void validate() const;
  double apply(double s) const;
};

// pi_theta on a tape together with the frozen reference and optional sampler.
struct TapedPair {
  TapedPair(Tape& tape, const PolicyPair& pair, DiffSlot::Mode mode = DiffSlot::Mode::kLogits);
  TapedPair(DiffSlot theta_slot, const ProbSlot& ref_slot, const ProbSlot* sampling_slot);

  const ProbSlot& sampler() const { return sampling != nullptr ? *sampling : theta.values(); }

  DiffSlot theta;
  const ProbSlot* ref;
  const ProbSlot* sampling;
};

struct EstimatorSample {
  std::size_t token = 0;
  DiffScalar value;
  double w = 1.0;  // pi_ref(p) / pi_theta(p)
  double s = 1.0;  // clipped importance weight actually applied
  bool in_topk = false;
};

struct EstimatorSpec {
  EstimatorVariant variant = EstimatorVariant::kTopkReverse;
  std::size_t k = 8;
  ClipRange clip = ClipRange::reverse_default();
  TailForm tail = TailForm::kCanonical;
};

double importance_weight(TapedPair& pair, std::size_t p, const ClipRange& clip);

// The bare estimator (K1..K5, K3pp) given lp = log pi_theta(p) and log w.
DiffScalar estimator_expression(EstimatorVariant variant, const DiffScalar& lp,
                                const DiffScalar& log_w);

// K1..K5 and K3pp.
EstimatorSample sampled_kl(TapedPair& pair, EstimatorVariant variant, std::size_t p,
                           const ClipRange& clip = ClipRange::unclipped());

// sum_{j in q} pi_j (lp_j - lr_j) + s 1(p not in q) tail(p)
EstimatorSample topk_reverse_kl(TapedPair& pair, std::size_t p, const TopkIndexSet& q,
                                const ClipRange& clip = ClipRange::reverse_default(),
                                TailForm tail = TailForm::kCanonical);

// sum_{j in q} ref_j (lr_j - lp_j) + s 1(p not in q) tail(p)
EstimatorSample topk_forward_kl(TapedPair& pair, std::size_t p, const TopkIndexSet& q,
                                const ClipRange& clip = ClipRange::forward_default(),
                                TailForm tail = TailForm::kCanonical);

// Index set a Top-k variant uses by default: the sampling policy's top k for
// reverse KL, the reference's top k for forward KL.
TopkIndexSet default_topk_set(const TapedPair& pair, EstimatorVariant variant, std::size_t k);

EstimatorSample estimate(TapedPair& pair, const EstimatorSpec& spec, std::size_t p,
                         const TopkIndexSet* q = nullptr);

// -sg(KL_seq) * sum_n log pi_theta(y_n | h_n), KL_seq = -sum_n (lp_n - lr_n).
DiffScalar sequence_kl_estimator(std::span<const std::size_t> trajectory,
                                 std::span<TapedPair> positions);

// sum_n estimator(y_n) over a trajectory. `q_sets`, if non-empty, supplies one
// index set per position for the Top-k variants.
DiffScalar token_kl_sum(std::span<const std::size_t> trajectory, std::span<TapedPair> positions,
                        const EstimatorSpec& spec, std::span<const TopkIndexSet> q_sets = {});

}  // namespace emapg
