#include "emapg/estimators.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "emapg/errors.hpp"

namespace emapg {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return out;
}

struct TokenTerms {
  DiffScalar lp;
  DiffScalar log_w;
  double lr;
};

TokenTerms token_terms(TapedPair& pair, std::size_t p) {
  if (p >= pair.theta.size()) throw ArgumentError("token index out of range");
  TokenTerms t;
  t.lp = pair.theta.log_prob(p);
  t.lr = pair.ref->log_prob(p);
  t.log_w = t.lr - t.lp;
  return t;
}

DiffScalar score_ratio(const DiffScalar& lp) { return exp(lp - stop_gradient(lp)); }

DiffScalar apply_weight(const TapedPair& pair, const DiffScalar& x, double s) {
  return pair.sampling == nullptr ? x : s * x;
}

}  // namespace

std::string to_string(EstimatorVariant v) {
  switch (v) {
    case EstimatorVariant::kK1: return "k1";
    case EstimatorVariant::kK2: return "k2";
    case EstimatorVariant::kK3: return "k3";
    case EstimatorVariant::kK3PlusPlus: return "k3pp";
    case EstimatorVariant::kK4: return "k4";
    case EstimatorVariant::kK5: return "k5";
    case EstimatorVariant::kTopkReverse: return "topk_reverse";
    case EstimatorVariant::kTopkForward: return "topk_forward";
  }
  return "?";
}

EstimatorVariant parse_estimator(std::string_view name) {
  const std::string n = lower(name);
  if (n == "k1") return EstimatorVariant::kK1;
  if (n == "k2") return EstimatorVariant::kK2;
  if (n == "k3") return EstimatorVariant::kK3;
  if (n == "k3pp" || n == "k3++") return EstimatorVariant::kK3PlusPlus;
  if (n == "k4") return EstimatorVariant::kK4;
  if (n == "k5") return EstimatorVariant::kK5;
  if (n == "topk_reverse") return EstimatorVariant::kTopkReverse;
  if (n == "topk_forward") return EstimatorVariant::kTopkForward;
  throw ArgumentError("unknown estimator '" + std::string(name) + "'");
}

bool is_topk(EstimatorVariant v) {
  return v == EstimatorVariant::kTopkReverse || v == EstimatorVariant::kTopkForward;
}

std::string to_string(TailForm t) { return t == TailForm::kCanonical ? "canonical" : "baseline"; }

TailForm parse_tail(std::string_view name) {
  const std::string n = lower(name);
  if (n == "canonical") return TailForm::kCanonical;
  if (n == "baseline") return TailForm::kBaseline;
  throw ArgumentError("unknown tail form '" + std::string(name) + "'");
}

void ClipRange::validate() const {
  if (std::isnan(s_min) || std::isnan(s_max) || s_min < 0.0 || s_min > s_max) {
    throw ArgumentError("clip range needs 0 <= s_min <= s_max");
  }
}

double ClipRange::apply(double s) const { return std::clamp(s, s_min, s_max); }

TapedPair::TapedPair(Tape& tape, const PolicyPair& pair, DiffSlot::Mode mode)
    : theta(tape, pair.theta_logits, mode),
      ref(&pair.ref),
      sampling(pair.sampling ? &*pair.sampling : nullptr) {}

TapedPair::TapedPair(DiffSlot theta_slot, const ProbSlot& ref_slot, const ProbSlot* sampling_slot)
    : theta(std::move(theta_slot)), ref(&ref_slot), sampling(sampling_slot) {
  if (ref->size() != theta.size() || (sampling != nullptr && sampling->size() != theta.size())) {
    throw ArgumentError("vocabulary mismatch");
  }
}

double importance_weight(TapedPair& pair, std::size_t p, const ClipRange& clip) {
  clip.validate();
  if (pair.sampling == nullptr) return 1.0;
  const double raw = std::exp(pair.theta.values().log_prob(p) - pair.sampling->log_prob(p));
  return clip.apply(raw);
}

DiffScalar estimator_expression(EstimatorVariant variant, const DiffScalar& lp,
                                const DiffScalar& log_w) {
  switch (variant) {
    case EstimatorVariant::kK1:
      return -log_w;
    case EstimatorVariant::kK2:
      return 0.5 * log_w * log_w;
    case EstimatorVariant::kK3:
      return -log_w + exp(log_w) - 1.0;
    case EstimatorVariant::kK3PlusPlus:
      return score_ratio(lp) * (-log_w + exp(log_w) - 1.0);
    case EstimatorVariant::kK4:
      return score_ratio(lp) * stop_gradient(-log_w);
    case EstimatorVariant::kK5:
      return stop_gradient(exp(log_w)) * log_w + log(score_ratio(lp));
    default:
      throw ArgumentError("no single-token expression for " + to_string(variant));
  }
}

EstimatorSample sampled_kl(TapedPair& pair, EstimatorVariant variant, std::size_t p,
                           const ClipRange& clip) {
  const TokenTerms t = token_terms(pair, p);
  const DiffScalar k = estimator_expression(variant, t.lp, t.log_w);
  EstimatorSample out;
  out.token = p;
  out.w = std::exp(t.log_w.value());
  out.s = importance_weight(pair, p, clip);
  out.value = apply_weight(pair, k, out.s);
  return out;
}

EstimatorSample topk_reverse_kl(TapedPair& pair, std::size_t p, const TopkIndexSet& q,
                                const ClipRange& clip, TailForm tail) {
  EstimatorSample out;
  out.token = p;
  out.in_topk = q.contains(p);
  std::vector<DiffScalar> terms;
  terms.reserve(q.size());
  for (std::size_t j : q.indices()) {
    const DiffScalar lp = pair.theta.log_prob(j);
    terms.push_back(exp(lp) * (lp - pair.ref->log_prob(j)));
  }
  DiffScalar value = sum(std::span<const DiffScalar>(terms));
  const TokenTerms t = token_terms(pair, p);
  out.w = std::exp(t.log_w.value());
  if (!out.in_topk) {
    out.s = importance_weight(pair, p, clip);
    const DiffScalar r = score_ratio(t.lp);
    const DiffScalar tail_value = tail == TailForm::kBaseline ? r * stop_gradient(-t.log_w)
                                                              : r * -t.log_w;
    const DiffScalar weighted = apply_weight(pair, tail_value, out.s);
    value = q.size() == 0 ? weighted : value + weighted;
  }
  out.value = value;
  return out;
}

EstimatorSample topk_forward_kl(TapedPair& pair, std::size_t p, const TopkIndexSet& q,
                                const ClipRange& clip, TailForm tail) {
  EstimatorSample out;
  out.token = p;
  out.in_topk = q.contains(p);
  std::vector<DiffScalar> terms;
  terms.reserve(q.size());
  for (std::size_t j : q.indices()) {
    const DiffScalar lp = pair.theta.log_prob(j);
    const double lr = pair.ref->log_prob(j);
    terms.push_back(std::exp(lr) * (lr - lp));
  }
  DiffScalar value = sum(std::span<const DiffScalar>(terms));
  const TokenTerms t = token_terms(pair, p);
  const DiffScalar w = exp(t.log_w);
  out.w = w.value();
  if (!out.in_topk) {
    out.s = importance_weight(pair, p, clip);
    DiffScalar tail_value = stop_gradient(w) * t.log_w;
    if (tail == TailForm::kBaseline) tail_value = tail_value + log(score_ratio(t.lp));
    const DiffScalar weighted = apply_weight(pair, tail_value, out.s);
    value = q.size() == 0 ? weighted : value + weighted;
  }
  out.value = value;
  return out;
}

TopkIndexSet default_topk_set(const TapedPair& pair, EstimatorVariant variant, std::size_t k) {
  if (variant == EstimatorVariant::kTopkForward) return topk_indices(*pair.ref, k);
  return topk_indices(pair.sampler(), k);
}

EstimatorSample estimate(TapedPair& pair, const EstimatorSpec& spec, std::size_t p,
                         const TopkIndexSet* q) {
  if (!is_topk(spec.variant)) return sampled_kl(pair, spec.variant, p, spec.clip);
  TopkIndexSet own;
  if (q == nullptr) {
    own = default_topk_set(pair, spec.variant, spec.k);
    q = &own;
  }
  if (spec.variant == EstimatorVariant::kTopkReverse) {
    return topk_reverse_kl(pair, p, *q, spec.clip, spec.tail);
  }
  return topk_forward_kl(pair, p, *q, spec.clip, spec.tail);
}

DiffScalar sequence_kl_estimator(std::span<const std::size_t> trajectory,
                                 std::span<TapedPair> positions) {
  if (trajectory.size() != positions.size()) throw ArgumentError("trajectory/position mismatch");
  std::vector<DiffScalar> lps;
  lps.reserve(trajectory.size());
  double log_ratio = 0.0;
  for (std::size_t n = 0; n < trajectory.size(); ++n) {
    const DiffScalar lp = positions[n].theta.log_prob(trajectory[n]);
    log_ratio += lp.value() - positions[n].ref->log_prob(trajectory[n]);
    lps.push_back(lp);
  }
  const double kl_seq = -log_ratio;
  return -kl_seq * sum(std::span<const DiffScalar>(lps));
}

DiffScalar token_kl_sum(std::span<const std::size_t> trajectory, std::span<TapedPair> positions,
                        const EstimatorSpec& spec, std::span<const TopkIndexSet> q_sets) {
  if (trajectory.size() != positions.size()) throw ArgumentError("trajectory/position mismatch");
  if (!q_sets.empty() && q_sets.size() != positions.size()) {
    throw ArgumentError("need one index set per position");
  }
  std::vector<DiffScalar> terms;
  terms.reserve(trajectory.size());
  for (std::size_t n = 0; n < trajectory.size(); ++n) {
    const TopkIndexSet* q = q_sets.empty() ? nullptr : &q_sets[n];
    terms.push_back(estimate(positions[n], spec, trajectory[n], q).value);
  }
  return sum(std::span<const DiffScalar>(terms));
}

}  // namespace emapg
