#include "emapg/categorical.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "emapg/errors.hpp"

namespace emapg {

ProbSlot ProbSlot::from_logits(std::span<const double> logits) {
  if (logits.empty()) throw ArgumentError("empty logit vector");
  for (double z : logits) {
    if (!std::isfinite(z)) throw DomainError("non-finite logit");
  }
  const double lse = log_sum_exp(logits);
  ProbSlot s;
  s.log_probs_.resize(logits.size());
  for (std::size_t j = 0; j < logits.size(); ++j) s.log_probs_[j] = logits[j] - lse;
  return s;
}

ProbSlot ProbSlot::from_log_probs(std::vector<double> log_probs) {
  if (log_probs.empty()) throw ArgumentError("empty log-probability vector");
  double total = 0.0;
  for (double lp : log_probs) {
    if (std::isnan(lp) || lp > 0.0) throw DomainError("log-probability out of range");
    total += std::exp(lp);
  }
  if (std::fabs(total - 1.0) > 1e-9) throw DomainError("log-probabilities do not sum to one");
  ProbSlot s;
  s.log_probs_ = std::move(log_probs);
  return s;
}

ProbSlot ProbSlot::from_probs(std::span<const double> probs) {
  std::vector<double> lp(probs.size());
  for (std::size_t j = 0; j < probs.size(); ++j) {
    if (probs[j] < 0.0) throw DomainError("negative probability");
    lp[j] = probs[j] > 0.0 ? std::log(probs[j]) : -std::numeric_limits<double>::infinity();
  }
  return from_log_probs(std::move(lp));
}

double ProbSlot::prob(std::size_t j) const { return std::exp(log_probs_.at(j)); }

std::vector<double> ProbSlot::probs() const {
  std::vector<double> p(log_probs_.size());
  std::transform(log_probs_.begin(), log_probs_.end(), p.begin(),
                 [](double lp) { return std::exp(lp); });
  return p;
}

TopkIndexSet::TopkIndexSet(std::vector<std::size_t> indices, std::size_t vocab)
    : indices_(std::move(indices)), member_(vocab, false) {
  for (std::size_t j : indices_) {
    if (j >= vocab) throw ArgumentError("top-k index out of range");
    if (member_[j]) throw ArgumentError("duplicate top-k index");
    member_[j] = true;
  }
}

TopkIndexSet topk_indices(const ProbSlot& slot, std::size_t k) {
  const std::size_t v = slot.size();
  if (k > v) throw ArgumentError("k exceeds vocabulary size");
  std::vector<std::size_t> idx(v);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const auto lp = slot.log_probs();
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (lp[a] != lp[b]) return lp[a] > lp[b];
                      return a < b;
                    });
  idx.resize(k);
  return TopkIndexSet(std::move(idx), v);
}

PolicyPair PolicyPair::make(std::vector<double> theta_logits, const ProbSlot& ref,
                            std::optional<ProbSlot> sampling) {
  PolicyPair p;
  p.theta = ProbSlot::from_logits(theta_logits);
  if (ref.size() != p.theta.size()) throw ArgumentError("theta/ref vocabulary mismatch");
  if (sampling && sampling->size() != p.theta.size()) {
    throw ArgumentError("sampling vocabulary mismatch");
  }
  p.theta_logits = std::move(theta_logits);
  p.ref = ref;
  p.sampling = std::move(sampling);
  return p;
}

std::size_t sample(const ProbSlot& slot, CounterRng& rng) {
  const double u = rng.uniform();
  double c = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t j = 0; j < slot.size(); ++j) {
    const double p = slot.prob(j);
    if (p > 0.0) last_positive = j;
    c += p;
    if (u < c) return j;
  }
  return last_positive;  // u landed in the rounding gap at the top
}

CategoricalSampler::CategoricalSampler(const ProbSlot& slot) : cdf_(slot.size()) {
  double c = 0.0;
  for (std::size_t j = 0; j < slot.size(); ++j) {
    c += slot.prob(j);
    cdf_[j] = c;
  }
}

std::size_t CategoricalSampler::operator()(CounterRng& rng) const {
  const double u = rng.uniform() * cdf_.back();
  const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
  auto j = static_cast<std::size_t>(it - cdf_.begin());
  if (j >= cdf_.size()) j = cdf_.size() - 1;
  return j;
}

DiffSlot::DiffSlot(Tape& tape, std::span<const double> logits, Mode mode)
    : tape_(&tape), mode_(mode), values_(ProbSlot::from_logits(logits)) {
  if (mode_ == Mode::kLogits) {
    leaves_.reserve(logits.size());
    for (double z : logits) leaves_.push_back(tape.variable(z));
    lse_ = log_sum_exp(std::span<const DiffScalar>(leaves_));
  } else {
    leaves_.resize(logits.size());
    made_.assign(logits.size(), false);
  }
}

DiffSlot::DiffSlot(Tape& tape, ProbSlot values)
    : tape_(&tape), mode_(Mode::kLogProbLeaves), values_(std::move(values)) {
  leaves_.resize(values_.size());
  made_.assign(values_.size(), false);
}

DiffScalar DiffSlot::log_prob(std::size_t j) {
  if (j >= size()) throw ArgumentError("token index out of range");
  if (mode_ == Mode::kLogits) return leaves_[j] - lse_;
  if (!made_[j]) {
    leaves_[j] = tape_->variable(values_.log_prob(j));
    made_[j] = true;
  }
  return leaves_[j];
}

std::vector<double> DiffSlot::logit_gradient(const DiffScalar& out) const {
  const std::vector<double> adj = tape_->adjoints(out);
  return logit_gradient(adj);
}

std::vector<double> DiffSlot::logit_gradient(std::span<const double> adjoints) const {
  std::vector<double> g(size(), 0.0);
  auto adj_of = [&](const DiffScalar& x) {
    const auto n = static_cast<std::size_t>(x.node());
    return n < adjoints.size() ? adjoints[n] : 0.0;
  };
  if (mode_ == Mode::kLogits) {
    for (std::size_t i = 0; i < size(); ++i) g[i] = adj_of(leaves_[i]);
    return g;
  }
  double total = 0.0;
  for (std::size_t j = 0; j < size(); ++j) {
    if (!made_[j]) continue;
    const double c = adj_of(leaves_[j]);
    g[j] = c;
    total += c;
  }
  if (total != 0.0) {
    for (std::size_t i = 0; i < size(); ++i) g[i] -= values_.prob(i) * total;
  }
  return g;
}

std::vector<std::pair<std::size_t, double>> DiffSlot::leaf_adjoints(
    std::span<const double> adjoints) const {
  if (mode_ != Mode::kLogProbLeaves) throw StateError("leaf_adjoints needs log-prob leaves");
  std::vector<std::pair<std::size_t, double>> out;
  for (std::size_t j = 0; j < size(); ++j) {
    if (!made_[j]) continue;
    const auto n = static_cast<std::size_t>(leaves_[j].node());
    out.emplace_back(j, n < adjoints.size() ? adjoints[n] : 0.0);
  }
  return out;
}

double exact_kl(const ProbSlot& theta, const ProbSlot& ref, KlDirection dir) {
  if (theta.size() != ref.size()) throw ArgumentError("vocabulary mismatch");
  const ProbSlot& p = dir == KlDirection::kReverse ? theta : ref;
  const ProbSlot& q = dir == KlDirection::kReverse ? ref : theta;
  double kl = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    const double pj = p.prob(j);
    if (pj == 0.0) continue;
    kl += pj * (p.log_prob(j) - q.log_prob(j));
  }
  return kl;
}

std::vector<double> exact_kl_grad(const ProbSlot& theta, const ProbSlot& ref, KlDirection dir) {
  if (theta.size() != ref.size()) throw ArgumentError("vocabulary mismatch");
  std::vector<double> g(theta.size());
  if (dir == KlDirection::kForward) {
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = theta.prob(i) - ref.prob(i);
    return g;
  }
  const double kl = exact_kl(theta, ref, dir);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double pi = theta.prob(i);
    g[i] = pi == 0.0 ? 0.0 : pi * (theta.log_prob(i) - ref.log_prob(i) - kl);
  }
  return g;
}

double exact_divergence(const ProbSlot& theta, const ProbSlot& ref, const FGenerator& f) {
  if (theta.size() != ref.size()) throw ArgumentError("vocabulary mismatch");
  double d = 0.0;
  for (std::size_t j = 0; j < theta.size(); ++j) {
    const double t = std::exp(theta.log_prob(j) - ref.log_prob(j));
    d += ref.prob(j) * f.f(t);
  }
  return d;
}

std::vector<double> exact_divergence_grad(const ProbSlot& theta, const ProbSlot& ref,
                                          const FGenerator& f) {
  if (theta.size() != ref.size()) throw ArgumentError("vocabulary mismatch");
  const std::size_t v = theta.size();
  std::vector<double> fp(v);
  double mean = 0.0;
  for (std::size_t j = 0; j < v; ++j) {
    fp[j] = f.f_prime(std::exp(theta.log_prob(j) - ref.log_prob(j)));
    mean += theta.prob(j) * fp[j];
  }
  std::vector<double> g(v);
  for (std::size_t i = 0; i < v; ++i) g[i] = theta.prob(i) * (fp[i] - mean);
  return g;
}

double total_variation(const ProbSlot& a, const ProbSlot& b) {
  if (a.size() != b.size()) throw ArgumentError("vocabulary mismatch");
  double tv = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) tv += std::fabs(a.prob(j) - b.prob(j));
  return 0.5 * tv;
}

}  // namespace emapg
