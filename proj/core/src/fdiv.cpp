#include "emapg/fdiv.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>

#include "emapg/errors.hpp"

namespace emapg {

namespace {

void check_token(const TapedPair& pair, std::size_t p) {
  if (p >= pair.theta.size()) throw ArgumentError("token index out of range");
}

DiffScalar kf_plus_plus(TapedPair& pair, const FGenerator& gen, std::size_t p) {
  const DiffScalar lp = pair.theta.log_prob(p);
  const DiffScalar log_w = pair.ref->log_prob(p) - lp;
  const DiffScalar r = exp(lp - stop_gradient(lp));
  return r * gen.g(exp(log_w), log_w);
}

void check_rewards(std::span<const double> rewards, const ProbSlot& ref, double beta) {
  if (rewards.size() != ref.size()) throw ArgumentError("reward/reference size mismatch");
  if (!(beta > 0.0) || !std::isfinite(beta)) throw ArgumentError("beta must be positive");
  for (double r : rewards) {
    if (!std::isfinite(r)) throw DomainError("non-finite reward");
  }
}

}  // namespace

EstimatorSample sampled_fdiv(TapedPair& pair, const FGenerator& gen, std::size_t p,
                             const ClipRange& clip) {
  check_token(pair, p);
  EstimatorSample out;
  out.token = p;
  out.w = std::exp(pair.ref->log_prob(p) - pair.theta.values().log_prob(p));
  out.s = importance_weight(pair, p, clip);
  const DiffScalar k = kf_plus_plus(pair, gen, p);
  out.value = pair.sampling == nullptr ? k : out.s * k;
  return out;
}

EstimatorSample topk_fdiv(TapedPair& pair, const FGenerator& gen, std::size_t p,
                          const TopkIndexSet& q, const ClipRange& clip) {
  check_token(pair, p);
  EstimatorSample out;
  out.token = p;
  out.in_topk = q.contains(p);
  out.w = std::exp(pair.ref->log_prob(p) - pair.theta.values().log_prob(p));
  std::vector<DiffScalar> terms;
  terms.reserve(q.size() + 1);
  for (std::size_t j : q.indices()) {
    const double lr = pair.ref->log_prob(j);
    const DiffScalar t = exp(pair.theta.log_prob(j) - lr);
    terms.push_back(std::exp(lr) * gen.f(t));
  }
  if (!out.in_topk) {
    out.s = importance_weight(pair, p, clip);
    const DiffScalar k = kf_plus_plus(pair, gen, p);
    terms.push_back(pair.sampling == nullptr ? k : out.s * k);
  }
  out.value = terms.size() == 1 ? terms[0] : sum(std::span<const DiffScalar>(terms));
  return out;
}

double pg_weight(const FGenerator& gen, double w, PgDirection dir) {
  if (!(w > 0.0)) throw DomainError("pg_weight needs w > 0");
  return dir == PgDirection::kThetaToStar ? gen.phi(w) : gen.psi(w);
}

OptimalPolicy optimal_policy(const FGenerator& gen, std::span<const double> rewards,
                             const ProbSlot& ref, double beta) {
  if (!gen.has_f_prime_inverse()) {
    throw UnsupportedError("optimal policy needs an invertible f' (" + gen.name() + ")");
  }
  check_rewards(rewards, ref, beta);
  const std::size_t v = ref.size();
  const double r_max = *std::max_element(rewards.begin(), rewards.end());
  const double sup = gen.f_prime_sup();
  const bool has_pole = std::isfinite(sup);

  auto ratio = [&](double lambda, std::size_t y) {
    return gen.f_prime_inverse((rewards[y] - lambda) / beta);
  };
  // Decreasing in lambda.
  auto residual = [&](double lambda) {
    double total = 0.0;
    for (std::size_t y = 0; y < v; ++y) {
      if (ref.prob(y) > 0.0) total += ref.prob(y) * ratio(lambda, y);
    }
    return total - 1.0;
  };

  double lo = 0.0;
  double hi = 0.0;
  if (has_pole) {
    const double pole = r_max - beta * sup;
    double gap = 1e-9 * (1.0 + std::fabs(pole));
    lo = pole + gap;
    int shrink = 0;
    while (residual(lo) <= 0.0) {
      gap *= 0.5;
      if (++shrink > 2000 || pole + gap == pole) {
        throw SolverError("no admissible lambda above the pole");
      }
      lo = pole + gap;
    }
  } else {
    double step = beta;
    lo = r_max - step;
    int grow = 0;
    while (residual(lo) <= 0.0) {
      step *= 2.0;
      lo = r_max - step;
      if (++grow > 2000 || !std::isfinite(lo)) throw SolverError("cannot bracket lambda from below");
    }
  }
  double step = beta;
  hi = lo + step;
  int grow = 0;
  while (residual(hi) > 0.0) {
    step *= 2.0;
    hi = lo + step;
    if (++grow > 2000 || !std::isfinite(hi)) throw SolverError("cannot bracket lambda from above");
  }

  OptimalPolicy out;
  for (out.iterations = 0; out.iterations < 200; ++out.iterations) {
    const double mid = lo + 0.5 * (hi - lo);
    if (mid <= lo || mid >= hi) break;
    if (residual(mid) > 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  // Of the two bracket ends keep the one with the smaller residual.
  const double r_lo = residual(lo);
  const double r_hi = residual(hi);
  out.lambda = std::fabs(r_lo) <= std::fabs(r_hi) ? lo : hi;
  out.residual = std::fabs(r_lo) <= std::fabs(r_hi) ? r_lo : r_hi;
  out.t.resize(v);
  std::vector<double> p(v);
  double total = 0.0;
  for (std::size_t y = 0; y < v; ++y) {
    out.t[y] = ref.prob(y) > 0.0 ? ratio(out.lambda, y) : 0.0;
    p[y] = ref.prob(y) * out.t[y];
    total += p[y];
  }
  for (double& x : p) x /= total;
  out.policy = ProbSlot::from_probs(p);
  return out;
}

std::vector<double> reverse_kl_equivalent_rewards(const FGenerator& gen,
                                                  std::span<const double> rewards,
                                                  const ProbSlot& ref, double beta) {
  const OptimalPolicy opt = optimal_policy(gen, rewards, ref, beta);
  std::vector<double> out(rewards.size());
  for (std::size_t y = 0; y < rewards.size(); ++y) {
    if (!(opt.t[y] > 0.0)) {
      throw DomainError("reward " + std::to_string(rewards[y]) +
                        " gives a zero-probability optimum; no finite equivalent reward");
    }
    out[y] = beta * std::log(opt.t[y]);
  }
  return out;
}

std::vector<double> forward_kl_rewards_from_reverse(std::span<const double> rewards,
                                                    const ProbSlot& ref, double beta,
                                                    double z_star) {
  check_rewards(rewards, ref, beta);
  std::vector<double> tilted(rewards.size());
  for (std::size_t y = 0; y < rewards.size(); ++y) tilted[y] = ref.log_prob(y) + rewards[y] / beta;
  const double log_z = log_sum_exp(std::span<const double>(tilted));
  std::vector<double> out(rewards.size());
  for (std::size_t y = 0; y < rewards.size(); ++y) {
    out[y] = z_star - beta * std::exp(log_z - rewards[y] / beta);
  }
  return out;
}

std::string to_string(PgLoss loss) {
  switch (loss) {
    case PgLoss::kL1: return "L1";
    case PgLoss::kL2: return "L2";
    case PgLoss::kL3: return "L3";
    case PgLoss::kL3PlusPlus: return "L3pp";
    case PgLoss::kL4: return "L4";
    case PgLoss::kL5: return "L5";
  }
  return "?";
}

PgLoss parse_pg_loss(std::string_view name) {
  std::string n(name);
  std::transform(n.begin(), n.end(), n.begin(), [](unsigned char c) { return std::toupper(c); });
  if (n == "L1") return PgLoss::kL1;
  if (n == "L2") return PgLoss::kL2;
  if (n == "L3") return PgLoss::kL3;
  if (n == "L3PP" || n == "L3++") return PgLoss::kL3PlusPlus;
  if (n == "L4") return PgLoss::kL4;
  if (n == "L5") return PgLoss::kL5;
  throw ArgumentError("unknown loss '" + std::string(name) + "'");
}

EstimatorVariant estimator_of(PgLoss loss) {
  switch (loss) {
    case PgLoss::kL1: return EstimatorVariant::kK1;
    case PgLoss::kL2: return EstimatorVariant::kK2;
    case PgLoss::kL3: return EstimatorVariant::kK3;
    case PgLoss::kL3PlusPlus: return EstimatorVariant::kK3PlusPlus;
    case PgLoss::kL4: return EstimatorVariant::kK4;
    case PgLoss::kL5: return EstimatorVariant::kK5;
  }
  return EstimatorVariant::kK1;
}

namespace {

void check_group(std::span<const double> theta_logits, const ProbSlot& ref,
                 std::span<const std::size_t> group) {
  if (theta_logits.size() != ref.size()) throw ArgumentError("theta/ref size mismatch");
  if (group.empty()) throw ArgumentError("empty group");
  for (std::size_t y : group) {
    if (y >= ref.size()) throw ArgumentError("group token out of range");
  }
}

// log of (1/N) sum_i exp(R_i/beta - rho_i), rho_i = log pi_theta(y_i) / ref(y_i).
double log_partition_estimate(const ProbSlot& theta, const ProbSlot& ref,
                              std::span<const double> rewards,
                              std::span<const std::size_t> group, double beta) {
  std::vector<double> terms(group.size());
  for (std::size_t i = 0; i < group.size(); ++i) {
    const std::size_t y = group[i];
    terms[i] = rewards[y] / beta - (theta.log_prob(y) - ref.log_prob(y));
  }
  return log_sum_exp(std::span<const double>(terms)) - std::log(static_cast<double>(group.size()));
}

}  // namespace

std::vector<double> pg_loss_gradient(PgLoss loss, std::span<const double> theta_logits,
                                     const ProbSlot& ref, std::span<const double> rewards,
                                     std::span<const std::size_t> group, double beta) {
  check_group(theta_logits, ref, group);
  check_rewards(rewards, ref, beta);
  Tape tape;
  DiffSlot theta(tape, theta_logits);
  const double log_z = log_partition_estimate(theta.values(), ref, rewards, group, beta);
  std::vector<DiffScalar> terms;
  terms.reserve(group.size());
  for (std::size_t y : group) {
    const DiffScalar lp = theta.log_prob(y);
    const DiffScalar log_w = (ref.log_prob(y) + rewards[y] / beta - log_z) - lp;
    terms.push_back(estimator_expression(estimator_of(loss), lp, log_w));
  }
  const DiffScalar mean = sum(std::span<const DiffScalar>(terms)) / static_cast<double>(group.size());
  return theta.logit_gradient(mean);
}

std::vector<double> group_kl_regularizer_gradient(std::span<const double> theta_logits,
                                                  const ProbSlot& ref,
                                                  std::span<const std::size_t> group) {
  check_group(theta_logits, ref, group);
  Tape tape;
  DiffSlot theta(tape, theta_logits);
  std::vector<DiffScalar> lps;
  double kl_hat = 0.0;
  for (std::size_t y : group) {
    const DiffScalar lp = theta.log_prob(y);
    kl_hat += lp.value() - ref.log_prob(y);
    lps.push_back(lp);
  }
  kl_hat /= static_cast<double>(group.size());
  return theta.logit_gradient(sum(std::span<const DiffScalar>(lps)) * kl_hat);
}

std::vector<double> softmax_pg_gradient(std::span<const double> theta_logits, const ProbSlot& ref,
                                        std::span<const double> rewards,
                                        std::span<const std::size_t> group, double beta) {
  check_group(theta_logits, ref, group);
  check_rewards(rewards, ref, beta);
  Tape tape;
  DiffSlot theta(tape, theta_logits);
  std::vector<double> scores(group.size());
  for (std::size_t i = 0; i < group.size(); ++i) {
    const std::size_t y = group[i];
    scores[i] = rewards[y] / beta - (theta.values().log_prob(y) - ref.log_prob(y));
  }
  const double lse = log_sum_exp(std::span<const double>(scores));
  std::vector<DiffScalar> terms;
  for (std::size_t i = 0; i < group.size(); ++i) {
    terms.push_back(-std::exp(scores[i] - lse) * theta.log_prob(group[i]));
  }
  return theta.logit_gradient(sum(std::span<const DiffScalar>(terms)));
}

}  // namespace emapg
