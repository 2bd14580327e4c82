#pragma once

// f-divergence estimators, policy-gradient weights, optimal policies and
// reward transforms, and the policy-gradient losses built from the KL
// estimators.

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "emapg/categorical.hpp"
#include "emapg/estimators.hpp"
#include "emapg/fgen.hpp"

namespace emapg {

// s r g_f(w): unbiased for D_f(pi_theta || pi_ref) in value and gradient.
EstimatorSample sampled_fdiv(TapedPair& pair, const FGenerator& gen, std::size_t p,
                             const ClipRange& clip = ClipRange::unclipped());

// sum_{j in q} ref_j f(t_j) + s 1(p not in q) r g_f(w)
EstimatorSample topk_fdiv(TapedPair& pair, const FGenerator& gen, std::size_t p,
                          const TopkIndexSet& q, const ClipRange& clip = ClipRange::unclipped());

enum class PgDirection {
  kThetaToStar,  // weight phi(w): E_theta[grad lp phi(w)] = grad D_f(pi_theta || pi_star)
  kStarToTheta,  // weight psi(w): E_theta[grad lp psi(w)] = grad D_f(pi_star || pi_theta)
};

// w = pi_star / pi_theta.
double pg_weight(const FGenerator& gen, double w, PgDirection dir);

struct OptimalPolicy {
  ProbSlot policy;
  std::vector<double> t;  // policy / ref
  double lambda = 0.0;
  double residual = 0.0;  // sum ref t - 1 before the final renormalization
  int iterations = 0;
};

// argmax_pi E_pi[R] - beta D_f(pi || pi_ref):
//   pi(y) = ref(y) (f')^-1((R(y) - lambda) / beta), lambda set by normalization.
OptimalPolicy optimal_policy(const FGenerator& gen, std::span<const double> rewards,
                             const ProbSlot& ref, double beta);

// Rewards whose reverse-KL optimum equals the f-regularized optimum:
// R~(y) = beta log(pi_f(y) / ref(y)).
std::vector<double> reverse_kl_equivalent_rewards(const FGenerator& gen,
                                                  std::span<const double> rewards,
                                                  const ProbSlot& ref, double beta);

// Rewards whose forward-KL optimum equals the reverse-KL optimum for R:
// R_f(y) = z_star - beta Z exp(-R(y) / beta), Z = sum ref exp(R / beta).
// The forward-KL multiplier of the result is z_star.
std::vector<double> forward_kl_rewards_from_reverse(std::span<const double> rewards,
                                                    const ProbSlot& ref, double beta,
                                                    double z_star);

// Losses obtained by plugging the E-step ratio into the KL estimators:
//   w_i = ref(y_i) exp(R(y_i)/beta) / (pi_theta(y_i) Z^),
//   Z^ = (1/N) sum_i sg(ref(y_i) / pi_theta(y_i)) exp(R(y_i)/beta).
enum class PgLoss { kL1, kL2, kL3, kL3PlusPlus, kL4, kL5 };

std::string to_string(PgLoss loss);
PgLoss parse_pg_loss(std::string_view name);
EstimatorVariant estimator_of(PgLoss loss);

// (1/N) sum_i grad L(y_i) with respect to the logits of pi_theta.
std::vector<double> pg_loss_gradient(PgLoss loss, std::span<const double> theta_logits,
                                     const ProbSlot& ref, std::span<const double> rewards,
                                     std::span<const std::size_t> group, double beta);

// sum_j grad lp(y_j) * KL^, KL^ = (1/N) sum_i sg(log pi_theta(y_i) / ref(y_i)).
std::vector<double> group_kl_regularizer_gradient(std::span<const double> theta_logits,
                                                  const ProbSlot& ref,
                                                  std::span<const std::size_t> group);

// -sum_j softmax_j(R/beta - log(pi_theta / ref)) grad lp(y_j): the
// self-normalized forward-KL policy gradient.
std::vector<double> softmax_pg_gradient(std::span<const double> theta_logits, const ProbSlot& ref,
                                        std::span<const double> rewards,
                                        std::span<const std::size_t> group, double beta);

}  // namespace emapg
