#pragma once

// Exhaustive checks of the estimator and f-divergence claims on small
// categorical problems. Expectations are computed by enumerating the whole
// vocabulary (or every group of N tokens), never by sampling.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "emapg/categorical.hpp"
#include "emapg/estimators.hpp"
#include "emapg/rng.hpp"

namespace emapg {

struct AuditRow {
  std::string section;
  std::string item;
  std::string check;
  double error = 0.0;
  double tolerance = 0.0;
  // true: pass when error <= tolerance. false: pass when error > tolerance
  // (used for "this bias must show up" witnesses).
  bool upper_bound = true;

  bool pass() const { return upper_bound ? error <= tolerance : error > tolerance; }
};

class AuditReport {
 public:
  void add(AuditRow row) { rows_.push_back(std::move(row)); }
  void append(const AuditReport& other);
  const std::vector<AuditRow>& rows() const { return rows_; }
  bool passed() const;
  bool passed(const std::string& section) const;
  std::size_t count(const std::string& section) const;
  void write_csv(std::ostream& os) const;

 private:
  std::vector<AuditRow> rows_;
};

struct Moments {
  double value = 0.0;
  std::vector<double> grad;
};

// E_{p ~ sampler}[estimator(p)] and E[grad estimator(p)] with respect to the
// logits of pi_theta.
Moments enumerate_moments(const PolicyPair& pair,
                          const std::function<EstimatorSample(TapedPair&, std::size_t)>& est);

PolicyPair random_pair(CounterRng& rng, std::size_t vocab, double logit_scale, bool with_sampling);

double max_abs_diff(std::span<const double> a, std::span<const double> b);

struct EstimatorAuditConfig {
  std::size_t pairs = 100;
  std::size_t vocab = 8;
  double logit_scale = 1.0;
  std::size_t random_sets = 20;
  std::uint64_t seed = 0;
  double value_tol = 1e-9;
  double grad_tol = 1e-8;
  double witness_min = 1e-3;
};

// Sections: sampled, topk, topk_baseline, offpolicy, sequence.
AuditReport audit_estimators(const EstimatorAuditConfig& cfg);

struct FdivAuditConfig {
  std::size_t pairs = 100;
  std::size_t vocab = 8;
  double logit_scale = 1.0;
  double alpha = 3.0;
  std::size_t random_sets = 20;
  std::size_t instances = 20;
  std::size_t transform_vocab = 5;
  double beta = 1.0;
  std::size_t pg_vocab = 4;
  std::size_t pg_group = 2;
  std::uint64_t seed = 0;
  double value_tol = 1e-9;
  double grad_tol = 1e-8;
};

// Sections: fdiv, pg_weight, optimal_policy, transform, pg_loss.
AuditReport audit_fdiv(const FdivAuditConfig& cfg);

struct DynamicsAuditConfig {
  std::size_t closed_form_instances = 50;
  std::size_t max_dim = 64;
  std::size_t max_steps = 1000;
  std::vector<double> etas = {0.0, 0.5, 0.9, 0.95, 0.99};
  std::vector<double> alpha_beta_lambdas = {1e-3, 0.5, 1.2, 1.9, 4.0};
  std::size_t regime_dim = 4;
  std::size_t regime_steps = 10000;
  std::size_t steady_instances = 1000;
  std::size_t steady_max_dim = 16;
  std::uint64_t seed = 0;
};

struct RegimeProbe {
  double eta = 0.0;
  double alpha_beta_lambda = 0.0;
  std::string predicted;
  std::string observed;
};

struct DynamicsAudit {
  AuditReport report;  // sections: closed_form, regime, steady_state
  std::vector<RegimeProbe> probes;
};

// Behaviour of the top eigenmode under g = 0, started on that mode:
// unstable if ||delta|| grows 1e6-fold or fails to halve within `steps`,
// oscillatory if the mode changes sign, monotone otherwise.
std::string observe_regime(double eta, double alpha_beta_lambda, std::size_t dim, CounterRng& rng,
                           std::size_t steps);

DynamicsAudit audit_dynamics(const DynamicsAuditConfig& cfg);

}  // namespace emapg
