#include <algorithm>
#include <cmath>

#include "emapg/audit.hpp"
#include "emapg/dynamics.hpp"
#include "emapg/errors.hpp"

namespace emapg {

namespace {

double rel_diff(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double scale = std::max(b.norm(), 1e-300);
  return (a - b).norm() / scale;
}

Eigen::VectorXd gaussian(std::size_t d, CounterRng& rng) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = rng.normal();
  return v;
}

std::size_t uniform_index(CounterRng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng() % (hi - lo + 1));
}

}  // namespace

std::string observe_regime(double eta, double alpha_beta_lambda, std::size_t dim, CounterRng& rng,
                           std::size_t steps) {
  FisherSpec base = FisherSpec::random(dim, rng, 1e-3, 1.0);
  DynamicsConfig cfg;
  cfg.alpha = 0.1;
  cfg.beta = 1.0;
  cfg.eta = eta;
  cfg.g = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim));
  const FisherSpec fisher = base.scaled(alpha_beta_lambda / (cfg.alpha * cfg.beta * base.lambda_max()));
  Eigen::Index top = 0;
  fisher.eigenvalues().maxCoeff(&top);
  const Eigen::VectorXd v_top = fisher.basis().col(top);

  DynamicsState s{Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim)), v_top};
  const double n0 = s.delta.norm();
  double c_prev = v_top.dot(s.delta);
  const double c0 = std::fabs(c_prev);
  bool sign_change = false;
  bool grew = false;
  bool tracking = true;
  for (std::size_t k = 0; k < steps; ++k) {
    s = step(s, cfg, fisher);
    if (!(s.delta.norm() <= 1e6 * n0)) {
      grew = true;
      break;
    }
    if (tracking) {
      const double c = v_top.dot(s.delta);
      if (std::fabs(c) < 1e-12 * c0) {
        tracking = false;
      } else {
        if (c * c_prev < 0.0) sign_change = true;
        c_prev = c;
      }
    }
  }
  // A mode that has not contracted by half over the whole run is not
  // asymptotically stable; this covers the marginal case |chi| = 1.
  if (grew || s.delta.norm() > 0.5 * n0) return to_string(Regime::kUnstable);
  return to_string(sign_change ? Regime::kStableOscillatory : Regime::kStableMonotone);
}

DynamicsAudit audit_dynamics(const DynamicsAuditConfig& cfg) {
  DynamicsAudit out;

  // Closed form against step-by-step iteration.
  {
    CounterRng rng(cfg.seed, 0, "audit.dynamics.closed_form");
    double worst = 0.0;
    std::vector<std::size_t> checkpoints;
    for (std::size_t k = 1; k <= cfg.max_steps; k *= 10) checkpoints.push_back(k);
    if (checkpoints.back() != cfg.max_steps) checkpoints.push_back(cfg.max_steps);
    for (std::size_t i = 0; i < cfg.closed_form_instances; ++i) {
      const std::size_t d = uniform_index(rng, 1, cfg.max_dim);
      DynamicsConfig dc;
      dc.eta = 0.99 * rng.uniform();
      dc.alpha = 0.01 + 0.2 * rng.uniform();
      dc.beta = 0.1 + 2.0 * rng.uniform();
      dc.g = gaussian(d, rng);
      const FisherSpec raw = FisherSpec::random(d, rng);
      const double target = (1.0 + dc.eta) * (0.05 + 0.9 * rng.uniform());
      const FisherSpec fisher = raw.scaled(target / (dc.alpha * dc.beta * raw.lambda_max()));
      const DynamicsState init{gaussian(d, rng), gaussian(d, rng)};
      DynamicsState it = init;
      std::size_t done = 0;
      for (std::size_t k : checkpoints) {
        it = iterate(k - done, it, dc, fisher);
        done = k;
        const DynamicsState cf = closed_form(k, init, dc, fisher);
        worst = std::max({worst, rel_diff(it.theta, cf.theta), rel_diff(it.delta, cf.delta)});
      }
    }
    out.report.add({"closed_form", "iterate_vs_closed_form",
                    std::to_string(cfg.closed_form_instances) + " instances, k<=" +
                        std::to_string(cfg.max_steps),
                    worst, 1e-10});
  }

  // Regime grid.
  {
    CounterRng rng(cfg.seed, 0, "audit.dynamics.regime");
    std::size_t mismatches = 0;
    for (double eta : cfg.etas) {
      for (double abl : cfg.alpha_beta_lambdas) {
        RegimeProbe p;
        p.eta = eta;
        p.alpha_beta_lambda = abl;
        p.predicted = to_string(classify_regime(eta, abl));
        p.observed = observe_regime(eta, abl, cfg.regime_dim, rng, cfg.regime_steps);
        if (p.predicted != p.observed) ++mismatches;
        out.probes.push_back(p);
      }
    }
    out.report.add({"regime", "grid",
                    std::to_string(out.probes.size()) + " probes: predicted = simulated",
                    static_cast<double>(mismatches), 0.0});
  }

  // Steady state.
  {
    CounterRng rng(cfg.seed, 0, "audit.dynamics.steady_state");
    double delta_err = 0.0, bound_violation = 0.0, kl_err = 0.0, solve_err = 0.0;
    for (std::size_t i = 0; i < cfg.steady_instances; ++i) {
      const std::size_t d = uniform_index(rng, 1, cfg.steady_max_dim);
      DynamicsConfig dc;
      dc.eta = 0.95 * rng.uniform();
      dc.alpha = 0.01 + 0.2 * rng.uniform();
      dc.beta = 0.1 + 2.0 * rng.uniform();
      dc.g = gaussian(d, rng);
      const FisherSpec raw = FisherSpec::random(d, rng);
      const double target = 0.95 * (1.0 + dc.eta) * (0.05 + 0.95 * rng.uniform());
      const FisherSpec fisher = raw.scaled(target / (dc.alpha * dc.beta * raw.lambda_max()));
      const SteadyState ss = steady_state(dc, fisher);

      double rho = 0.0;
      for (Eigen::Index j = 0; j < fisher.eigenvalues().size(); ++j) {
        rho = std::max(rho, std::fabs(dc.eta - dc.alpha * dc.beta * fisher.eigenvalues()(j)));
      }
      const auto steps = static_cast<std::size_t>(std::ceil(std::log(1e-15) / std::log(rho))) + 10;
      const DynamicsState end =
          iterate(steps, {Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d)),
                          Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d))},
                  dc, fisher);
      const double scale = std::max(1.0, ss.delta.norm());
      delta_err = std::max(delta_err, (end.delta - ss.delta).norm() / scale);
      bound_violation = std::max(bound_violation, ss.delta.norm() - ss.norm_bound);

      const auto dim = static_cast<Eigen::Index>(d);
      const Eigen::MatrixXd system =
          (1.0 - dc.eta) * Eigen::MatrixXd::Identity(dim, dim) + dc.alpha * dc.beta * fisher.matrix();
      const Eigen::VectorXd solved = system.ldlt().solve(dc.alpha * dc.g);
      solve_err = std::max(solve_err, (solved - ss.delta).norm() / scale);
      const double quad = 0.5 * solved.dot(fisher.matrix() * solved);
      kl_err = std::max(kl_err, std::fabs(quad - ss.kl) / std::max(1.0, std::fabs(ss.kl)));
    }
    const std::string n = std::to_string(cfg.steady_instances) + " instances";
    out.report.add({"steady_state", "simulated_lag", "long-run delta = delta* (" + n + ")", delta_err, 1e-8});
    out.report.add({"steady_state", "linear_solve", "delta* = alpha((1-eta)I + alpha beta F)^-1 g", solve_err,
                    1e-10});
    out.report.add({"steady_state", "norm_bound", "||delta*|| - alpha||g||/(1-eta) <= 0", bound_violation, 0.0});
    out.report.add({"steady_state", "kl", "delta*^T F delta* / 2 = modal formula", kl_err, 1e-10});
  }
  return out;
}

}  // namespace emapg
