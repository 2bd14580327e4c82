#include "emapg/dynamics.hpp"

#include <cmath>

#include "emapg/errors.hpp"

namespace emapg {

namespace {

// (1 - chi^k) / (1 - chi), accurate when chi is close to one.
double geometric_sum(double chi, std::size_t k) {
  const double kd = static_cast<double>(k);
  if (chi == 1.0) return kd;
  if (chi > 0.0 && chi < 1.0) {
    // 1 - chi^k = -expm1(k log chi)
    return -std::expm1(kd * std::log(chi)) / (1.0 - chi);
  }
  return (1.0 - std::pow(chi, kd)) / (1.0 - chi);
}

}  // namespace

FisherSpec::FisherSpec(Eigen::VectorXd eigenvalues, Eigen::MatrixXd basis)
    : eigenvalues_(std::move(eigenvalues)), basis_(std::move(basis)) {
  const auto d = eigenvalues_.size();
  if (d == 0 || basis_.rows() != d || basis_.cols() != d) {
    throw ArgumentError("Fisher basis must be square and match the eigenvalues");
  }
  if ((eigenvalues_.array() < 0.0).any() || !eigenvalues_.allFinite()) {
    throw ArgumentError("Fisher eigenvalues must be finite and nonnegative");
  }
  const double err =
      (basis_.transpose() * basis_ - Eigen::MatrixXd::Identity(d, d)).cwiseAbs().maxCoeff();
  if (err > 1e-10) throw ArgumentError("Fisher basis is not orthonormal");
  matrix_ = basis_ * eigenvalues_.asDiagonal() * basis_.transpose();
}

FisherSpec FisherSpec::random(std::size_t dim, CounterRng& rng, double lo, double hi) {
  if (dim == 0) throw ArgumentError("dimension must be positive");
  if (!(lo > 0.0) || !(hi >= lo)) throw ArgumentError("need 0 < lo <= hi");
  const auto d = static_cast<Eigen::Index>(dim);
  Eigen::MatrixXd a(d, d);
  for (Eigen::Index j = 0; j < d; ++j) {
    for (Eigen::Index i = 0; i < d; ++i) a(i, j) = rng.normal();
  }
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(d, d);
  Eigen::VectorXd lambda(d);
  const double log_lo = std::log(lo);
  const double log_hi = std::log(hi);
  for (Eigen::Index i = 0; i < d; ++i) lambda(i) = std::exp(log_lo + (log_hi - log_lo) * rng.uniform());
  return FisherSpec(lambda, q);
}

FisherSpec FisherSpec::scaled(double factor) const {
  return FisherSpec(eigenvalues_ * factor, basis_);
}

void DynamicsConfig::validate(std::size_t dim) const {
  if (!(alpha > 0.0) || !(beta >= 0.0) || !std::isfinite(alpha) || !std::isfinite(beta)) {
    throw ArgumentError("need alpha > 0 and beta >= 0");
  }
  if (!(eta >= 0.0 && eta < 1.0)) throw ArgumentError("eta must lie in [0, 1)");
  if (static_cast<std::size_t>(g.size()) != dim) throw ArgumentError("g has the wrong dimension");
}

DynamicsState step(const DynamicsState& state, const DynamicsConfig& cfg, const FisherSpec& fisher) {
  cfg.validate(fisher.dimension());
  const Eigen::VectorXd f_delta = fisher.matrix() * state.delta;
  DynamicsState next;
  next.theta = state.theta + cfg.alpha * cfg.g - cfg.alpha * cfg.beta * f_delta;
  next.delta = cfg.eta * state.delta - cfg.alpha * cfg.beta * f_delta + cfg.alpha * cfg.g;
  return next;
}

DynamicsState iterate(std::size_t k, const DynamicsState& state, const DynamicsConfig& cfg,
                      const FisherSpec& fisher) {
  DynamicsState s = state;
  for (std::size_t i = 0; i < k; ++i) s = step(s, cfg, fisher);
  return s;
}

DynamicsState closed_form(std::size_t k, const DynamicsState& state, const DynamicsConfig& cfg,
                          const FisherSpec& fisher) {
  cfg.validate(fisher.dimension());
  const Eigen::MatrixXd& v = fisher.basis();
  const Eigen::VectorXd d0 = v.transpose() * state.delta;
  const Eigen::VectorXd g = v.transpose() * cfg.g;
  const double kd = static_cast<double>(k);
  const auto dim = d0.size();
  Eigen::VectorXd d_k(dim);
  Eigen::VectorXd theta_shift(dim);
  for (Eigen::Index i = 0; i < dim; ++i) {
    const double ab_lambda = cfg.alpha * cfg.beta * fisher.eigenvalues()(i);
    const double chi = cfg.eta - ab_lambda;
    const double s_k = geometric_sum(chi, k);
    // M_k = sum_{j<k} S_j = (k - S_k) / (1 - chi)
    const double m_k = (kd - s_k) / (1.0 - chi);
    d_k(i) = std::pow(chi, kd) * d0(i) + cfg.alpha * s_k * g(i);
    theta_shift(i) = cfg.alpha * kd * g(i) - ab_lambda * s_k * d0(i) -
                     cfg.alpha * ab_lambda * m_k * g(i);
  }
  DynamicsState out;
  out.delta = v * d_k;
  out.theta = state.theta + v * theta_shift;
  return out;
}

std::string to_string(Regime r) {
  switch (r) {
    case Regime::kStableMonotone: return "stable_monotone";
    case Regime::kStableOscillatory: return "stable_oscillatory";
    case Regime::kUnstable: return "unstable";
  }
  return "?";
}

Regime classify_regime(double eta, double alpha_beta_lambda) {
  if (alpha_beta_lambda <= eta) return Regime::kStableMonotone;
  if (alpha_beta_lambda < 1.0 + eta) return Regime::kStableOscillatory;
  return Regime::kUnstable;
}

Regime classify_regime(const DynamicsConfig& cfg, const FisherSpec& fisher) {
  return classify_regime(cfg.eta, cfg.alpha * cfg.beta * fisher.lambda_max());
}

double mode_delta(double chi, double alpha, double delta0, double g, std::size_t k) {
  return std::pow(chi, static_cast<double>(k)) * delta0 + alpha * geometric_sum(chi, k) * g;
}

SteadyState steady_state(const DynamicsConfig& cfg, const FisherSpec& fisher) {
  cfg.validate(fisher.dimension());
  if (classify_regime(cfg, fisher) == Regime::kUnstable) {
    throw StateError("no steady state: alpha beta lambda_max >= 1 + eta");
  }
  const Eigen::MatrixXd& v = fisher.basis();
  const Eigen::VectorXd g = v.transpose() * cfg.g;
  Eigen::VectorXd d(g.size());
  double kl = 0.0;
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    const double lambda = fisher.eigenvalues()(i);
    d(i) = cfg.alpha * g(i) / ((1.0 - cfg.eta) + cfg.alpha * cfg.beta * lambda);
    kl += 0.5 * lambda * d(i) * d(i);
  }
  SteadyState out;
  out.delta = v * d;
  out.kl = kl;
  out.norm_bound = cfg.alpha * cfg.g.norm() / (1.0 - cfg.eta);
  return out;
}

}  // namespace emapg
