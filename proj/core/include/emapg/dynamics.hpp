#pragma once

// Linearized EMA-anchor dynamics.
//
// With delta = theta - theta_ema, a constant driving gradient g and a local
// Fisher F, one step of the coupled system is
//   theta' = theta + alpha g - alpha beta F delta
//   delta' = (eta I - alpha beta F) delta + alpha g
// Each eigenmode i of F evolves independently with chi_i = eta - alpha beta lambda_i.

#include <cstddef>
#include <string>

#include <Eigen/Dense>

#include "emapg/rng.hpp"

namespace emapg {

class FisherSpec {
 public:
  // `basis` columns are eigenvectors; they must be orthonormal within 1e-10
  // and eigenvalues nonnegative.
  FisherSpec(Eigen::VectorXd eigenvalues, Eigen::MatrixXd basis);

  // Orthonormal basis from a QR factorization of a Gaussian matrix and
  // eigenvalues drawn log-uniformly from [lo, hi].
  static FisherSpec random(std::size_t dim, CounterRng& rng, double lo = 1e-3, double hi = 10.0);

  std::size_t dimension() const { return static_cast<std::size_t>(eigenvalues_.size()); }
  const Eigen::VectorXd& eigenvalues() const { return eigenvalues_; }
  const Eigen::MatrixXd& basis() const { return basis_; }
  const Eigen::MatrixXd& matrix() const { return matrix_; }
  double lambda_max() const { return eigenvalues_.maxCoeff(); }

  // Same basis, eigenvalues multiplied by `factor`.
  FisherSpec scaled(double factor) const;

 private:
  Eigen::VectorXd eigenvalues_;
  Eigen::MatrixXd basis_;
  Eigen::MatrixXd matrix_;
};

struct DynamicsConfig {
  double alpha = 0.1;
  double beta = 1.0;
  double eta = 0.9;
  Eigen::VectorXd g;

  void validate(std::size_t dim) const;
};

struct DynamicsState {
  Eigen::VectorXd theta;
  Eigen::VectorXd delta;
};

DynamicsState step(const DynamicsState& state, const DynamicsConfig& cfg, const FisherSpec& fisher);
DynamicsState iterate(std::size_t k, const DynamicsState& state, const DynamicsConfig& cfg,
                      const FisherSpec& fisher);
// Solves the recursion per eigenmode; no iteration.
DynamicsState closed_form(std::size_t k, const DynamicsState& state, const DynamicsConfig& cfg,
                          const FisherSpec& fisher);

enum class Regime { kStableMonotone, kStableOscillatory, kUnstable };

std::string to_string(Regime r);
// Classification by alpha beta lambda_max against eta and 1 + eta.
Regime classify_regime(double eta, double alpha_beta_lambda);
Regime classify_regime(const DynamicsConfig& cfg, const FisherSpec& fisher);

// delta_k along one mode: chi^k delta0 + alpha (1 - chi^k) / (1 - chi) g.
double mode_delta(double chi, double alpha, double delta0, double g, std::size_t k);

struct SteadyState {
  Eigen::VectorXd delta;  // modal solution alpha g_i / ((1 - eta) + alpha beta lambda_i)
  double kl = 0.0;        // (1/2) delta^T F delta
  double norm_bound = 0.0;  // alpha ||g|| / (1 - eta)
};

SteadyState steady_state(const DynamicsConfig& cfg, const FisherSpec& fisher);

}  // namespace emapg
