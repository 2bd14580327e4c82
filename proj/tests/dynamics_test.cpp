#include <gtest/gtest.h>

#include <cmath>

#include "emapg/audit.hpp"
#include "emapg/dynamics.hpp"
#include "emapg/errors.hpp"
#include "emapg/rng.hpp"

namespace emapg {
namespace {

FisherSpec diagonal(std::initializer_list<double> lambdas) {
  Eigen::VectorXd l(static_cast<Eigen::Index>(lambdas.size()));
  Eigen::Index i = 0;
  for (double x : lambdas) l(i++) = x;
  return FisherSpec(l, Eigen::MatrixXd::Identity(l.size(), l.size()));
}

DynamicsConfig config(double alpha, double beta, double eta, Eigen::VectorXd g) {
  DynamicsConfig c;
  c.alpha = alpha;
  c.beta = beta;
  c.eta = eta;
  c.g = std::move(g);
  return c;
}

TEST(Step, ZeroDriveIsFixedPoint) {
  CounterRng rng(41, 0, "test.dyn.fixed");
  const FisherSpec f = FisherSpec::random(3, rng);
  const DynamicsConfig c = config(0.1, 1.0, 0.9, Eigen::VectorXd::Zero(3));
  const DynamicsState s{Eigen::Vector3d(1.0, -2.0, 0.5), Eigen::VectorXd::Zero(3)};
  const DynamicsState n = step(s, c, f);
  EXPECT_EQ((n.theta - s.theta).norm(), 0.0);
  EXPECT_EQ(n.delta.norm(), 0.0);
}

TEST(Step, NoCurvatureDecouples) {
  const FisherSpec f = diagonal({0.0, 0.0});
  const DynamicsConfig c = config(0.1, 1.0, 0.9, Eigen::Vector2d(1.0, -1.0));
  const DynamicsState s{Eigen::Vector2d(0.0, 0.0), Eigen::Vector2d(2.0, 3.0)};
  const DynamicsState n = step(s, c, f);
  EXPECT_NEAR(n.delta(0), 0.9 * 2.0 + 0.1, 1e-15);
  EXPECT_NEAR(n.delta(1), 0.9 * 3.0 - 0.1, 1e-15);
  EXPECT_NEAR(n.theta(0), 0.1, 1e-15);
  EXPECT_NEAR(n.theta(1), -0.1, 1e-15);
}

TEST(Step, ScalarContraction) {
  const FisherSpec f = diagonal({2.0});
  const DynamicsConfig c = config(0.1, 1.0, 0.9, Eigen::VectorXd::Zero(1));
  const DynamicsState n = step({Eigen::VectorXd::Zero(1), Eigen::VectorXd::Ones(1)}, c, f);
  EXPECT_NEAR(n.delta(0), 0.7, 1e-15);
}

TEST(ClosedForm, MatchesIteration) {
  CounterRng rng(42, 0, "test.dyn.closed");
  for (int trial = 0; trial < 10; ++trial) {
    const FisherSpec raw = FisherSpec::random(6, rng);
    const FisherSpec f = raw.scaled(1.5 / (0.05 * raw.lambda_max()));
    Eigen::VectorXd g(6), t0(6), d0(6);
    for (int i = 0; i < 6; ++i) {
      g(i) = rng.normal();
      t0(i) = rng.normal();
      d0(i) = rng.normal();
    }
    const DynamicsConfig c = config(0.05, 1.0, 0.8, g);
    const DynamicsState init{t0, d0};
    for (std::size_t k : {0u, 1u, 7u, 200u}) {
      const DynamicsState a = iterate(k, init, c, f);
      const DynamicsState b = closed_form(k, init, c, f);
      EXPECT_LE((a.theta - b.theta).norm(), 1e-11 * std::max(1.0, a.theta.norm()));
      EXPECT_LE((a.delta - b.delta).norm(), 1e-11 * std::max(1.0, a.delta.norm()));
    }
  }
}

TEST(ModeDelta, Boundaries) {
  EXPECT_DOUBLE_EQ(mode_delta(0.3, 0.1, 2.5, 1.0, 0), 2.5);
  // chi = 0: only the last drive term survives.
  EXPECT_DOUBLE_EQ(mode_delta(0.0, 0.1, 2.5, 3.0, 1), 0.3);
  EXPECT_DOUBLE_EQ(mode_delta(0.0, 0.1, 2.5, 3.0, 9), 0.3);
  EXPECT_NEAR(mode_delta(0.5, 0.1, 0.0, 1.0, 3), 0.1 * (1.0 + 0.5 + 0.25), 1e-15);
}

TEST(Regime, Thresholds) {
  EXPECT_EQ(classify_regime(0.9, 0.5), Regime::kStableMonotone);
  EXPECT_EQ(classify_regime(0.9, 1.2), Regime::kStableOscillatory);
  EXPECT_EQ(classify_regime(0.9, 1.9), Regime::kUnstable);
  EXPECT_EQ(classify_regime(0.9, 0.9), Regime::kStableMonotone);
  EXPECT_EQ(classify_regime(0.0, 1e-3), Regime::kStableOscillatory);
}

TEST(Regime, LogSpacedGridAgreesWithSimulation) {
  CounterRng rng(43, 0, "test.dyn.grid");
  for (double eta : {0.0, 0.5, 0.9, 0.95, 0.99}) {
    for (int i = 0; i < 5; ++i) {
      const double abl = 1e-3 * std::pow(4.0 / 1e-3, i / 4.0);
      EXPECT_EQ(observe_regime(eta, abl, 3, rng, 10000), to_string(classify_regime(eta, abl)))
          << "eta " << eta << " abl " << abl;
    }
  }
}

TEST(SteadyState, NoCurvature) {
  const FisherSpec f = diagonal({0.0, 0.0});
  const DynamicsConfig c = config(0.1, 1.0, 0.9, Eigen::Vector2d(1.0, 2.0));
  const SteadyState s = steady_state(c, f);
  EXPECT_NEAR(s.delta(0), 1.0, 1e-14);
  EXPECT_NEAR(s.delta(1), 2.0, 1e-14);
  EXPECT_EQ(s.kl, 0.0);
  EXPECT_NEAR(s.norm_bound, s.delta.norm(), 1e-14);
}

TEST(SteadyState, UnstableRejected) {
  const FisherSpec f = diagonal({30.0});
  const DynamicsConfig c = config(0.1, 1.0, 0.9, Eigen::VectorXd::Ones(1));
  EXPECT_THROW(steady_state(c, f), StateError);
}

TEST(FisherSpec, Validation) {
  Eigen::MatrixXd b = Eigen::MatrixXd::Identity(2, 2);
  b(0, 1) = 0.5;
  EXPECT_THROW(FisherSpec(Eigen::Vector2d(1.0, 1.0), b), ArgumentError);
  EXPECT_THROW(FisherSpec(Eigen::Vector2d(-1.0, 1.0), Eigen::MatrixXd::Identity(2, 2)), ArgumentError);
  CounterRng rng(44, 0, "test.dyn.fisher");
  const FisherSpec f = FisherSpec::random(8, rng);
  const Eigen::MatrixXd q = f.basis();
  EXPECT_LE((q.transpose() * q - Eigen::MatrixXd::Identity(8, 8)).norm(), 1e-12);
  EXPECT_GE(f.eigenvalues().minCoeff(), 1e-3);
  EXPECT_LE(f.eigenvalues().maxCoeff(), 10.0);
}

}  // namespace
}  // namespace emapg
