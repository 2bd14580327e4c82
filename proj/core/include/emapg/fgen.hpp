#pragma once

// Catalog of f-divergence generators D_f(P || Q) = sum_x Q(x) f(P(x) / Q(x)).
//
// With t = pi_theta / pi_ref and w = 1 / t the catalog exposes
//   g(w)   = w f(1/w)            sampled estimator value (before the r factor)
//   phi(w) = f'(1/w)             policy-gradient weight for D_f(pi_theta || pi_star)
//   psi(w) = f(w) - w f'(w)      policy-gradient weight for D_f(pi_star || pi_theta)

#include <cmath>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "emapg/tape.hpp"

namespace emapg {

enum class FKind {
  kForwardKl,      // f(t) = -log t
  kReverseKl,      // f(t) = t log t
  kPearson,        // (t - 1)^2
  kNeyman,         // (t - 1)^2 / t
  kHellinger,      // (sqrt t - 1)^2 / 2
  kJensenShannon,  // (t log t - (t + 1) log((t + 1) / 2)) / 2
  kTotalVariation, // |t - 1| / 2
  kAlpha,          // (t^a - 1 - a (t - 1)) / (a (a - 1))
};

class FGenerator {
 public:
  static FGenerator forward_kl() { return FGenerator(FKind::kForwardKl); }
  static FGenerator reverse_kl() { return FGenerator(FKind::kReverseKl); }
  static FGenerator pearson() { return FGenerator(FKind::kPearson); }
  static FGenerator neyman() { return FGenerator(FKind::kNeyman); }
  static FGenerator hellinger() { return FGenerator(FKind::kHellinger); }
  static FGenerator jensen_shannon() { return FGenerator(FKind::kJensenShannon); }
  static FGenerator total_variation() { return FGenerator(FKind::kTotalVariation); }
  static FGenerator alpha_divergence(double alpha);

  // Accepts FKL, RKL, PEARSON, NEYMAN, HELLINGER, JS, TV, ALPHA (case-insensitive).
  static FGenerator from_name(std::string_view name, double alpha = 3.0);

  // All catalog members; alpha-divergence with the given parameter.
  static std::vector<FGenerator> catalog(double alpha = 3.0);

  FKind kind() const { return kind_; }
  double alpha() const { return alpha_; }
  std::string name() const;

  double f(double t) const { return f_expr(t); }
  double f_prime(double t) const;
  bool has_f_prime_inverse() const { return kind_ != FKind::kTotalVariation; }
  // Inverse of f' on its range. Arguments at or below the lower end of the
  // range map to 0; arguments at or beyond the pole throw DomainError.
  double f_prime_inverse(double s) const;
  // Supremum of the range of f' (the pole of the inverse); +inf if none.
  double f_prime_sup() const;
  // Value of f' as t -> 0+; -inf if unbounded.
  double f_prime_floor() const;

  double g(double w) const { return g_expr(w, std::log(w)); }
  double phi(double w) const { return f_prime(1.0 / w); }
  double psi(double w) const { return f(w) - w * f_prime(w); }

  DiffScalar f(const DiffScalar& t) const { return f_expr(t); }
  // g on the tape, given w and log w (passing both keeps log(exp(.)) round
  // trips off the tape).
  DiffScalar g(const DiffScalar& w, const DiffScalar& log_w) const { return g_expr(w, log_w); }

  template <class T>
  T f_expr(const T& t) const;
  template <class T>
  T g_expr(const T& w, const T& log_w) const;

 private:
  explicit FGenerator(FKind kind, double alpha = 0.0) : kind_(kind), alpha_(alpha) {}

  FKind kind_;
  double alpha_;
};

template <class T>
T FGenerator::f_expr(const T& t) const {
  using std::abs;
  using std::log;
  using std::pow;
  using std::sqrt;
  switch (kind_) {
    case FKind::kForwardKl:
      return -log(t);
    case FKind::kReverseKl:
      return t * log(t);
    case FKind::kPearson:
      return (t - 1.0) * (t - 1.0);
    case FKind::kNeyman:
      return (t - 1.0) * (t - 1.0) / t;
    case FKind::kHellinger: {
      const T d = sqrt(t) - 1.0;
      return 0.5 * d * d;
    }
    case FKind::kJensenShannon:
      return 0.5 * (t * log(t) - (t + 1.0) * log((t + 1.0) * 0.5));
    case FKind::kTotalVariation:
      return 0.5 * abs(t - 1.0);
    case FKind::kAlpha: {
      const double a = alpha_;
      return (pow(t, a) - 1.0 - a * (t - 1.0)) / (a * (a - 1.0));
    }
  }
  return T(0.0);
}

template <class T>
T FGenerator::g_expr(const T& w, const T& log_w) const {
  using std::abs;
  using std::log;
  using std::pow;
  using std::sqrt;
  switch (kind_) {
    case FKind::kForwardKl:
      return w * log_w;
    case FKind::kReverseKl:
      return -log_w;
    case FKind::kPearson:
      return (1.0 - w) * (1.0 - w) / w;
    case FKind::kNeyman:
      return (1.0 - w) * (1.0 - w);
    case FKind::kHellinger: {
      const T d = 1.0 - sqrt(w);
      return 0.5 * d * d;
    }
    case FKind::kJensenShannon:
      return 0.5 * (-log_w - (1.0 + w) * log((1.0 + w) / (2.0 * w)));
    case FKind::kTotalVariation:
      return 0.5 * abs(1.0 - w);
    case FKind::kAlpha: {
      const double a = alpha_;
      return (pow(w, 1.0 - a) + (a - 1.0) * w - a) / (a * (a - 1.0));
    }
  }
  return T(0.0);
}

}  // namespace emapg
