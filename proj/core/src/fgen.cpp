#include "emapg/fgen.hpp"

#include <algorithm>
#include <cctype>

#include "emapg/errors.hpp"

namespace emapg {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

FGenerator FGenerator::alpha_divergence(double alpha) {
  if (!std::isfinite(alpha) || alpha == -1.0 || alpha == 0.0 || alpha == 1.0) {
    throw ArgumentError("alpha-divergence needs a finite alpha outside {-1, 0, 1}");
  }
  return FGenerator(FKind::kAlpha, alpha);
}

FGenerator FGenerator::from_name(std::string_view name, double alpha) {
  std::string n(name);
  std::transform(n.begin(), n.end(), n.begin(), [](unsigned char c) { return std::toupper(c); });
  if (n == "FKL") return forward_kl();
  if (n == "RKL") return reverse_kl();
  if (n == "PEARSON") return pearson();
  if (n == "NEYMAN") return neyman();
  if (n == "HELLINGER") return hellinger();
  if (n == "JS") return jensen_shannon();
  if (n == "TV") return total_variation();
  if (n == "ALPHA") return alpha_divergence(alpha);
  throw ArgumentError("unknown f-generator '" + std::string(name) + "'");
}

std::vector<FGenerator> FGenerator::catalog(double alpha) {
  return {forward_kl(), reverse_kl(), pearson(),         neyman(),
          hellinger(),  jensen_shannon(), total_variation(), alpha_divergence(alpha)};
}

std::string FGenerator::name() const {
  switch (kind_) {
    case FKind::kForwardKl: return "FKL";
    case FKind::kReverseKl: return "RKL";
    case FKind::kPearson: return "PEARSON";
    case FKind::kNeyman: return "NEYMAN";
    case FKind::kHellinger: return "HELLINGER";
    case FKind::kJensenShannon: return "JS";
    case FKind::kTotalVariation: return "TV";
    case FKind::kAlpha: return "ALPHA";
  }
  return "?";
}

double FGenerator::f_prime(double t) const {
  switch (kind_) {
    case FKind::kForwardKl: return -1.0 / t;
    case FKind::kReverseKl: return std::log(t) + 1.0;
    case FKind::kPearson: return 2.0 * (t - 1.0);
    case FKind::kNeyman: return 1.0 - 1.0 / (t * t);
    case FKind::kHellinger: return 0.5 * (1.0 - 1.0 / std::sqrt(t));
    case FKind::kJensenShannon: return 0.5 * std::log(2.0 * t / (t + 1.0));
    case FKind::kTotalVariation:
      // Subgradient 0 at the kink.
      return t > 1.0 ? 0.5 : (t < 1.0 ? -0.5 : 0.0);
    case FKind::kAlpha: return (std::pow(t, alpha_ - 1.0) - 1.0) / (alpha_ - 1.0);
  }
  return 0.0;
}

double FGenerator::f_prime_sup() const {
  switch (kind_) {
    case FKind::kForwardKl: return 0.0;
    case FKind::kNeyman: return 1.0;
    case FKind::kHellinger: return 0.5;
    case FKind::kJensenShannon: return 0.5 * std::log(2.0);
    case FKind::kAlpha: return alpha_ < 1.0 ? 1.0 / (1.0 - alpha_) : kInf;
    case FKind::kTotalVariation: return 0.5;
    default: return kInf;
  }
}

double FGenerator::f_prime_floor() const {
  switch (kind_) {
    case FKind::kPearson: return -2.0;
    case FKind::kAlpha: return alpha_ > 1.0 ? -1.0 / (alpha_ - 1.0) : -kInf;
    case FKind::kTotalVariation: return -0.5;
    default: return -kInf;
  }
}

double FGenerator::f_prime_inverse(double s) const {
  if (!has_f_prime_inverse()) {
    throw UnsupportedError("f' has no inverse for " + name());
  }
  if (!(s < f_prime_sup())) {
    throw DomainError(name() + ": f' inverse argument " + std::to_string(s) + " at or past the pole");
  }
  if (s <= f_prime_floor()) return 0.0;
  switch (kind_) {
    case FKind::kForwardKl: return -1.0 / s;
    case FKind::kReverseKl: return std::exp(s - 1.0);
    case FKind::kPearson: return 1.0 + 0.5 * s;
    case FKind::kNeyman: return 1.0 / std::sqrt(1.0 - s);
    case FKind::kHellinger: {
      const double d = 1.0 - 2.0 * s;
      return 1.0 / (d * d);
    }
    case FKind::kJensenShannon: return 1.0 / (2.0 * std::exp(-2.0 * s) - 1.0);
    case FKind::kAlpha: return std::pow(1.0 + (alpha_ - 1.0) * s, 1.0 / (alpha_ - 1.0));
    case FKind::kTotalVariation: break;
  }
  return 0.0;
}

}  // namespace emapg
