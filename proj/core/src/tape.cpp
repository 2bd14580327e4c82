#include "emapg/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "emapg/errors.hpp"

namespace emapg {

namespace {

Tape* common_tape(const DiffScalar& a, const DiffScalar& b) {
  Tape* t = a.tape() != nullptr ? a.tape() : b.tape();
  if (a.tape() != nullptr && b.tape() != nullptr && a.tape() != b.tape()) {
    throw ArgumentError("operands live on different tapes");
  }
  return t;
}

Tape* common_tape(std::span<const DiffScalar> xs) {
  Tape* t = nullptr;
  for (const auto& x : xs) {
    if (x.tape() == nullptr) continue;
    if (t != nullptr && t != x.tape()) throw ArgumentError("operands live on different tapes");
    t = x.tape();
  }
  return t;
}

DiffScalar unary(OpTag op, const DiffScalar& a, double value, double partial) {
  if (a.is_constant()) return DiffScalar(value);
  return a.tape()->record(op, value, {{a, partial}});
}

DiffScalar binary(OpTag op, const DiffScalar& a, const DiffScalar& b, double value, double da,
                  double db) {
  Tape* t = common_tape(a, b);
  if (t == nullptr) return DiffScalar(value);
  return t->record(op, value, {{a, da}, {b, db}});
}

}  // namespace

DiffScalar Tape::variable(double value) {
  return record(OpTag::kLeaf, value, {});
}

DiffScalar Tape::record(OpTag op, double value,
                        std::initializer_list<std::pair<DiffScalar, double>> inputs) {
  if (edge_begin_.empty()) edge_begin_.push_back(0);
  for (const auto& [x, partial] : inputs) {
    if (x.is_constant()) continue;
    if (x.tape() != this) throw ArgumentError("input recorded on another tape");
    edges_.push_back({x.node(), partial});
  }
  ops_.push_back(op);
  values_.push_back(value);
  edge_begin_.push_back(static_cast<std::uint32_t>(edges_.size()));
  return DiffScalar(this, static_cast<std::int32_t>(ops_.size() - 1), value);
}

DiffScalar Tape::record(OpTag op, double value, std::span<const DiffScalar> inputs,
                        std::span<const double> partials) {
  if (inputs.size() != partials.size()) throw ArgumentError("inputs/partials size mismatch");
  if (edge_begin_.empty()) edge_begin_.push_back(0);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (inputs[i].is_constant()) continue;
    if (inputs[i].tape() != this) throw ArgumentError("input recorded on another tape");
    edges_.push_back({inputs[i].node(), partials[i]});
  }
  ops_.push_back(op);
  values_.push_back(value);
  edge_begin_.push_back(static_cast<std::uint32_t>(edges_.size()));
  return DiffScalar(this, static_cast<std::int32_t>(ops_.size() - 1), value);
}

std::span<const TapeEdge> Tape::edges(std::int32_t node) const {
  const auto n = static_cast<std::size_t>(node);
  if (n >= ops_.size()) throw ArgumentError("node out of range");
  return {edges_.data() + edge_begin_[n], edge_begin_[n + 1] - edge_begin_[n]};
}

void Tape::clear() {
  ops_.clear();
  values_.clear();
  edge_begin_.clear();
  edges_.clear();
}

std::vector<double> Tape::adjoints(const DiffScalar& out) const {
  std::vector<double> adj(ops_.size(), 0.0);
  if (out.is_constant()) return adj;
  if (out.tape() != this) throw ArgumentError("output recorded on another tape");
  adj[static_cast<std::size_t>(out.node())] = 1.0;
  for (std::int64_t i = out.node(); i >= 0; --i) {
    const auto n = static_cast<std::size_t>(i);
    const double a = adj[n];
    if (a == 0.0) continue;
    for (std::uint32_t e = edge_begin_[n]; e < edge_begin_[n + 1]; ++e) {
      adj[static_cast<std::size_t>(edges_[e].parent)] += a * edges_[e].partial;
    }
  }
  return adj;
}

std::vector<double> Tape::gradient(const DiffScalar& out, std::span<const DiffScalar> wrt) const {
  const std::vector<double> adj = adjoints(out);
  std::vector<double> g(wrt.size(), 0.0);
  for (std::size_t i = 0; i < wrt.size(); ++i) {
    if (wrt[i].is_constant()) continue;
    if (wrt[i].tape() != this) throw ArgumentError("gradient target recorded on another tape");
    g[i] = adj[static_cast<std::size_t>(wrt[i].node())];
  }
  return g;
}

DiffScalar operator+(const DiffScalar& a, const DiffScalar& b) {
  return binary(OpTag::kAdd, a, b, a.value() + b.value(), 1.0, 1.0);
}

DiffScalar operator-(const DiffScalar& a, const DiffScalar& b) {
  return binary(OpTag::kSub, a, b, a.value() - b.value(), 1.0, -1.0);
}

DiffScalar operator*(const DiffScalar& a, const DiffScalar& b) {
  return binary(OpTag::kMul, a, b, a.value() * b.value(), b.value(), a.value());
}

DiffScalar operator/(const DiffScalar& a, const DiffScalar& b) {
  if (b.value() == 0.0) throw DomainError("division by zero");
  const double q = a.value() / b.value();
  return binary(OpTag::kDiv, a, b, q, 1.0 / b.value(), -q / b.value());
}

DiffScalar operator-(const DiffScalar& a) {
  return unary(OpTag::kNeg, a, -a.value(), -1.0);
}

DiffScalar& operator+=(DiffScalar& a, const DiffScalar& b) { return a = a + b; }
DiffScalar& operator-=(DiffScalar& a, const DiffScalar& b) { return a = a - b; }
DiffScalar& operator*=(DiffScalar& a, const DiffScalar& b) { return a = a * b; }

DiffScalar log(const DiffScalar& a) {
  if (!(a.value() > 0.0)) {
    throw DomainError("log of nonpositive value " + std::to_string(a.value()));
  }
  return unary(OpTag::kLog, a, std::log(a.value()), 1.0 / a.value());
}

DiffScalar exp(const DiffScalar& a) {
  const double e = std::exp(a.value());
  return unary(OpTag::kExp, a, e, e);
}

DiffScalar sqrt(const DiffScalar& a) {
  if (!(a.value() > 0.0)) {
    throw DomainError("sqrt of nonpositive value " + std::to_string(a.value()));
  }
  const double s = std::sqrt(a.value());
  return unary(OpTag::kSqrt, a, s, 0.5 / s);
}

DiffScalar abs(const DiffScalar& a) {
  const double v = a.value();
  const double d = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
  return unary(OpTag::kAbs, a, std::fabs(v), d);
}

DiffScalar pow(const DiffScalar& a, double exponent) {
  const double x = a.value();
  const bool integral = std::nearbyint(exponent) == exponent;
  if (x < 0.0 && !integral) throw DomainError("pow: negative base with non-integer exponent");
  if (x == 0.0 && exponent < 1.0 && exponent != 0.0) {
    throw DomainError("pow: zero base with exponent below one");
  }
  const double v = std::pow(x, exponent);
  const double d = exponent == 0.0 ? 0.0 : exponent * std::pow(x, exponent - 1.0);
  return unary(OpTag::kPow, a, v, d);
}

DiffScalar sign(const DiffScalar& a) {
  const double v = a.value();
  return unary(OpTag::kSign, a, v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0), 0.0);
}

DiffScalar stop_gradient(const DiffScalar& a) {
  if (a.is_constant()) return a;
  return a.tape()->record(OpTag::kStopGradient, a.value(), {});
}

double log_sum_exp(std::span<const double> xs) {
  if (xs.empty()) throw ArgumentError("log_sum_exp of empty range");
  const double m = *std::max_element(xs.begin(), xs.end());
  if (std::isinf(m)) return m;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

DiffScalar log_sum_exp(std::span<const DiffScalar> xs) {
  std::vector<double> v(xs.size());
  std::transform(xs.begin(), xs.end(), v.begin(), [](const DiffScalar& x) { return x.value(); });
  const double lse = log_sum_exp(std::span<const double>(v));
  Tape* t = common_tape(xs);
  if (t == nullptr) return DiffScalar(lse);
  std::vector<double> partials(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) partials[i] = std::exp(v[i] - lse);
  return t->record(OpTag::kLogSumExp, lse, xs, partials);
}

DiffScalar sum(std::span<const DiffScalar> xs) {
  double s = 0.0;
  for (const auto& x : xs) s += x.value();
  Tape* t = common_tape(xs);
  if (t == nullptr) return DiffScalar(s);
  std::vector<double> ones(xs.size(), 1.0);
  return t->record(OpTag::kSum, s, xs, ones);
}

}  // namespace emapg
