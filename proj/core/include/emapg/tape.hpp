#pragma once

// Reverse-mode automatic differentiation over scalars.
//
// A Tape is an append-only arena of nodes. Each node stores its value and a
// list of (parent, local partial) edges. Stop-gradient nodes carry the value
// of their input but no edges, so no adjoint ever flows through them.

#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

namespace emapg {

class Tape;

enum class OpTag : std::uint8_t {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kNeg,
  kLog,
  kExp,
  kSqrt,
  kAbs,
  kPow,
  kSign,
  kStopGradient,
  kLogSumExp,
  kSum,
};

// A scalar that is either a plain constant (no tape) or a node on a tape.
class DiffScalar {
 public:
  DiffScalar() = default;
  DiffScalar(double constant) : value_(constant) {}  // NOLINT: implicit on purpose

  double value() const { return value_; }
  bool is_constant() const { return tape_ == nullptr; }
  std::int32_t node() const { return node_; }
  Tape* tape() const { return tape_; }

 private:
  friend class Tape;
  DiffScalar(Tape* tape, std::int32_t node, double value)
      : tape_(tape), node_(node), value_(value) {}

  Tape* tape_ = nullptr;
  std::int32_t node_ = -1;
  double value_ = 0.0;
};

struct TapeEdge {
  std::int32_t parent;
  double partial;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Creates an independent leaf.
  DiffScalar variable(double value);

  // Records a node. Edges whose parent is a constant are dropped.
  DiffScalar record(OpTag op, double value, std::initializer_list<std::pair<DiffScalar, double>> inputs);
  DiffScalar record(OpTag op, double value, std::span<const DiffScalar> inputs,
                    std::span<const double> partials);

  std::size_t size() const { return ops_.size(); }
  OpTag op(std::int32_t node) const { return ops_.at(static_cast<std::size_t>(node)); }
  double value(std::int32_t node) const { return values_.at(static_cast<std::size_t>(node)); }
  std::span<const TapeEdge> edges(std::int32_t node) const;

  // Drops every node. Handles created before the call become invalid.
  void clear();

  // Adjoint of `out` with respect to every node of the tape (index = node id).
  std::vector<double> adjoints(const DiffScalar& out) const;

  // d out / d x for each x in `wrt`. Constants get 0.
  std::vector<double> gradient(const DiffScalar& out, std::span<const DiffScalar> wrt) const;

 private:
  std::vector<OpTag> ops_;
  std::vector<double> values_;
  std::vector<std::uint32_t> edge_begin_;  // size() + 1 offsets into edges_
  std::vector<TapeEdge> edges_;
};

DiffScalar operator+(const DiffScalar& a, const DiffScalar& b);
DiffScalar operator-(const DiffScalar& a, const DiffScalar& b);
DiffScalar operator*(const DiffScalar& a, const DiffScalar& b);
DiffScalar operator/(const DiffScalar& a, const DiffScalar& b);
DiffScalar operator-(const DiffScalar& a);
DiffScalar& operator+=(DiffScalar& a, const DiffScalar& b);
DiffScalar& operator-=(DiffScalar& a, const DiffScalar& b);
DiffScalar& operator*=(DiffScalar& a, const DiffScalar& b);

DiffScalar log(const DiffScalar& a);
DiffScalar exp(const DiffScalar& a);
DiffScalar sqrt(const DiffScalar& a);
DiffScalar abs(const DiffScalar& a);
DiffScalar pow(const DiffScalar& a, double exponent);
DiffScalar sign(const DiffScalar& a);
DiffScalar stop_gradient(const DiffScalar& a);
DiffScalar log_sum_exp(std::span<const DiffScalar> xs);
DiffScalar sum(std::span<const DiffScalar> xs);

// Numerically stable log(sum(exp(x))) for plain doubles; shared with the
// tape so taped and untaped log-probabilities agree bit for bit.
double log_sum_exp(std::span<const double> xs);

}  // namespace emapg
