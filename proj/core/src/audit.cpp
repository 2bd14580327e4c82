#include "emapg/audit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

#include "emapg/errors.hpp"
#include "emapg/fdiv.hpp"

namespace emapg {

namespace {

class MaxErr {
 public:
  void add(double e) {
    if (std::isnan(e)) e = std::numeric_limits<double>::infinity();
    err_ = std::max(err_, e);
  }
  double get() const { return err_; }

 private:
  double err_ = 0.0;
};

std::vector<double> zeros(std::size_t n) { return std::vector<double>(n, 0.0); }

void axpy(std::vector<double>& y, double a, std::span<const double> x) {
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

// grad of M_q = sum_{j in q} pi_j with respect to the logits.
std::vector<double> mass_gradient(const ProbSlot& theta, const TopkIndexSet& q) {
  double mass = 0.0;
  for (std::size_t j : q.indices()) mass += theta.prob(j);
  std::vector<double> g(theta.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    g[i] = theta.prob(i) * ((q.contains(i) ? 1.0 : 0.0) - mass);
  }
  return g;
}

TopkIndexSet random_index_set(CounterRng& rng, std::size_t vocab) {
  std::vector<std::size_t> idx(vocab);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = vocab; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
  idx.resize(static_cast<std::size_t>(rng() % (vocab + 1)));
  return TopkIndexSet(std::move(idx), vocab);
}

double half_sq_log_ratio(const ProbSlot& theta, const ProbSlot& ref) {
  double e = 0.0;
  for (std::size_t j = 0; j < theta.size(); ++j) {
    const double lw = ref.log_prob(j) - theta.log_prob(j);
    e += theta.prob(j) * 0.5 * lw * lw;
  }
  return e;
}

double value_target(const PolicyPair& p, EstimatorVariant v) {
  switch (v) {
    case EstimatorVariant::kK2: return half_sq_log_ratio(p.theta, p.ref);
    case EstimatorVariant::kK5:
    case EstimatorVariant::kTopkForward: return exact_kl(p.theta, p.ref, KlDirection::kForward);
    default: return exact_kl(p.theta, p.ref, KlDirection::kReverse);
  }
}

std::vector<double> grad_target(const PolicyPair& p, EstimatorVariant v) {
  switch (v) {
    case EstimatorVariant::kK1: return zeros(p.size());
    case EstimatorVariant::kK3:
    case EstimatorVariant::kK5:
    case EstimatorVariant::kTopkForward:
      return exact_kl_grad(p.theta, p.ref, KlDirection::kForward);
    default: return exact_kl_grad(p.theta, p.ref, KlDirection::kReverse);
  }
}

const EstimatorVariant kSix[] = {EstimatorVariant::kK1, EstimatorVariant::kK2,
                                 EstimatorVariant::kK3, EstimatorVariant::kK3PlusPlus,
                                 EstimatorVariant::kK4, EstimatorVariant::kK5};

// Two-position Markov model over a small vocabulary: slot 0 for the first
// token, slot 1 + y0 for the second.
struct MarkovModel {
  std::size_t vocab;
  std::vector<std::vector<double>> theta;  // 1 + vocab slots of logits
  std::vector<ProbSlot> ref;
};

MarkovModel random_markov(CounterRng& rng, std::size_t vocab) {
  MarkovModel m;
  m.vocab = vocab;
  for (std::size_t s = 0; s < 1 + vocab; ++s) {
    std::vector<double> z(vocab);
    std::vector<double> r(vocab);
    for (double& x : z) x = rng.normal();
    for (double& x : r) x = rng.normal();
    m.theta.push_back(z);
    m.ref.push_back(ProbSlot::from_logits(r));
  }
  return m;
}

std::vector<double> concat_gradient(const std::vector<DiffSlot>& slots, std::span<const double> adj) {
  std::vector<double> g;
  for (const auto& s : slots) {
    const auto gs = s.logit_gradient(adj);
    g.insert(g.end(), gs.begin(), gs.end());
  }
  return g;
}

void audit_sequence(const EstimatorAuditConfig& cfg, AuditReport& report) {
  constexpr std::size_t kVocab = 3;
  CounterRng rng(cfg.seed, 0, "audit.sequence");
  MaxErr seq_err, past_err, token_err, token_topk_err;
  double differ = 0.0;
  const std::size_t models = std::max<std::size_t>(1, cfg.pairs / 5);
  for (std::size_t m = 0; m < models; ++m) {
    const MarkovModel model = random_markov(rng, kVocab);
    const std::size_t dim = (1 + kVocab) * kVocab;
    std::vector<double> e_seq = zeros(dim), e_past = zeros(dim), e_tok = zeros(dim),
                        e_topk = zeros(dim), oracle_tok = zeros(dim);
    std::vector<ProbSlot> theta_slots;
    for (const auto& z : model.theta) theta_slots.push_back(ProbSlot::from_logits(z));

    // Oracle for the sequence-level objective: the joint KL as one tape expression.
    std::vector<double> oracle_seq;
    {
      Tape tape;
      std::vector<DiffSlot> slots;
      for (const auto& z : model.theta) slots.emplace_back(tape, z);
      std::vector<DiffScalar> terms;
      for (std::size_t y0 = 0; y0 < kVocab; ++y0) {
        for (std::size_t y1 = 0; y1 < kVocab; ++y1) {
          const DiffScalar lp = slots[0].log_prob(y0) + slots[1 + y0].log_prob(y1);
          const double lr = model.ref[0].log_prob(y0) + model.ref[1 + y0].log_prob(y1);
          terms.push_back(exp(lp) * (lp - lr));
        }
      }
      oracle_seq = concat_gradient(slots, tape.adjoints(sum(std::span<const DiffScalar>(terms))));
    }
    // Oracle for the token-level objective: per-slot analytic KL gradients
    // weighted by the probability of reaching the slot.
    {
      const auto g0 = exact_kl_grad(theta_slots[0], model.ref[0], KlDirection::kReverse);
      std::copy(g0.begin(), g0.end(), oracle_tok.begin());
      for (std::size_t y0 = 0; y0 < kVocab; ++y0) {
        const auto g1 = exact_kl_grad(theta_slots[1 + y0], model.ref[1 + y0], KlDirection::kReverse);
        for (std::size_t i = 0; i < kVocab; ++i) {
          oracle_tok[(1 + y0) * kVocab + i] += theta_slots[0].prob(y0) * g1[i];
        }
      }
    }

    for (std::size_t y0 = 0; y0 < kVocab; ++y0) {
      for (std::size_t y1 = 0; y1 < kVocab; ++y1) {
        const double weight = theta_slots[0].prob(y0) * theta_slots[1 + y0].prob(y1);
        const std::size_t traj[2] = {y0, y1};
        auto run = [&](auto&& build) {
          Tape tape;
          std::vector<DiffSlot> slots;
          for (const auto& z : model.theta) slots.emplace_back(tape, z);
          std::vector<TapedPair> pos;
          pos.emplace_back(slots[0], model.ref[0], nullptr);
          pos.emplace_back(slots[1 + y0], model.ref[1 + y0], nullptr);
          const DiffScalar out = build(pos);
          // TapedPair copies the slot; leaves are shared, so read through `slots`.
          return concat_gradient(slots, tape.adjoints(out));
        };
        axpy(e_seq, weight, run([&](std::vector<TapedPair>& pos) {
               return sequence_kl_estimator(traj, pos);
             }));
        axpy(e_past, weight, run([&](std::vector<TapedPair>& pos) {
               const double rho0 = pos[0].theta.values().log_prob(y0) - model.ref[0].log_prob(y0);
               return rho0 * pos[1].theta.log_prob(y1);
             }));
        EstimatorSpec k4{EstimatorVariant::kK4, 0, ClipRange::unclipped(), TailForm::kCanonical};
        axpy(e_tok, weight, run([&](std::vector<TapedPair>& pos) {
               return token_kl_sum(traj, pos, k4);
             }));
        EstimatorSpec topk{EstimatorVariant::kTopkReverse, 1, ClipRange::unclipped(),
                           TailForm::kCanonical};
        axpy(e_topk, weight, run([&](std::vector<TapedPair>& pos) {
               return token_kl_sum(traj, pos, topk);
             }));
      }
    }
    seq_err.add(max_abs_diff(e_seq, oracle_seq));
    past_err.add(max_abs_diff(e_past, zeros(dim)));
    token_err.add(max_abs_diff(e_tok, oracle_tok));
    token_topk_err.add(max_abs_diff(e_topk, oracle_tok));
    differ = std::max(differ, max_abs_diff(e_seq, e_tok));
  }
  report.add({"sequence", "sequence_estimator", "grad=grad joint KL", seq_err.get(), 1e-9});
  report.add({"sequence", "past_term", "E[rho_0 grad lp_1]=0", past_err.get(), 1e-10});
  report.add({"sequence", "token_sum_k4", "grad=sum_n grad KL_n", token_err.get(), cfg.grad_tol});
  report.add({"sequence", "token_sum_topk_reverse", "grad=sum_n grad KL_n", token_topk_err.get(),
              cfg.grad_tol});
  report.add({"sequence", "token_vs_sequence", "gradients differ", differ, 1e-6, false});
}

}  // namespace

void AuditReport::append(const AuditReport& other) {
  rows_.insert(rows_.end(), other.rows_.begin(), other.rows_.end());
}

bool AuditReport::passed() const {
  return std::all_of(rows_.begin(), rows_.end(), [](const AuditRow& r) { return r.pass(); });
}

bool AuditReport::passed(const std::string& section) const {
  return std::all_of(rows_.begin(), rows_.end(),
                     [&](const AuditRow& r) { return r.section != section || r.pass(); });
}

std::size_t AuditReport::count(const std::string& section) const {
  return static_cast<std::size_t>(std::count_if(
      rows_.begin(), rows_.end(), [&](const AuditRow& r) { return r.section == section; }));
}

void AuditReport::write_csv(std::ostream& os) const {
  os << "section,item,check,error,tolerance,pass\n";
  char buf[64];
  for (const auto& r : rows_) {
    os << r.section << ',' << r.item << ',' << r.check << ',';
    std::snprintf(buf, sizeof buf, "%.6e,%s%.1e", r.error, r.upper_bound ? "<=" : ">", r.tolerance);
    os << buf << ',' << (r.pass() ? "pass" : "FAIL") << '\n';
  }
}

Moments enumerate_moments(const PolicyPair& pair,
                          const std::function<EstimatorSample(TapedPair&, std::size_t)>& est) {
  Moments m;
  m.grad.assign(pair.size(), 0.0);
  const ProbSlot& sampler = pair.sampler();
  Tape tape;
  for (std::size_t p = 0; p < pair.size(); ++p) {
    const double weight = sampler.prob(p);
    if (weight == 0.0) continue;
    tape.clear();
    TapedPair tp(tape, pair);
    const EstimatorSample s = est(tp, p);
    m.value += weight * s.value.value();
    axpy(m.grad, weight, tp.theta.logit_gradient(s.value));
  }
  return m;
}

PolicyPair random_pair(CounterRng& rng, std::size_t vocab, double logit_scale, bool with_sampling) {
  std::vector<double> theta(vocab), ref(vocab);
  for (double& x : theta) x = logit_scale * rng.normal();
  for (double& x : ref) x = logit_scale * rng.normal();
  std::optional<ProbSlot> sampling;
  if (with_sampling) {
    std::vector<double> s(vocab);
    for (double& x : s) x = logit_scale * rng.normal();
    sampling = ProbSlot::from_logits(s);
  }
  return PolicyPair::make(std::move(theta), ProbSlot::from_logits(ref), std::move(sampling));
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ArgumentError("size mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::fabs(a[i] - b[i]);
    m = std::isnan(d) ? std::numeric_limits<double>::infinity() : std::max(m, d);
  }
  return m;
}

AuditReport audit_estimators(const EstimatorAuditConfig& cfg) {
  if (cfg.vocab < 2 || cfg.pairs == 0) throw ArgumentError("need vocab >= 2 and pairs >= 1");
  AuditReport report;
  CounterRng rng(cfg.seed, 0, "audit.estimators.pairs");
  CounterRng off_rng(cfg.seed, 0, "audit.estimators.offpolicy_pairs");
  CounterRng set_rng(cfg.seed, 0, "audit.estimators.index_sets");
  std::vector<PolicyPair> pairs;
  std::vector<PolicyPair> off_pairs;
  for (std::size_t i = 0; i < cfg.pairs; ++i) {
    pairs.push_back(random_pair(rng, cfg.vocab, cfg.logit_scale, false));
    off_pairs.push_back(random_pair(off_rng, cfg.vocab, cfg.logit_scale, true));
  }

  // Estimator claims on-policy.
  for (EstimatorVariant v : kSix) {
    MaxErr ve, ge;
    for (const auto& pair : pairs) {
      const Moments m = enumerate_moments(
          pair, [&](TapedPair& tp, std::size_t p) { return sampled_kl(tp, v, p); });
      ve.add(std::fabs(m.value - value_target(pair, v)));
      ge.add(max_abs_diff(m.grad, grad_target(pair, v)));
    }
    const std::string vt = v == EstimatorVariant::kK2   ? "E[(log w)^2/2]"
                           : v == EstimatorVariant::kK5 ? "forward KL"
                                                        : "reverse KL";
    const std::string gt = v == EstimatorVariant::kK1 ? "zero"
                           : (v == EstimatorVariant::kK3 || v == EstimatorVariant::kK5)
                               ? "grad forward KL"
                               : "grad reverse KL";
    report.add({"sampled", to_string(v), "value=" + vt, ve.get(), cfg.value_tol});
    report.add({"sampled", to_string(v), "grad=" + gt, ge.get(), cfg.grad_tol});
  }
  {
    double bias = 0.0;
    for (const auto& pair : pairs) {
      bias = std::max(bias, std::fabs(half_sq_log_ratio(pair.theta, pair.ref) -
                                      exact_kl(pair.theta, pair.ref, KlDirection::kReverse)));
    }
    report.add({"sampled", "k2", "value biased for reverse KL (witness)", bias, 1e-6, false});
  }

  // Top-k estimators, both tails.
  for (EstimatorVariant dir : {EstimatorVariant::kTopkReverse, EstimatorVariant::kTopkForward}) {
    MaxErr ve, ge, k0, kv, base_ve, base_model;
    double base_bias = 0.0;
    std::size_t sets = 0;
    for (const auto& pair : pairs) {
      Tape scratch;
      TapedPair view(scratch, pair);
      std::vector<TopkIndexSet> qs;
      for (std::size_t k = 0; k <= cfg.vocab; ++k) qs.push_back(default_topk_set(view, dir, k));
      for (std::size_t r = 0; r < cfg.random_sets; ++r) qs.push_back(random_index_set(set_rng, cfg.vocab));
      const double vt = value_target(pair, dir);
      const std::vector<double> gt = grad_target(pair, dir);
      for (const auto& q : qs) {
        ++sets;
        for (TailForm tail : {TailForm::kCanonical, TailForm::kBaseline}) {
          const Moments m = enumerate_moments(pair, [&](TapedPair& tp, std::size_t p) {
            return dir == EstimatorVariant::kTopkReverse
                       ? topk_reverse_kl(tp, p, q, ClipRange::unclipped(), tail)
                       : topk_forward_kl(tp, p, q, ClipRange::unclipped(), tail);
          });
          if (tail == TailForm::kCanonical) {
            ve.add(std::fabs(m.value - vt));
            ge.add(max_abs_diff(m.grad, gt));
          } else {
            base_ve.add(std::fabs(m.value - vt));
            std::vector<double> predicted = gt;
            const double sign = dir == EstimatorVariant::kTopkReverse ? 1.0 : -1.0;
            axpy(predicted, sign, mass_gradient(pair.theta, q));
            base_model.add(max_abs_diff(m.grad, predicted));
            base_bias = std::max(base_bias, max_abs_diff(m.grad, gt));
          }
        }
      }
      // k = V is the exact divergence for every sample.
      const TopkIndexSet full = default_topk_set(view, dir, cfg.vocab);
      for (std::size_t p = 0; p < cfg.vocab; ++p) {
        Tape tape;
        TapedPair tp(tape, pair);
        const double a = (dir == EstimatorVariant::kTopkReverse ? topk_reverse_kl(tp, p, full)
                                                                : topk_forward_kl(tp, p, full))
                             .value.value();
        kv.add(std::fabs(a - vt));
      }
      // k = 0 must reproduce the single-sample estimator value exactly.
      const TopkIndexSet empty({}, cfg.vocab);
      const EstimatorVariant single =
          dir == EstimatorVariant::kTopkReverse ? EstimatorVariant::kK4 : EstimatorVariant::kK5;
      for (std::size_t p = 0; p < cfg.vocab; ++p) {
        for (TailForm tail : {TailForm::kCanonical, TailForm::kBaseline}) {
          Tape tape;
          TapedPair tp(tape, pair);
          const double a = (dir == EstimatorVariant::kTopkReverse
                                ? topk_reverse_kl(tp, p, empty, ClipRange::unclipped(), tail)
                                : topk_forward_kl(tp, p, empty, ClipRange::unclipped(), tail))
                               .value.value();
          const double b = sampled_kl(tp, single, p).value.value();
          k0.add(std::fabs(a - b));
        }
      }
    }
    const std::string item = to_string(dir);
    const std::string n = std::to_string(sets) + " index sets";
    report.add({"topk", item, "value unbiased over " + n, ve.get(), cfg.value_tol});
    report.add({"topk", item, "grad unbiased over " + n, ge.get(), cfg.grad_tol});
    report.add({"topk", item, "k=V value equals exact KL per sample", kv.get(), 1e-12});
    report.add({"topk", item, "k=0 value equals single-sample estimator", k0.get(), 0.0});
    report.add({"topk_baseline", item, "value unbiased", base_ve.get(), cfg.value_tol});
    report.add({"topk_baseline", item, "grad bias equals +/-grad M_q", base_model.get(), cfg.grad_tol});
    report.add({"topk_baseline", item, "grad bias present (witness)", base_bias, cfg.witness_min, false});
  }

  // Off-policy correction.
  std::vector<EstimatorVariant> all(std::begin(kSix), std::end(kSix));
  all.push_back(EstimatorVariant::kTopkReverse);
  all.push_back(EstimatorVariant::kTopkForward);
  for (EstimatorVariant v : all) {
    MaxErr ve, ge;
    double witness = 0.0;
    for (const auto& pair : off_pairs) {
      for (ClipRange clip : {ClipRange::unclipped(), ClipRange::disabled()}) {
        const EstimatorSpec spec{v, cfg.vocab / 2, clip, TailForm::kCanonical};
        const Moments m =
            enumerate_moments(pair, [&](TapedPair& tp, std::size_t p) { return estimate(tp, spec, p); });
        const double dv = std::fabs(m.value - value_target(pair, v));
        const double dg = max_abs_diff(m.grad, grad_target(pair, v));
        if (clip.s_max > 1.0) {
          ve.add(dv);
          ge.add(dg);
        } else {
          witness = std::max(witness, std::max(dv, dg));
        }
      }
    }
    report.add({"offpolicy", to_string(v), "value unbiased (unclipped s)", ve.get(), cfg.value_tol});
    report.add({"offpolicy", to_string(v), "grad unbiased (unclipped s)", ge.get(), cfg.grad_tol});
    report.add({"offpolicy", to_string(v), "bias without correction (witness)", witness,
                cfg.witness_min, false});
  }

  audit_sequence(cfg, report);
  return report;
}

namespace {

// D_f(star || theta) = sum_j theta_j f(star_j / theta_j) on a tape over the
// logits of theta.
std::vector<double> reverse_direction_grad(std::span<const double> logits, const ProbSlot& star,
                                           const FGenerator& gen) {
  Tape tape;
  DiffSlot theta(tape, logits);
  std::vector<DiffScalar> terms;
  for (std::size_t j = 0; j < theta.size(); ++j) {
    const DiffScalar lp = theta.log_prob(j);
    terms.push_back(exp(lp) * gen.f(exp(star.log_prob(j) - lp)));
  }
  return theta.logit_gradient(sum(std::span<const DiffScalar>(terms)));
}

double tape_derivative(const FGenerator& gen, double t) {
  Tape tape;
  const DiffScalar x = tape.variable(t);
  const DiffScalar y = gen.f(x);
  const DiffScalar xs[] = {x};
  return tape.gradient(y, xs)[0];
}

double regularized_objective(const ProbSlot& pi, const ProbSlot& ref, std::span<const double> r,
                             double beta, const FGenerator& gen) {
  double value = 0.0;
  for (std::size_t y = 0; y < pi.size(); ++y) value += pi.prob(y) * r[y];
  double d = 0.0;
  for (std::size_t y = 0; y < pi.size(); ++y) d += ref.prob(y) * gen.f(pi.prob(y) / ref.prob(y));
  return value - beta * d;
}

void audit_pg_losses(const FdivAuditConfig& cfg, AuditReport& report) {
  const std::size_t v = cfg.pg_vocab;
  const std::size_t n = cfg.pg_group;
  std::size_t groups = 1;
  for (std::size_t i = 0; i < n; ++i) groups *= v;
  CounterRng rng(cfg.seed, 0, "audit.pg_losses");
  MaxErr l4_l2, l3_sum, l3pp_sum, group_reg, softmax_form;
  for (std::size_t inst = 0; inst < cfg.instances; ++inst) {
    std::vector<double> theta_logits(v), ref_logits(v), rewards(v);
    for (double& x : theta_logits) x = rng.normal();
    for (double& x : ref_logits) x = rng.normal();
    for (double& x : rewards) x = rng.uniform();
    const ProbSlot theta = ProbSlot::from_logits(theta_logits);
    const ProbSlot ref = ProbSlot::from_logits(ref_logits);
    std::vector<std::vector<double>> expect(6, zeros(v));
    std::vector<double> e_reg = zeros(v);
    std::vector<std::size_t> group(n);
    for (std::size_t code = 0; code < groups; ++code) {
      std::size_t c = code;
      double weight = 1.0;
      for (std::size_t i = 0; i < n; ++i) {
        group[i] = c % v;
        c /= v;
        weight *= theta.prob(group[i]);
      }
      std::vector<std::vector<double>> g;
      for (PgLoss loss : {PgLoss::kL1, PgLoss::kL2, PgLoss::kL3, PgLoss::kL3PlusPlus, PgLoss::kL4,
                          PgLoss::kL5}) {
        g.push_back(pg_loss_gradient(loss, theta_logits, ref, rewards, group, cfg.beta));
      }
      for (std::size_t l = 0; l < 6; ++l) axpy(expect[l], weight, g[l]);
      l4_l2.add(max_abs_diff(g[4], g[1]));
      axpy(e_reg, weight, group_kl_regularizer_gradient(theta_logits, ref, group));
      // L5 group gradient = mean score (zero-mean baseline) + self-normalized form.
      std::vector<double> mean_score = zeros(v);
      for (std::size_t y : group) {
        for (std::size_t i = 0; i < v; ++i) {
          mean_score[i] += ((i == y ? 1.0 : 0.0) - theta.prob(i)) / static_cast<double>(n);
        }
      }
      std::vector<double> rebuilt = softmax_pg_gradient(theta_logits, ref, rewards, group, cfg.beta);
      axpy(rebuilt, 1.0, mean_score);
      softmax_form.add(max_abs_diff(g[5], rebuilt));
    }
    std::vector<double> rhs = expect[0];
    axpy(rhs, 1.0, expect[5]);
    l3_sum.add(max_abs_diff(expect[2], rhs));
    rhs = expect[0];
    axpy(rhs, 1.0, expect[1]);
    l3pp_sum.add(max_abs_diff(expect[3], rhs));
    group_reg.add(max_abs_diff(e_reg, exact_kl_grad(theta, ref, KlDirection::kReverse)));
  }
  report.add({"pg_loss", "L4_vs_L2", "per-group gradients equal", l4_l2.get(), 1e-12});
  report.add({"pg_loss", "L3", "E grad L3 = E grad L1 + E grad L5", l3_sum.get(), 1e-9});
  report.add({"pg_loss", "L3pp", "E grad L3pp = E grad L1 + E grad L2", l3pp_sum.get(), 1e-9});
  report.add({"pg_loss", "group_regularizer", "E[sum_j grad lp_j KL^] = grad KL", group_reg.get(), 1e-9});
  report.add({"pg_loss", "L5", "equals softmax-weighted form + mean score", softmax_form.get(), 1e-12});
}

}  // namespace

AuditReport audit_fdiv(const FdivAuditConfig& cfg) {
  if (cfg.vocab < 2 || cfg.pairs == 0) throw ArgumentError("need vocab >= 2 and pairs >= 1");
  AuditReport report;
  const std::vector<FGenerator> gens = FGenerator::catalog(cfg.alpha);

  // Unbiasedness of r g_f(w) and of the Top-k generalization.
  CounterRng rng(cfg.seed, 0, "audit.fdiv.pairs");
  CounterRng set_rng(cfg.seed, 0, "audit.fdiv.index_sets");
  std::vector<PolicyPair> pairs;
  for (std::size_t i = 0; i < cfg.pairs; ++i) {
    pairs.push_back(random_pair(rng, cfg.vocab, cfg.logit_scale, i % 2 == 1));
  }
  for (const auto& gen : gens) {
    MaxErr ve, ge, tve, tge;
    for (const auto& pair : pairs) {
      const double vt = exact_divergence(pair.theta, pair.ref, gen);
      const std::vector<double> gt = exact_divergence_grad(pair.theta, pair.ref, gen);
      const Moments m = enumerate_moments(
          pair, [&](TapedPair& tp, std::size_t p) { return sampled_fdiv(tp, gen, p); });
      ve.add(std::fabs(m.value - vt));
      ge.add(max_abs_diff(m.grad, gt));
      const TopkIndexSet q = random_index_set(set_rng, cfg.vocab);
      const Moments mt = enumerate_moments(
          pair, [&](TapedPair& tp, std::size_t p) { return topk_fdiv(tp, gen, p, q); });
      tve.add(std::fabs(mt.value - vt));
      tge.add(max_abs_diff(mt.grad, gt));
    }
    report.add({"fdiv", gen.name(), "r g_f(w) value unbiased", ve.get(), cfg.value_tol});
    report.add({"fdiv", gen.name(), "r g_f(w) grad unbiased", ge.get(), cfg.grad_tol});
    report.add({"fdiv", gen.name(), "top-k value unbiased", tve.get(), cfg.value_tol});
    report.add({"fdiv", gen.name(), "top-k grad unbiased", tge.get(), cfg.grad_tol});
  }

  // Policy-gradient weights.
  CounterRng pg_rng(cfg.seed, 0, "audit.fdiv.pg_weight");
  const double points[] = {0.2, 0.5, 0.9, 1.7, 3.0};
  for (const auto& gen : gens) {
    MaxErr phi_f, psi_f, phi_grad, psi_grad;
    for (double w : points) {
      phi_f.add(std::fabs(pg_weight(gen, w, PgDirection::kThetaToStar) - tape_derivative(gen, 1.0 / w)));
      psi_f.add(std::fabs(pg_weight(gen, w, PgDirection::kStarToTheta) -
                          (gen.f(w) - w * tape_derivative(gen, w))));
    }
    for (std::size_t i = 0; i < cfg.instances; ++i) {
      std::vector<double> logits(cfg.vocab), star_logits(cfg.vocab);
      for (double& x : logits) x = pg_rng.normal();
      for (double& x : star_logits) x = pg_rng.normal();
      const ProbSlot theta = ProbSlot::from_logits(logits);
      const ProbSlot star = ProbSlot::from_logits(star_logits);
      std::vector<double> e_phi = zeros(cfg.vocab), e_psi = zeros(cfg.vocab);
      for (std::size_t p = 0; p < cfg.vocab; ++p) {
        const double w = std::exp(star.log_prob(p) - theta.log_prob(p));
        for (std::size_t j = 0; j < cfg.vocab; ++j) {
          const double score = (j == p ? 1.0 : 0.0) - theta.prob(j);
          e_phi[j] += theta.prob(p) * pg_weight(gen, w, PgDirection::kThetaToStar) * score;
          e_psi[j] += theta.prob(p) * pg_weight(gen, w, PgDirection::kStarToTheta) * score;
        }
      }
      phi_grad.add(max_abs_diff(e_phi, exact_divergence_grad(theta, star, gen)));
      psi_grad.add(max_abs_diff(e_psi, reverse_direction_grad(logits, star, gen)));
    }
    report.add({"pg_weight", gen.name(), "phi(w) = f'(1/w)", phi_f.get(), 1e-10});
    report.add({"pg_weight", gen.name(), "psi(w) = f(w) - w f'(w)", psi_f.get(), 1e-10});
    report.add({"pg_weight", gen.name(), "E[grad lp phi] = grad D_f(theta||star)", phi_grad.get(),
                cfg.grad_tol});
    report.add({"pg_weight", gen.name(), "E[grad lp psi] = grad D_f(star||theta)", psi_grad.get(),
                cfg.grad_tol});
  }
  report.add({"pg_weight", "FKL", "phi(2) = -2",
              std::fabs(pg_weight(FGenerator::forward_kl(), 2.0, PgDirection::kThetaToStar) + 2.0), 1e-12});
  report.add({"pg_weight", "RKL", "psi(1) = -1",
              std::fabs(pg_weight(FGenerator::reverse_kl(), 1.0, PgDirection::kStarToTheta) + 1.0), 1e-12});
  report.add({"pg_weight", "TV", "psi(2) = -0.5",
              std::fabs(pg_weight(FGenerator::total_variation(), 2.0, PgDirection::kStarToTheta) + 0.5),
              1e-12});

  // Optimal policies and reward transforms.
  CounterRng opt_rng(cfg.seed, 0, "audit.fdiv.optimal_policy");
  const std::size_t tv = cfg.transform_vocab;
  std::vector<std::pair<ProbSlot, std::vector<double>>> instances;
  for (std::size_t i = 0; i < cfg.instances; ++i) {
    std::vector<double> ref_logits(tv), rewards(tv);
    for (double& x : ref_logits) x = opt_rng.normal();
    for (double& x : rewards) x = 0.5 * opt_rng.uniform();
    instances.emplace_back(ProbSlot::from_logits(ref_logits), rewards);
  }
  for (const auto& gen : gens) {
    if (!gen.has_f_prime_inverse()) continue;
    MaxErr residual, kkt, maximizer, equiv;
    for (const auto& [ref, rewards] : instances) {
      const OptimalPolicy opt = optimal_policy(gen, rewards, ref, cfg.beta);
      residual.add(std::fabs(opt.residual));
      for (std::size_t y = 0; y < tv; ++y) {
        const double s = (rewards[y] - opt.lambda) / cfg.beta;
        if (opt.t[y] > 0.0) {
          kkt.add(std::fabs(gen.f_prime(opt.t[y]) - s));
        } else {
          kkt.add(std::max(0.0, s - gen.f_prime_floor()));
        }
      }
      const double best = regularized_objective(opt.policy, ref, rewards, cfg.beta, gen);
      for (std::size_t trial = 0; trial < 10; ++trial) {
        std::vector<double> mix(tv);
        double total = 0.0;
        for (double& x : mix) total += (x = opt_rng.uniform());
        const double eps = 0.01 * static_cast<double>(trial + 1) / 10.0;
        for (std::size_t y = 0; y < tv; ++y) mix[y] = (1.0 - eps) * opt.policy.prob(y) + eps * mix[y] / total;
        const double other = regularized_objective(ProbSlot::from_probs(mix), ref, rewards, cfg.beta, gen);
        maximizer.add(std::max(0.0, other - best));
      }
      const std::vector<double> tilde = reverse_kl_equivalent_rewards(gen, rewards, ref, cfg.beta);
      const OptimalPolicy via_rkl = optimal_policy(FGenerator::reverse_kl(), tilde, ref, cfg.beta);
      equiv.add(total_variation(via_rkl.policy, opt.policy));
    }
    report.add({"optimal_policy", gen.name(), "normalization residual", residual.get(), 1e-10});
    report.add({"optimal_policy", gen.name(), "stationarity f'(t) = (R - lambda)/beta", kkt.get(), 1e-8});
    report.add({"optimal_policy", gen.name(), "beats perturbed policies", maximizer.get(), 1e-12});
    report.add({"transform", gen.name(), "TV(pi_f, pi_rkl(R~))", equiv.get(), 1e-8});
  }
  {
    const ProbSlot ref = ProbSlot::from_probs(std::vector<double>{0.5, 0.5});
    const std::vector<double> r{1.0, 0.0};
    const OptimalPolicy opt = optimal_policy(FGenerator::forward_kl(), r, ref, 1.0);
    const double lambda = 1.0 + std::sqrt(0.5);
    report.add({"optimal_policy", "FKL", "two-token example lambda = 1 + sqrt(1/2)",
                std::fabs(opt.lambda - lambda), 1e-12});
    double tilt_err = 0.0;
    for (const auto& [ref_i, rewards] : instances) {
      const OptimalPolicy rkl = optimal_policy(FGenerator::reverse_kl(), rewards, ref_i, cfg.beta);
      std::vector<double> tilted(tv);
      for (std::size_t y = 0; y < tv; ++y) tilted[y] = ref_i.log_prob(y) + rewards[y] / cfg.beta;
      const ProbSlot closed = ProbSlot::from_logits(tilted);
      for (std::size_t y = 0; y < tv; ++y) {
        tilt_err = std::max(tilt_err, std::fabs(rkl.policy.prob(y) - closed.prob(y)));
      }
    }
    report.add({"optimal_policy", "RKL", "matches ref exp(R/beta) / Z", tilt_err, 1e-12});
    double unsupported = 1.0;
    try {
      optimal_policy(FGenerator::total_variation(), r, ref, 1.0);
    } catch (const UnsupportedError&) {
      unsupported = 0.0;
    }
    report.add({"optimal_policy", "TV", "rejected as unsupported", unsupported, 0.0});
  }
  {
    MaxErr round_trip, inverse_equiv;
    double convex = std::numeric_limits<double>::infinity();
    double concave = -std::numeric_limits<double>::infinity();
    for (const auto& [ref, rewards] : instances) {
      const OptimalPolicy fkl = optimal_policy(FGenerator::forward_kl(), rewards, ref, cfg.beta);
      const auto tilde = reverse_kl_equivalent_rewards(FGenerator::forward_kl(), rewards, ref, cfg.beta);
      const auto back = forward_kl_rewards_from_reverse(tilde, ref, cfg.beta, fkl.lambda);
      round_trip.add(max_abs_diff(back, rewards));
      const auto rf = forward_kl_rewards_from_reverse(rewards, ref, cfg.beta, 0.0);
      const OptimalPolicy a = optimal_policy(FGenerator::forward_kl(), rf, ref, cfg.beta);
      const OptimalPolicy b = optimal_policy(FGenerator::reverse_kl(), rewards, ref, cfg.beta);
      inverse_equiv.add(total_variation(a.policy, b.policy));
      // Equally spaced rewards: second differences of the transformed rewards.
      std::vector<double> grid(tv);
      for (std::size_t y = 0; y < tv; ++y) grid[y] = 0.5 * static_cast<double>(y) / static_cast<double>(tv - 1);
      const auto gt = reverse_kl_equivalent_rewards(FGenerator::forward_kl(), grid, ref, cfg.beta);
      const auto gf = forward_kl_rewards_from_reverse(grid, ref, cfg.beta, 0.0);
      for (std::size_t y = 1; y + 1 < tv; ++y) {
        convex = std::min(convex, gt[y + 1] - 2.0 * gt[y] + gt[y - 1]);
        concave = std::max(concave, gf[y + 1] - 2.0 * gf[y] + gf[y - 1]);
      }
    }
    report.add({"transform", "FKL", "round trip R -> R~ -> R_f", round_trip.get(), 1e-8});
    report.add({"transform", "FKL", "TV(pi_fkl(R_f), pi_rkl(R))", inverse_equiv.get(), 1e-8});
    report.add({"transform", "FKL", "R~ convex in R (min second difference)", convex, 0.0, false});
    report.add({"transform", "FKL", "R_f concave in R (min negated second difference)", -concave, 0.0,
                false});
    double domain = 1.0;
    try {
      const ProbSlot ref = ProbSlot::from_probs(std::vector<double>{0.5, 0.5});
      reverse_kl_equivalent_rewards(FGenerator::pearson(), std::vector<double>{10.0, 0.0}, ref, 1.0);
    } catch (const DomainError&) {
      domain = 0.0;
    }
    report.add({"transform", "PEARSON", "zero-probability optimum rejected", domain, 0.0});
  }

  audit_pg_losses(cfg, report);
  return report;
}

}  // namespace emapg
