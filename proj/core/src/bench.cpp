#include "emapg/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <tuple>

#include "emapg/categorical.hpp"
#include "emapg/errors.hpp"
#include "emapg/estimators.hpp"
#include "emapg/rng.hpp"

namespace emapg {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

enum Arm { kSampled, kTruncated, kTopk, kTopkBaseline, kExact, kNumArms };

const char* arm_name(int arm) {
  switch (arm) {
    case kSampled: return "sampled";
    case kTruncated: return "truncated";
    case kTopk: return "topk";
    case kTopkBaseline: return "topk_baseline";
    case kExact: return "exact";
  }
  return "?";
}

// Per-trial problem with lazily computed per-token gradient coefficients.
// A single-token estimator touches only log pi(p), so its logit gradient is
// c_p (e_p - pi); c_p is read off the tape once per token and trial.
class TrialProblem {
 public:
  TrialProblem(std::vector<double> theta_logits, const ProbSlot& ref)
      : pair_(PolicyPair::make(std::move(theta_logits), ref)),
        k4_(pair_.size(), kNan),
        canonical_(pair_.size(), kNan),
        baseline_(pair_.size(), kNan) {}

  const PolicyPair& pair() const { return pair_; }

  double k4(std::size_t p) { return cached(k4_, p, [&](TapedPair& tp) {
    return sampled_kl(tp, EstimatorVariant::kK4, p).value;
  }); }
  double tail(std::size_t p, TailForm form) {
    auto& cache = form == TailForm::kCanonical ? canonical_ : baseline_;
    return cached(cache, p, [&](TapedPair& tp) {
      return topk_reverse_kl(tp, p, TopkIndexSet({}, pair_.size()), ClipRange::unclipped(), form)
          .value;
    });
  }

  // Gradient of the truncated sum over q (no tail).
  std::vector<double> truncated_gradient(const TopkIndexSet& q) {
    Tape tape;
    TapedPair tp(DiffSlot(tape, pair_.theta), pair_.ref, nullptr);
    const DiffScalar v = topk_reverse_kl(tp, q.indices()[0], q, ClipRange::unclipped()).value;
    return tp.theta.logit_gradient(v);
  }

 private:
  template <class F>
  double cached(std::vector<double>& cache, std::size_t p, F&& build) {
    if (!std::isnan(cache[p])) return cache[p];
    Tape tape;
    TapedPair tp(DiffSlot(tape, pair_.theta), pair_.ref, nullptr);
    const DiffScalar v = build(tp);
    const auto leaves = tp.theta.leaf_adjoints(tape.adjoints(v));
    double c = 0.0;
    for (const auto& [j, a] : leaves) {
      if (j == p) c = a;
    }
    cache[p] = c;
    return c;
  }

  PolicyPair pair_;
  std::vector<double> k4_;
  std::vector<double> canonical_;
  std::vector<double> baseline_;
};

// ||g_hat - g||^2 / ||g||^2 with g_hat = base + (C - pi sum C).
double relative_sq_error(std::span<const double> coef, const std::vector<double>* base,
                         const std::vector<double>& probs, const std::vector<double>& g,
                         double g_norm2) {
  const double total = std::accumulate(coef.begin(), coef.end(), 0.0);
  double err = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    double gi = coef[i] - probs[i] * total;
    if (base != nullptr) gi += (*base)[i];
    const double d = gi - g[i];
    err += d * d;
  }
  return err / g_norm2;
}

}  // namespace

void SynthTaskSpec::validate() const {
  if (vocab < kMassTopK) throw ArgumentError("vocabulary must hold at least 32 tokens");
  if (!(target_mass > 0.0 && target_mass < 1.0)) throw CalibrationError("mass must lie in (0, 1)");
  if (k_list.empty() || b_list.empty() || trials == 0) throw ArgumentError("empty sweep");
  for (std::size_t k : k_list) {
    if (k == 0 || k >= vocab) throw ArgumentError("K must lie in [1, V)");
  }
  for (std::size_t b : b_list) {
    if (b == 0) throw ArgumentError("B must be positive");
  }
}

double top_mass(std::span<const double> z, double s) {
  if (z.size() < kMassTopK) throw ArgumentError("vocabulary smaller than 32");
  std::vector<double> logits(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) logits[i] = s * z[i];
  const ProbSlot slot = ProbSlot::from_logits(logits);
  const TopkIndexSet top = topk_indices(slot, kMassTopK);
  double m = 0.0;
  for (std::size_t j : top.indices()) m += slot.prob(j);
  return m;
}

Calibration calibrate_scale(double m, std::span<const double> z) {
  if (!(m > 0.0 && m < 1.0)) throw CalibrationError("target mass must lie in (0, 1)");
  Calibration cal;
  auto eval = [&](double s) {
    const double v = top_mass(z, s);
    cal.trace.emplace_back(s, v);
    return v;
  };
  double lo = 0.0;
  if (eval(lo) > m) throw CalibrationError("target mass below the uniform top-32 mass");
  double hi = 1.0;
  int grow = 0;
  while (eval(hi) < m) {
    lo = hi;
    hi *= 2.0;
    if (++grow > 60) throw CalibrationError("target mass not reachable");
  }
  double s = hi;
  double v = cal.trace.back().second;
  for (int it = 0; it < 200 && std::fabs(v - m) > 1e-6; ++it) {
    s = 0.5 * (lo + hi);
    v = eval(s);
    if (v < m) {
      lo = s;
    } else {
      hi = s;
    }
  }
  if (std::fabs(v - m) > 1e-3) throw CalibrationError("bisection did not reach the target mass");
  cal.scale = s;
  cal.mass = v;
  return cal;
}

std::vector<RelRmseRecord> run_sweep(const SynthTaskSpec& spec) {
  spec.validate();
  const std::size_t v = spec.vocab;
  const std::size_t nk = spec.k_list.size();
  const std::size_t nb = spec.b_list.size();
  // sum over trials of squared relative errors, [arm][k][b]
  std::vector<double> acc(kNumArms * nk * nb, 0.0);
  auto slot = [&](int arm, std::size_t ki, std::size_t bi) -> double& {
    return acc[(static_cast<std::size_t>(arm) * nk + ki) * nb + bi];
  };
  std::vector<double> exact_acc(nb, 0.0);

  for (std::size_t t = 0; t < spec.trials; ++t) {
    CounterRng ref_rng(spec.seed, t, "bench.ref_logits");
    CounterRng pol_rng(spec.seed, t, "bench.policy_logits");
    std::vector<double> z_ref(v);
    std::vector<double> z(v);
    for (double& x : z_ref) x = ref_rng.normal();
    for (double& x : z) x = pol_rng.normal();
    const Calibration cal = calibrate_scale(spec.target_mass, z);
    std::vector<double> theta_logits(v);
    for (std::size_t i = 0; i < v; ++i) theta_logits[i] = cal.scale * z[i];
    TrialProblem prob(theta_logits, ProbSlot::from_logits(z_ref));
    const ProbSlot& theta = prob.pair().theta;
    const std::vector<double> probs = theta.probs();
    const std::vector<double> g = exact_kl_grad(theta, prob.pair().ref, KlDirection::kReverse);
    const double g_norm2 = std::inner_product(g.begin(), g.end(), g.begin(), 0.0);
    if (!(g_norm2 > 0.0)) throw StateError("degenerate trial: zero exact gradient");

    std::vector<TopkIndexSet> qs;
    std::vector<std::vector<double>> trunc;
    for (std::size_t k : spec.k_list) {
      qs.push_back(topk_indices(theta, k));
      trunc.push_back(prob.truncated_gradient(qs.back()));
    }
    const std::vector<double> exact_hat = prob.truncated_gradient(topk_indices(theta, v));
    const std::vector<double> zeros(v, 0.0);
    const double exact_err = relative_sq_error(zeros, &exact_hat, probs, g, g_norm2);
    std::vector<double> trunc_err(nk);
    for (std::size_t ki = 0; ki < nk; ++ki) {
      trunc_err[ki] = relative_sq_error(zeros, &trunc[ki], probs, g, g_norm2);
    }

    const CategoricalSampler sampler(theta);
    std::vector<double> coef(v);
    std::vector<double> coef_base(v);
    for (std::size_t bi = 0; bi < nb; ++bi) {
      const std::size_t b = spec.b_list[bi];
      CounterRng draw(spec.seed, t, "bench.samples/B=" + std::to_string(b));
      std::vector<std::size_t> samples(b);
      for (auto& p : samples) p = sampler(draw);
      const double inv_b = 1.0 / static_cast<double>(b);

      std::fill(coef.begin(), coef.end(), 0.0);
      for (std::size_t p : samples) coef[p] += prob.k4(p) * inv_b;
      slot(kSampled, 0, bi) += relative_sq_error(coef, nullptr, probs, g, g_norm2);

      for (std::size_t ki = 0; ki < nk; ++ki) {
        slot(kTruncated, ki, bi) += trunc_err[ki];
        std::fill(coef.begin(), coef.end(), 0.0);
        std::fill(coef_base.begin(), coef_base.end(), 0.0);
        for (std::size_t p : samples) {
          if (qs[ki].contains(p)) continue;
          coef[p] += prob.tail(p, TailForm::kCanonical) * inv_b;
          if (spec.baseline_arm) coef_base[p] += prob.tail(p, TailForm::kBaseline) * inv_b;
        }
        slot(kTopk, ki, bi) += relative_sq_error(coef, &trunc[ki], probs, g, g_norm2);
        if (spec.baseline_arm) {
          slot(kTopkBaseline, ki, bi) += relative_sq_error(coef_base, &trunc[ki], probs, g, g_norm2);
        }
      }
      exact_acc[bi] += exact_err;
    }
  }

  const double inv_t = 1.0 / static_cast<double>(spec.trials);
  std::vector<RelRmseRecord> out;
  auto add = [&](const std::string& name, std::size_t k, std::size_t b, double sum_sq) {
    out.push_back({name, k, b, spec.target_mass, v, spec.trials, std::sqrt(sum_sq * inv_t)});
  };
  for (std::size_t bi = 0; bi < nb; ++bi) {
    add(arm_name(kSampled), 0, spec.b_list[bi], slot(kSampled, 0, bi));
    add(arm_name(kExact), v, spec.b_list[bi], exact_acc[bi]);
  }
  for (int arm : {kTruncated, kTopk, kTopkBaseline}) {
    if (arm == kTopkBaseline && !spec.baseline_arm) continue;
    for (std::size_t ki = 0; ki < nk; ++ki) {
      for (std::size_t bi = 0; bi < nb; ++bi) {
        add(arm_name(arm), spec.k_list[ki], spec.b_list[bi], slot(arm, ki, bi));
      }
    }
  }
  std::sort(out.begin(), out.end(), [](const RelRmseRecord& a, const RelRmseRecord& b) {
    return std::tie(a.estimator, a.k, a.b) < std::tie(b.estimator, b.k, b.b);
  });
  return out;
}

const RelRmseRecord* find_record(std::span<const RelRmseRecord> records,
                                 const std::string& estimator, std::size_t k, std::size_t b) {
  for (const auto& r : records) {
    if (r.estimator == estimator && r.k == k && r.b == b) return &r;
  }
  return nullptr;
}

std::optional<std::size_t> critical_sample_size(std::span<const RelRmseRecord> records,
                                                std::size_t k, double m) {
  std::map<std::size_t, double> topk;
  std::map<std::size_t, double> trunc;
  for (const auto& r : records) {
    if (r.k != k || r.m != m) continue;
    if (r.estimator == "topk") topk[r.b] = r.rel_rmse;
    if (r.estimator == "truncated") trunc[r.b] = r.rel_rmse;
  }
  if (topk.empty() || topk.size() != trunc.size()) {
    throw ArgumentError("incomplete sweep for K=" + std::to_string(k));
  }
  for (const auto& [b, e] : topk) {
    const auto it = trunc.find(b);
    if (it == trunc.end()) throw ArgumentError("incomplete sweep for K=" + std::to_string(k));
    if (e < it->second) return b;
  }
  return std::nullopt;
}

double log_log_slope(std::span<const RelRmseRecord> records, const std::string& estimator,
                     std::size_t k, std::size_t b_min, std::size_t b_max) {
  std::vector<double> xs;
  std::vector<double> ys;
  for (const auto& r : records) {
    if (r.estimator != estimator || r.k != k || r.b < b_min || r.b > b_max) continue;
    xs.push_back(std::log(static_cast<double>(r.b)));
    ys.push_back(std::log(r.rel_rmse));
  }
  if (xs.size() < 2) throw ArgumentError("need at least two points for a slope");
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxy = 0.0;
  double sxx = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
  }
  return sxy / sxx;
}

void write_csv(std::ostream& os, std::span<const RelRmseRecord> records) {
  os << "estimator,K,B,m,V,trials,rel_rmse\n";
  char buf[64];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, "%.10g", r.rel_rmse);
    char mbuf[32];
    std::snprintf(mbuf, sizeof mbuf, "%g", r.m);
    os << r.estimator << ',' << r.k << ',' << r.b << ',' << mbuf << ',' << r.vocab << ','
       << r.trials << ',' << buf << '\n';
  }
}

}  // namespace emapg
