#include <benchmark/benchmark.h>

#include <vector>

#include "emapg/audit.hpp"
#include "emapg/bench.hpp"
#include "emapg/estimators.hpp"
#include "emapg/rng.hpp"
#include "emapg/tape.hpp"
#include "emapg/trainer.hpp"

namespace {

using namespace emapg;

// Forward pass plus reverse sweep of a log-sum-exp over n leaves.
void BM_TapeLogSumExp(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    Tape tape;
    std::vector<DiffScalar> xs;
    xs.reserve(n);
    for (std::size_t i = 0; i < n; ++i) xs.push_back(tape.variable(0.001 * static_cast<double>(i)));
    const DiffScalar out = log_sum_exp(xs);
    benchmark::DoNotOptimize(tape.adjoints(out));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_TapeLogSumExp)->Arg(64)->Arg(2048);

// One taped estimate and its logit gradient on a vocabulary of size V.
void BM_Estimator(benchmark::State& state, EstimatorVariant variant) {
  const auto vocab = static_cast<std::size_t>(state.range(0));
  CounterRng rng(0, 0, "micro.estimator");
  const PolicyPair pair = random_pair(rng, vocab, 2.0, false);
  const EstimatorSpec spec{variant, 32, ClipRange::reverse_default(), TailForm::kCanonical};
  std::size_t token = 0;
  for (auto _ : state) {
    Tape tape;
    TapedPair taped(tape, pair);
    const EstimatorSample s = estimate(taped, spec, token);
    benchmark::DoNotOptimize(taped.theta.logit_gradient(tape.adjoints(s.value)));
    token = (token + 7) % vocab;
  }
}
BENCHMARK_CAPTURE(BM_Estimator, k3, EstimatorVariant::kK3)->Arg(2000);
BENCHMARK_CAPTURE(BM_Estimator, topk_reverse, EstimatorVariant::kTopkReverse)->Arg(2000);
BENCHMARK_CAPTURE(BM_Estimator, topk_forward, EstimatorVariant::kTopkForward)->Arg(2000);

// A reduced synthetic sweep: all arms, a short B grid.
void BM_SweepSmall(benchmark::State& state) {
  SynthTaskSpec spec;
  spec.vocab = 500;
  spec.k_list = {8, 32};
  spec.b_list = {1, 16, 256};
  spec.trials = 10;
  for (auto _ : state) benchmark::DoNotOptimize(run_sweep(spec));
}
BENCHMARK(BM_SweepSmall)->Unit(benchmark::kMillisecond);

// One GRPO step on the default target-token task.
void BM_TrainerStep(benchmark::State& state) {
  TrainConfig cfg;
  cfg.group_size = 64;
  Trainer trainer(target_token_task(16, 8, 0), cfg);
  for (auto _ : state) benchmark::DoNotOptimize(trainer.step());
}
BENCHMARK(BM_TrainerStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
