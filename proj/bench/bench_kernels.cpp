#include <benchmark/benchmark.h>

#include "gshs/fpk.hpp"
#include "gshs/scenarios.hpp"
#include "gshs/simulator.hpp"

using namespace gshs;

namespace {

EnsembleOptions ensemble_options(const Scenario& s, std::size_t paths) {
  EnsembleOptions opt;
  opt.n_paths = paths;
  opt.t_end = s.t_end;
  opt.dt = s.dt;
  opt.master_seed = 42;
  opt.observe_times = {s.t_end};
  return opt;
}

void BM_EnsembleSerial(benchmark::State& state) {
  const auto s = build("switching-ou", {{"t_end", "1"}});
  const auto opt = ensemble_options(s, static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(simulate_ensemble_serial(s.model, s.mu0.sample, opt));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_EnsembleParallel(benchmark::State& state) {
  const auto s = build("switching-ou", {{"t_end", "1"}});
  const auto opt = ensemble_options(s, static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(simulate_ensemble(s.model, s.mu0.sample, opt));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <bool Parallel>
void BM_Lstar(benchmark::State& state) {
  const auto s = build("switching-ou", {{"grid", std::to_string(state.range(0))}});
  const auto op = build_transport(s.model, s.partition);
  const auto p = s.mu0.density(s.partition);
  std::vector<double> out(p.p.size());
  for (auto _ : state) {
    if constexpr (Parallel)
      apply_lstar(op, p.p, out);
    else
      apply_lstar_serial(op, p.p, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(out.size()));
}

}  // namespace

BENCHMARK(BM_EnsembleSerial)->Arg(2000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_EnsembleParallel)->Arg(2000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Lstar<false>)->Arg(1000)->Arg(100000);
BENCHMARK(BM_Lstar<true>)->Arg(1000)->Arg(100000);

BENCHMARK_MAIN();
