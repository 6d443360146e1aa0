#include <benchmark/benchmark.h>

#include "g2kit/g2kit.hpp"

namespace {

void BM_SimulateRun(benchmark::State& state) {
  g2kit::SimConfig c = g2kit::SimConfig::nv_reference();
  c.acquisition_time_s = static_cast<double>(state.range(0));
  std::int64_t events = 0;
  for (auto _ : state) {
    const auto s = g2kit::simulate_run(c);
    events += static_cast<std::int64_t>(s.events().size());
  }
  state.SetItemsProcessed(events);
}
BENCHMARK(BM_SimulateRun)->Arg(10)->Arg(50)->Unit(benchmark::kMillisecond);

void BM_EncodeTtag(benchmark::State& state) {
  g2kit::SimConfig c = g2kit::SimConfig::nv_reference();
  c.acquisition_time_s = 10.0;
  const auto s = g2kit::simulate_run(c);
  for (auto _ : state) benchmark::DoNotOptimize(g2kit::encode_ttag(s));
  state.SetBytesProcessed(state.iterations() *
                          static_cast<std::int64_t>(g2kit::kTtagHeaderSize + g2kit::kTtagRecordSize * s.events().size()));
}
BENCHMARK(BM_EncodeTtag)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
