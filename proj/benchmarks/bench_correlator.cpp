#include <map>

#include <benchmark/benchmark.h>

#include "g2kit/g2kit.hpp"

namespace {

const g2kit::TimeTagStream& stream(double seconds) {
  static std::map<double, g2kit::TimeTagStream> cache;
  auto it = cache.find(seconds);
  if (it == cache.end()) {
    g2kit::SimConfig c = g2kit::SimConfig::nv_reference();
    c.acquisition_time_s = seconds;
    it = cache.emplace(seconds, g2kit::simulate_run(c)).first;
  }
  return it->second;
}

void BM_CrossCorrelate(benchmark::State& state) {
  const auto& s = stream(static_cast<double>(state.range(0)));
  const auto g = g2kit::default_geometry(1, 2'500'000);
  for (auto _ : state) benchmark::DoNotOptimize(g2kit::cross_correlate(s, 0, 1, g));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(s.events().size()));
}
BENCHMARK(BM_CrossCorrelate)->Arg(10)->Arg(100)->Unit(benchmark::kMillisecond);

void BM_EstimateAlpha(benchmark::State& state) {
  const auto c = g2kit::cross_correlate(stream(10), 0, 1, g2kit::default_geometry(1, 2'500'000));
  const auto w = g2kit::make_window(16.0, c);
  for (auto _ : state) benchmark::DoNotOptimize(g2kit::estimate_alpha(c, w));
}
BENCHMARK(BM_EstimateAlpha);

void BM_FitLifetime(benchmark::State& state) {
  const auto c = g2kit::cross_correlate(stream(100), 0, 1, g2kit::default_geometry(1, 2'500'000));
  for (auto _ : state) benchmark::DoNotOptimize(g2kit::fit_lifetime(c));
}
BENCHMARK(BM_FitLifetime)->Unit(benchmark::kMillisecond);

}  // namespace
