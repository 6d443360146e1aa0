#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include <gtest/gtest.h>

#include "g2kit/g2kit.hpp"
#include "oracles.hpp"

using namespace g2kit;

namespace {

WindowSpec window_for(const SimConfig& config, double width_ns = 16.0) {
  const Chronogram empty = Chronogram::zeros(default_geometry(config.resolution_ps, config.excitation_rate_hz),
                                             config.resolution_ps, config.excitation_rate_hz, {});
  return make_window(width_ns, empty);
}

AlphaEstimate estimate(const TimeTagStream& stream, double width_ns = 16.0) {
  const Chronogram c = cross_correlate(stream, 0, 1, default_geometry(stream.resolution_ps(), stream.metadata().excitation_rate_hz));
  return estimate_alpha(c, make_window(width_ns, c));
}

SimConfig quiet() {
  SimConfig c;
  c.acquisition_time_s = 1.0;
  c.p_emit = 0.0;
  c.eta_a = 0.01;
  c.eta_b = 0.01;
  return c;
}

}  // namespace

TEST(Simulator, NoLightNoEvents) {
  const TimeTagStream s = simulate_run(quiet());
  EXPECT_TRUE(s.events().empty());
  EXPECT_EQ(s.duration_ticks(), 1'000'000'000'000u);
  EXPECT_EQ(s.metadata().pulse_count(), 2'500'000u);
  EXPECT_EQ(s.channels().size(), 2u);
}

TEST(Simulator, SameSeedSameStream) {
  SimConfig c = SimConfig::nv_reference();
  c.acquisition_time_s = 2.0;
  c.seed = 42;
  const TimeTagStream a = simulate_run(c, 3);
  EXPECT_EQ(a, simulate_run(c, 3));
  EXPECT_EQ(a.metadata().run_index, 3u);
  c.seed = 43;
  EXPECT_NE(a, simulate_run(c, 3));
}

TEST(Simulator, MultiRunUsesDerivedSeeds) {
  SimConfig c = SimConfig::nv_reference();
  c.acquisition_time_s = 0.5;
  c.seed = 9;
  const auto runs = simulate_runs(c, 3, 2);
  ASSERT_EQ(runs.size(), 3u);
  for (std::uint32_t i = 0; i < 3; ++i) {
    SimConfig ci = c;
    ci.seed = run_seed(c.seed, i);
    EXPECT_EQ(runs[i], simulate_run(ci, i));
  }
  std::set<std::uint64_t> seeds;
  for (std::uint32_t i = 0; i < 1000; ++i) seeds.insert(run_seed(9, i));
  EXPECT_EQ(seeds.size(), 1000u);
}

TEST(Simulator, DeadTimeSeparatesClicks) {
  SimConfig c = quiet();
  c.background_rate_hz = 1e6;
  c.dead_time_ns = 50.0;
  const TimeTagStream s = simulate_run(c);
  for (std::uint8_t ch = 0; ch < 2; ++ch) {
    const auto t = s.timestamps(ch);
    ASSERT_GT(t.size(), 100'000u);
    for (std::size_t i = 1; i < t.size(); ++i) ASSERT_GE(t[i] - t[i - 1], 50'000u);
    const double expected = expected_singles_rate(c, ch);
    EXPECT_NEAR(static_cast<double>(t.size()), expected, 0.01 * expected);
  }
}

TEST(Simulator, SinglesRateMatchesExpectation) {
  SimConfig c = SimConfig::nv_reference();
  c.acquisition_time_s = 20.0;
  const TimeTagStream s = simulate_run(c);
  for (std::uint8_t ch = 0; ch < 2; ++ch) {
    const double rate = static_cast<double>(s.count(ch)) / 20.0;
    EXPECT_NEAR(rate, expected_singles_rate(c, ch), 0.01 * expected_singles_rate(c, ch));
  }
}

TEST(Simulator, SingleEmitterHasEmptyCentre) {
  SimConfig c = quiet();
  c.p_emit = 1.0;
  c.eta_a = 0.05;
  c.eta_b = 0.05;
  c.acquisition_time_s = 2.0;
  const AlphaEstimate e = estimate(simulate_run(c));
  EXPECT_EQ(e.counts.n_c, 0u);
  EXPECT_GT(e.counts.n_xi, 1000u);
  EXPECT_LE(e.alpha, 0.0);
}

TEST(Simulator, AnalyticLimits) {
  SimConfig single = quiet();
  single.p_emit = 0.8;
  EXPECT_NEAR(analytic_expectations(single, window_for(single)).alpha, 0.0, 1e-5);

  SimConfig poisson = quiet();
  poisson.poisson_mean = 0.3;
  poisson.background_rate_hz = 500.0;
  EXPECT_NEAR(analytic_expectations(poisson, window_for(poisson)).alpha, 1.0, 1e-9);

  for (unsigned n : {2u, 3u, 5u}) {
    SimConfig multi = quiet();
    multi.p_emit = 0.6;
    multi.n_emitters = n;
    multi.eta_a = 0.02;
    multi.eta_b = 0.03;
    const double oracle = oracle::alpha_by_enumeration(n, multi.p_emit, multi.eta_a, multi.eta_b);
    EXPECT_NEAR(oracle, (n - 1.0) / n, 1e-12);
    EXPECT_NEAR(analytic_expectations(multi, window_for(multi)).alpha, oracle, 1e-5) << n;
  }
}

TEST(Simulator, AnalyticNeedsIdealDetectors) {
  SimConfig c = SimConfig::nv_reference();
  c.dead_time_ns = 50.0;
  EXPECT_THROW(analytic_expectations(c, window_for(c)), ConfigError);
  c.dead_time_ns = 0.0;
  c.backflash = BackflashConfig{};
  EXPECT_THROW(analytic_expectations(c, window_for(c)), ConfigError);
}

TEST(Simulator, ReferencePresetMatchesTargetCounts) {
  const SimConfig c = SimConfig::nv_reference();
  const Expectations e = analytic_expectations(c, window_for(c));
  EXPECT_NEAR(e.n_c, 1000.0, 500.0);
  EXPECT_NEAR(e.n_xi, 7400.0, 3700.0);
  EXPECT_NEAR(e.n_bg, 560.0, 280.0);
  EXPECT_NEAR(e.alpha, 0.065, 0.01);

  SimConfig shorter = c;
  shorter.acquisition_time_s = 50.0;
  const AlphaEstimate got = estimate(simulate_run(shorter));
  const double scale = 0.1;
  EXPECT_NEAR(static_cast<double>(got.counts.n_c), scale * e.n_c, 4 * std::sqrt(scale * e.n_c));
  EXPECT_NEAR(static_cast<double>(got.counts.n_xi), scale * e.n_xi, 4 * std::sqrt(scale * e.n_xi));
  EXPECT_NEAR(static_cast<double>(got.counts.n_bg), scale * e.n_bg, 4 * std::sqrt(scale * e.n_bg));
}

TEST(Simulator, EstimatorClosureOverSeeds) {
  SimConfig c = quiet();
  c.p_emit = 1.0;
  c.n_emitters = 2;
  c.eta_a = 0.015;
  c.eta_b = 0.015;
  c.background_rate_hz = 1000.0;
  c.jitter_sigma_ns = 0.35;
  const double truth = analytic_expectations(c, window_for(c)).alpha;
  const int seeds = 100;
  double sum = 0.0;
  double sum_sq = 0.0;
  int outliers = 0;
  for (int i = 0; i < seeds; ++i) {
    c.seed = run_seed(77, static_cast<std::uint32_t>(i));
    const AlphaEstimate e = estimate(simulate_run(c));
    sum += e.alpha;
    sum_sq += e.alpha * e.alpha;
    outliers += std::abs(e.alpha - truth) > 3 * e.u_alpha_k1;
  }
  const double mean = sum / seeds;
  const double sd = std::sqrt((sum_sq - seeds * mean * mean) / (seeds - 1));
  EXPECT_NEAR(mean, truth, 3 * sd / std::sqrt(seeds));
  EXPECT_LE(outliers, 3);
}

TEST(Simulator, ValidateRejectsBadFields) {
  auto rejects = [](auto mutate) {
    SimConfig c;
    mutate(c);
    EXPECT_THROW(c.validate(), ConfigError);
  };
  rejects([](SimConfig& c) { c.p_emit = 1.5; });
  rejects([](SimConfig& c) { c.eta_a = 0.7, c.eta_b = 0.4; });
  rejects([](SimConfig& c) { c.excitation_rate_hz = 0; });
  rejects([](SimConfig& c) { c.acquisition_time_s = 0.0; });
  rejects([](SimConfig& c) { c.acquisition_time_s = 1e-4; });
  rejects([](SimConfig& c) { c.lifetime_ns = -1.0; });
  rejects([](SimConfig& c) { c.n_emitters = 0; });
  rejects([](SimConfig& c) { c.poisson_mean = -0.1; });
  rejects([](SimConfig& c) { c.dead_time_ns = -1.0; });
  rejects([](SimConfig& c) { c.resolution_ps = 0; });
  rejects([](SimConfig& c) { c.backflash = BackflashConfig{1.5, 50.0, 1.0}; });
  EXPECT_NO_THROW(SimConfig::nv_reference().validate());
}

TEST(Simulator, KeyValueRoundTrip) {
  SimConfig c = SimConfig::nv_reference();
  EXPECT_EQ(sim_config_from(to_key_values(c)), c);
  c.backflash = BackflashConfig{0.013, 47.5, 0.8};
  c.lifetime_ns = 0.1 + 0.2;
  c.seed = 18'446'744'073'709'551'557ULL;
  EXPECT_EQ(sim_config_from(to_key_values(c)), c);
  EXPECT_EQ(sim_config_from(parse_key_values(format_key_values(to_key_values(c)))), c);

  const SimConfig overlay = sim_config_from({{"lifetime_ns", "12"}, {"backflash", "on"}}, SimConfig::nv_reference());
  EXPECT_EQ(overlay.lifetime_ns, 12.0);
  ASSERT_TRUE(overlay.backflash.has_value());
  EXPECT_EQ(*overlay.backflash, BackflashConfig{});
  EXPECT_FALSE(sim_config_from({{"backflash", "off"}}, c).backflash.has_value());

  EXPECT_THROW(sim_config_from({{"lifetime", "12"}}), ConfigError);
  EXPECT_THROW(sim_config_from({{"lifetime_ns", "12x"}}), ConfigError);
  EXPECT_THROW(sim_config_from({{"n_emitters", "-2"}}), ConfigError);
  EXPECT_THROW(sim_config_from({{"backflash", "maybe"}}), ConfigError);
  EXPECT_THROW(sim_config_from({{"p_emit", "2"}}), ConfigError);
}

// Ten full-length runs at the calibrated settings. The budget's expanded
// uncertainty is compared with the Poisson expectation from the closed-form
// window counts; the band is the 99.8 % interval of a 9-dof sample standard
// deviation.
TEST(Simulator, TenRunBudgetAtCalibratedSettings) {
  const SimConfig base = SimConfig::nv_reference();
  RunSeries series;
  for (std::uint32_t i = 0; i < 10; ++i) {
    SimConfig c = base;
    c.seed = run_seed(2024, i);
    series.runs.push_back(estimate(simulate_run(c, i)).counts);
  }
  const AlphaBudget budget = budget_report(series, 2.0);
  const Expectations e = analytic_expectations(base, window_for(base));
  const CountValues expected{e.n_c, e.n_xi, e.n_bg};
  const double u_poisson = propagate(sensitivities(expected).as_array(),
                                     {std::sqrt(e.n_c), std::sqrt(e.n_xi), std::sqrt(e.n_bg)}, kIdentityCorrelation);
  std::printf("alpha=%.5f (expected %.5f) U=%.5f expected U=%.5f\n", budget.alpha, e.alpha, budget.expanded(), 2 * u_poisson);
  EXPECT_GT(budget.expanded(), 0.357 * 2 * u_poisson);
  EXPECT_LT(budget.expanded(), 1.76 * 2 * u_poisson);
  const RunStatistics stats = run_statistics(series);
  EXPECT_NEAR(stats.mean, e.alpha, 2 * stats.sigma / std::sqrt(10.0));
  EXPECT_NEAR(stats.sigma, budget.u_combined, 0.1 * budget.u_combined);
}
