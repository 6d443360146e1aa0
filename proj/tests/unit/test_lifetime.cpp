#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "g2kit/g2kit.hpp"
#include "oracles.hpp"

using namespace g2kit;

namespace {

constexpr double kPeriod = 400.0;
constexpr double kInf = std::numeric_limits<double>::infinity();

LifetimeModel model(double a, double b, double c, double d, double max_tau = 600.0) {
  LifetimeModel m{a, b, c, d, kPeriod, 0};
  m.n_range = LifetimeModel::required_n_range(max_tau, d, kPeriod);
  return m;
}

// Chronogram whose bins hold the model (rounded, or Poisson-sampled) at each bin centre.
Chronogram synthetic(const LifetimeModel& truth, BinGeometry geometry, std::mt19937_64* rng = nullptr) {
  Chronogram c = Chronogram::zeros(geometry, 1, 2'500'000, {});
  c.n_pulses = 1'250'000'000;
  for (std::size_t k = 0; k < c.size(); ++k) {
    const double mu = truth(c.delay_ns(k));
    if (rng) {
      std::poisson_distribution<std::uint64_t> draw(mu);
      c.bins[k] = draw(*rng);
    } else {
      c.bins[k] = static_cast<std::uint64_t>(std::llround(mu));
    }
  }
  return c;
}

BinGeometry reference_geometry() { return default_geometry(1, 2'500'000); }

double rel(double x, double y) { return std::abs(x - y) / std::abs(y); }

}  // namespace

TEST(LifetimeModel, InfiniteEmitterLimitAtZero) {
  const LifetimeModel m = model(10, 100, kInf, 15.34, 0.0);
  const double r = std::exp(-kPeriod / 15.34);
  const double tail = 2 * r / (1 - r);
  EXPECT_NEAR(m(0.0), 10 + 100 * (1 + tail), 1e-12 * m(0.0));
}

TEST(LifetimeModel, SingleEmitterHasNoCentralPeak) {
  const LifetimeModel m = model(10, 100, 1.0, 15.34, 0.0);
  const double r = std::exp(-kPeriod / 15.34);
  EXPECT_NEAR(m(0.0), 10 + 100 * 2 * r / (1 - r), 1e-12 * m(0.0));
}

TEST(LifetimeModel, TruncationMatchesWideSum) {
  const LifetimeModel m = model(10, 100, 1.0, 15.34, 400.0);
  const double wide = oracle::lifetime_model(10, 100, 1.0, 15.34, kPeriod, 400.0, 10'000);
  EXPECT_NEAR(m(400.0), wide, 1e-12 * wide);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> tau(-600.0, 600.0);
  std::uniform_real_distribution<double> d(1.0, 60.0);
  for (int i = 0; i < 200; ++i) {
    const LifetimeModel mi = model(5, 300, 2.5, d(rng), 600.0);
    const double t = tau(rng);
    const double w = oracle::lifetime_model(5, 300, 2.5, mi.d, kPeriod, t, 10'000);
    EXPECT_NEAR(mi(t), w, 1e-12 * w);
  }
}

TEST(LifetimeModel, RequiredRange) {
  EXPECT_EQ(LifetimeModel::required_n_range(600.0, 15.34, 400.0), 2 + 2);
  EXPECT_EQ(LifetimeModel::required_n_range(400.0, 5.0, 400.0), 1 + 1);
}

TEST(LifetimeModel, ValidateRejectsBadParameters) {
  EXPECT_THROW((LifetimeModel{0, 1, 0.5, 1, 400, 1}.validate()), UsageError);
  EXPECT_THROW((LifetimeModel{0, 1, 2, 0, 400, 1}.validate()), UsageError);
  EXPECT_THROW((LifetimeModel{0, 1, 2, 1, 0, 1}.validate()), UsageError);
  EXPECT_NO_THROW((LifetimeModel{0, 1, 1, 1, 400, 1}.validate()));
}

TEST(LifetimeModel, GradientMatchesCentralDifferences) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 500; ++i) {
    const LifetimeModel m = model(1 + 50 * u(rng), 10 + 1000 * u(rng), 1 + 5 * u(rng), 3 + 40 * u(rng));
    const double tau = -600 + 1200 * u(rng);
    const auto grad = m.gradient(tau);
    for (int p = 0; p < 4; ++p) {
      LifetimeModel up = m;
      LifetimeModel down = m;
      double* pu = p == 0 ? &up.a : p == 1 ? &up.b : p == 2 ? &up.c : &up.d;
      double* pd = p == 0 ? &down.a : p == 1 ? &down.b : p == 2 ? &down.c : &down.d;
      const double h = 1e-5 * std::max(1.0, std::abs(*pu));
      *pu += h;
      *pd -= h;
      const double fd = (up(tau) - down(tau)) / (2 * h);
      const double g = grad[static_cast<std::size_t>(p)];
      EXPECT_NEAR(g, fd, 1e-6 * std::abs(fd) + 1e-9 * std::abs(m(tau))) << "param " << p << " tau " << tau;
    }
  }
}

TEST(LifetimeModel, PeaksAreSymmetric) {
  // Even around 0 for any c; even around every side peak when all peaks share a weight.
  const LifetimeModel m = model(3, 70, 1.7, 12.0);
  const LifetimeModel flat = model(3, 70, kInf, 12.0, 5000.0);
  for (double x = 0.5; x < 200; x += 7.3) {
    EXPECT_NEAR(m(x), m(-x), 1e-12 * m(x));
    EXPECT_NEAR(flat(kPeriod + x), flat(kPeriod - x), 1e-12 * flat(kPeriod + x));
    EXPECT_NEAR(flat(-2 * kPeriod + x), flat(-2 * kPeriod - x), 1e-12 * flat(x));
  }
}

TEST(FitLifetime, NoiselessRecovery) {
  const LifetimeModel truth = model(1.0e6, 1.0e9, 2.0, 15.34);
  const Chronogram c = synthetic(truth, reference_geometry());
  const FitResult fit = fit_lifetime(c);
  EXPECT_TRUE(fit.converged);
  EXPECT_LT(rel(fit.model.a, truth.a), 1e-6);
  EXPECT_LT(rel(fit.model.b, truth.b), 1e-6);
  EXPECT_LT(rel(fit.model.c, truth.c), 1e-6);
  EXPECT_LT(rel(fit.model.d, truth.d), 1e-6);
  EXPECT_DOUBLE_EQ(fit.model.period_ns, 400.0);
}

TEST(FitLifetime, InitialGuessIsNearTruth) {
  const LifetimeModel truth = model(35, 550, 1.07, 15.34);
  std::mt19937_64 rng(3);
  const LifetimeModel g = initial_guess(synthetic(truth, reference_geometry(), &rng));
  EXPECT_NEAR(g.a, 35, 5);
  EXPECT_LT(rel(g.d, 15.34), 0.3);
  EXPECT_GE(g.c, 1.0);
  EXPECT_LE(g.c, 100.0);
  EXPECT_THROW(initial_guess(Chronogram::zeros({1000, -600'000, 100'000}, 1, 2'500'000, {})), UsageError);
}

TEST(FitLifetime, PoissonNoiseAtReferenceStatistics) {
  // Peak and background levels of a 500 s run: about 35 background counts per
  // bin and 550 at the side-peak apex.
  const LifetimeModel truth = model(35, 550, 1.0 / (1.0 - 0.0643), 15.34);
  std::mt19937_64 rng(4);
  int d_within = 0;
  int c_within = 0;
  double d_sum = 0.0;
  const int repeats = 100;
  for (int i = 0; i < repeats; ++i) {
    const FitResult fit = fit_lifetime(synthetic(truth, reference_geometry(), &rng));
    d_within += rel(fit.model.d, truth.d) < 0.02;
    c_within += rel(fit.model.c, truth.c) < 0.10;
    d_sum += fit.model.d;
  }
  EXPECT_EQ(c_within, repeats);
  EXPECT_GE(d_within, 95);
  EXPECT_LT(rel(d_sum / repeats, truth.d), 0.005);
}

TEST(FitLifetime, ScaleEquivariance) {
  const LifetimeModel truth = model(35, 550, 1.2, 15.34);
  std::mt19937_64 rng(5);
  Chronogram c = synthetic(truth, reference_geometry(), &rng);
  for (auto& b : c.bins) b = std::max<std::uint64_t>(b, 1);
  Chronogram scaled = c;
  for (auto& b : scaled.bins) b *= 3;
  const FitResult f1 = fit_lifetime(c);
  const FitResult f3 = fit_lifetime(scaled);
  EXPECT_LT(rel(f3.model.a, 3 * f1.model.a), 1e-6);
  EXPECT_LT(rel(f3.model.b, 3 * f1.model.b), 1e-6);
  EXPECT_LT(rel(f3.model.c, f1.model.c), 1e-6);
  EXPECT_LT(rel(f3.model.d, f1.model.d), 1e-6);
}

TEST(FitLifetime, TranslationByOnePeriod) {
  const LifetimeModel truth = model(2.0e5, 3.0e8, 1.5, 15.34, 1000.0);
  const FitResult centred = fit_lifetime(synthetic(truth, {1000, -600'000, 600'000}));
  const FitResult shifted = fit_lifetime(synthetic(truth, {1000, -200'000, 1'000'000}));
  EXPECT_LT(rel(shifted.model.d, centred.model.d), 1e-6);
  EXPECT_LT(rel(shifted.model.d, truth.d), 1e-6);
}

TEST(FitLifetime, PerfectAntibunchingPinsCAtOne) {
  const LifetimeModel truth = model(1.0e5, 1.0e8, 1.0, 15.34);
  const FitResult fit = fit_lifetime(synthetic(truth, reference_geometry()));
  EXPECT_NEAR(fit.model.c, 1.0, 1e-6);
  EXPECT_LT(rel(fit.model.d, truth.d), 1e-6);
}

TEST(FitLifetime, CentreBelowBackgroundHoldsCAtBound) {
  // A central dip below the flat background would need c < 1.
  Chronogram c = synthetic(model(1000, 1.0e5, 1.0, 15.34), reference_geometry());
  for (std::size_t k = 0; k < c.size(); ++k) {
    if (std::abs(c.delay_ns(k)) < 30) c.bins[k] = 500;
  }
  const FitResult fit = fit_lifetime(c);
  EXPECT_TRUE(fit.c_at_bound);
  EXPECT_EQ(fit.model.c, 1.0);
  EXPECT_EQ(fit_to_json(fit).at("c_at_bound"), true);
}

TEST(FitLifetime, IterationCapIsAConvergenceError) {
  const LifetimeModel truth = model(35, 550, 1.07, 15.34);
  std::mt19937_64 rng(6);
  const Chronogram c = synthetic(truth, reference_geometry(), &rng);
  FitOptions options;
  options.max_iterations = 1;
  try {
    fit_lifetime(c, std::nullopt, options);
    FAIL() << "expected ConvergenceError";
  } catch (const ConvergenceError& e) {
    EXPECT_EQ(e.iterations(), 1);
    EXPECT_GT(e.objective(), 0.0);
  }
}

TEST(FitLifetime, ExclusionMaskLengthIsChecked) {
  const Chronogram c = synthetic(model(35, 550, 1.07, 15.34), reference_geometry());
  FitOptions options;
  options.excluded.assign(3, false);
  EXPECT_THROW(fit_lifetime(c, std::nullopt, options), UsageError);
}

TEST(FitLifetime, JsonAndResiduals) {
  std::mt19937_64 rng(7);
  const Chronogram c = synthetic(model(35, 550, 1.07, 15.34), reference_geometry(), &rng);
  const FitResult fit = fit_lifetime(c);
  const nlohmann::json j = fit_to_json(fit);
  for (const char* key : {"a", "b", "c", "d", "cov", "chi2_reduced", "n_iter", "converged"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  EXPECT_EQ(j.at("cov").size(), 4u);
  EXPECT_NEAR(j.at("cov")[3][3].get<double>(), fit.stddev(3) * fit.stddev(3), 1e-15);
  EXPECT_NEAR(fit.chi2_reduced, 1.0, 0.2);
  const std::string csv = format_residuals(c, fit);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "tau_ns,data,model,residual");
  EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')), c.size() + 1);
}

TEST(AggregateLifetime, TrivialCases) {
  FitResult f;
  f.model.d = 15.34;
  const std::vector<FitResult> same{f, f, f};
  EXPECT_NEAR(aggregate_lifetime(same).standard_error, 0.0, 1e-12);
  FitResult g = f;
  f.model.d = 15.0;
  g.model.d = 16.0;
  const std::vector<FitResult> two{f, g};
  const LifetimeSummary s = aggregate_lifetime(two);
  EXPECT_DOUBLE_EQ(s.mean, 15.5);
  EXPECT_DOUBLE_EQ(s.standard_error, 0.5);
  EXPECT_EQ(s.count, 2u);
  EXPECT_THROW(aggregate_lifetime(std::vector<FitResult>{f}), DegenerateError);
}

TEST(AggregateLifetime, FourPartnerGrouping) {
  // Four partners measuring the same emitter, three runs each.
  SimConfig config = SimConfig::nv_reference();
  config.acquisition_time_s = 100.0;
  const std::vector<std::string> partners{"INRIM", "PTB", "NPL", "CMI"};
  std::vector<std::string> groups;
  std::vector<FitResult> fits;
  for (std::size_t p = 0; p < partners.size(); ++p) {
    for (std::uint32_t run = 0; run < 3; ++run) {
      config.seed = run_seed(100 * (p + 1), run);
      const TimeTagStream s = simulate_run(config, run);
      fits.push_back(fit_lifetime(cross_correlate(s, 0, 1, reference_geometry())));
      groups.push_back(partners[p]);
    }
  }
  const auto grouped = aggregate_by_group(groups, fits);
  ASSERT_EQ(grouped.size(), 4u);
  for (std::size_t p = 0; p < partners.size(); ++p) {
    EXPECT_EQ(grouped[p].group, partners[p]);
    EXPECT_EQ(grouped[p].summary.count, 3u);
    const std::vector<FitResult> mine(fits.begin() + static_cast<std::ptrdiff_t>(3 * p),
                                      fits.begin() + static_cast<std::ptrdiff_t>(3 * p + 3));
    EXPECT_DOUBLE_EQ(grouped[p].summary.mean, aggregate_lifetime(mine).mean);
    // Each partner's mean is within 4 of its own standard errors (floored at
    // the single-fit uncertainty) of the generative lifetime.
    const double se = std::max(grouped[p].summary.standard_error, fits[3 * p].stddev(3) / std::sqrt(3.0));
    EXPECT_NEAR(grouped[p].summary.mean, 15.34, 4 * se + 0.25) << partners[p];
  }
  EXPECT_THROW(aggregate_by_group(std::vector<std::string>{"x"}, fits), UsageError);
}
