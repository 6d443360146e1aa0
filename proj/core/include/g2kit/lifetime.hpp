#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "g2kit/correlator.hpp"

namespace g2kit {

/// Pulse-train coincidence model
///   f(tau) = a + b * sum_n (1 - [n == 0] / c) * exp(-|tau - n dt| / d)
/// with tau in ns. a: background counts per bin, b: peak normalisation,
/// c: number of excited emitters, d: lifetime including detector jitter,
/// dt: excitation period. The sum runs over |n| <= n_range.
struct LifetimeModel {
  double a = 0.0;
  double b = 0.0;
  double c = 1.0;
  double d = 1.0;
  double period_ns = 400.0;
  int n_range = 1;

  /// Smallest n_range whose omitted terms are below 1e-12 of the peak for
  /// |tau| <= max_abs_tau_ns: ceil(range/dt) + ceil(40 d/dt).
  static int required_n_range(double max_abs_tau_ns, double d, double period_ns);

  /// Throws UsageError unless d > 0, period > 0 and c >= 1.
  void validate() const;
  double operator()(double tau_ns) const;
  /// d f / d(a, b, c, d).
  std::array<double, 4> gradient(double tau_ns) const;
};

struct FitOptions {
  int max_iterations = 500;
  double gradient_tolerance = 1e-8;
  /// Bins to leave out of the objective (same length as the chronogram, or empty).
  std::vector<bool> excluded;
};

struct FitResult {
  LifetimeModel model;
  std::array<std::array<double, 4>, 4> covariance{};  // (a, b, c, d)
  double chi2 = 0.0;
  double chi2_reduced = 0.0;
  int iterations = 0;
  bool converged = false;
  std::size_t bins_used = 0;
  bool c_at_bound = false;  // c pinned at 1

  double stddev(std::size_t i) const;
};

/// Deterministic starting point: a from the median of the background region
/// around -T/2, d from a log-linear fit of the +T peak's right flank, b from
/// the +T peak height and c from the depth of the central peak.
LifetimeModel initial_guess(const Chronogram& chronogram);

/// Poisson-weighted (1 / max(N, 1)) least squares over (a, b, c, d) with the
/// period fixed from the excitation rate. Damped Gauss-Newton with box
/// constraints (b >= 0, c >= 1, d > 0); every accepted step lowers chi^2.
/// Throws ConvergenceError on a singular system or when the iteration cap
/// is reached.
FitResult fit_lifetime(const Chronogram& chronogram, std::optional<LifetimeModel> init = std::nullopt,
                       const FitOptions& options = {});

struct LifetimeSummary {
  double mean = 0.0;
  double standard_error = 0.0;
  std::size_t count = 0;
};

/// Unweighted mean of d and the standard error of the mean. Needs >= 2 fits.
LifetimeSummary aggregate_lifetime(std::span<const FitResult> fits);

struct GroupedLifetime {
  std::string group;
  LifetimeSummary summary;
};

/// aggregate_lifetime per group label, in order of first appearance.
std::vector<GroupedLifetime> aggregate_by_group(std::span<const std::string> groups,
                                                std::span<const FitResult> fits);

nlohmann::json fit_to_json(const FitResult& fit);
/// CSV tau_ns,data,model,residual.
std::string format_residuals(const Chronogram& chronogram, const FitResult& fit);

}  // namespace g2kit
