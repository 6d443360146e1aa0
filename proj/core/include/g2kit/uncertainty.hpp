#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "g2kit/estimator.hpp"

namespace g2kit {

/// Real-valued (N_C, N_xi, N_bg), used for run means and their uncertainties.
struct CountValues {
  double c = 0.0;
  double xi = 0.0;
  double bg = 0.0;

  static CountValues from(const CountTriple& t) {
    return {static_cast<double>(t.n_c), static_cast<double>(t.n_xi), static_cast<double>(t.n_bg)};
  }
  std::array<double, 3> as_array() const { return {c, xi, bg}; }
};

/// Partial derivatives of alpha_exp with respect to N_C, N_xi and N_bg.
struct Sensitivities {
  double c = 0.0;
  double xi = 0.0;
  double bg = 0.0;

  std::array<double, 3> as_array() const { return {c, xi, bg}; }
};

Sensitivities sensitivities(const CountValues& counts);
inline Sensitivities sensitivities(const CountTriple& counts) { return sensitivities(CountValues::from(counts)); }

double alpha_of(const CountValues& counts);

using CorrelationMatrix = std::array<std::array<double, 3>, 3>;

inline constexpr CorrelationMatrix kIdentityCorrelation{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};

/// Symmetric, unit diagonal, entries in [-1, 1] (to 1e-12).
bool is_valid_correlation(const CorrelationMatrix& rho);

struct RunSeries {
  std::vector<CountTriple> runs;

  std::size_t size() const { return runs.size(); }
};

CountValues sample_mean(const RunSeries& series);
/// Sample standard deviation (n - 1 normalisation) across runs.
CountValues sample_stddev(const RunSeries& series);

/// Pearson correlation of the per-run counts, using the same n - 1
/// normalisation as sample_stddev, clamped to [-1, 1]. Throws
/// DegenerateError for fewer than two runs or a zero-variance series.
CorrelationMatrix correlation_matrix(const RunSeries& series);

/// Generic first-order propagation: sqrt(v^T rho v) with v_x = s_x u_x.
/// Throws DegenerateError when the radicand is negative beyond 1e-12 relative
/// to the uncorrelated sum, UsageError for an invalid rho.
double propagate(const std::array<double, 3>& sens, const std::array<double, 3>& u, const CorrelationMatrix& rho);

/// Combined standard uncertainty (k = 1) of alpha for correlated inputs:
/// sqrt(sum_x (c_x u_x)^2 + 2 sum_{x<y} rho_xy c_x c_y u_x u_y).
double combined_uncertainty(const CountValues& counts, const CountValues& u, const CorrelationMatrix& rho);

/// Independent Poisson counts: u(N) = sqrt(N), rho = identity.
double poisson_uncertainty(const CountTriple& counts);

struct BudgetRow {
  std::string quantity;
  double value = 0.0;
  double standard_uncertainty = 0.0;  // at the budget's k
  double sensitivity = 0.0;
  double contribution = 0.0;  // sensitivity * standard_uncertainty
};

/// Uncertainty budget of alpha_exp. Uncertainties are stored at k = 1 and
/// rendered at `k`.
struct AlphaBudget {
  std::string label;
  CountValues mean;
  CountValues u;  // k = 1
  Sensitivities sensitivity;
  CorrelationMatrix rho = kIdentityCorrelation;
  double alpha = 0.0;
  double u_combined = 0.0;  // k = 1
  double k = 2.0;
  std::size_t n_runs = 0;

  double expanded() const { return k * u_combined; }
  std::vector<BudgetRow> rows() const;
};

AlphaBudget make_budget(const CountValues& mean, const CountValues& u, const CorrelationMatrix& rho, double k);

/// Budget from per-run counts: means, sample standard deviations and the
/// sample correlation matrix.
AlphaBudget budget_report(const RunSeries& series, double k = 2.0);

/// Aligned text table: Quantity, Value, Standard unc., Sens. Coeff.,
/// Unc. contribution, with a final alpha_exp row carrying U = k u_c.
std::string render_budget_table(const AlphaBudget& budget);
nlohmann::json budget_to_json(const AlphaBudget& budget);
AlphaBudget budget_from_json(const nlohmann::json& j);

struct Measurement {
  std::string label;
  double alpha = 0.0;
  double expanded_uncertainty = 0.0;
  double k = 2.0;

  static Measurement from(const AlphaBudget& budget);
};

struct ComparisonResult {
  std::array<std::string, 2> labels;
  std::array<Measurement, 2> measurements;
  double normalized_error = 0.0;
  bool compatible = false;
};

/// E = |a - b| / sqrt(U_a^2 + U_b^2); compatible when E <= 1. Throws
/// UsageError when the coverage factors differ.
ComparisonResult compare(const Measurement& a, const Measurement& b);
ComparisonResult compare(const AlphaBudget& a, const AlphaBudget& b);
nlohmann::json comparison_to_json(const ComparisonResult& result);

struct RunStatistics {
  std::vector<double> alphas;
  double mean = 0.0;
  double sigma = 0.0;  // sample standard deviation
};

RunStatistics run_statistics(const RunSeries& series);
std::string format_run_statistics(const RunStatistics& stats);

}  // namespace g2kit
