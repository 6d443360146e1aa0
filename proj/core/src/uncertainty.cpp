#include "g2kit/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <sstream>

#include "g2kit/error.hpp"

namespace g2kit {

namespace {

std::string sig(double value, int digits = 3) {
  std::array<char, 48> buf{};
  std::snprintf(buf.data(), buf.size(), "%.*g", digits, value);
  return buf.data();
}

constexpr std::array<const char*, 3> kInputNames{"N_C", "N_xi", "N_bg"};

}  // namespace

double alpha_of(const CountValues& n) {
  const double den = n.xi - n.bg;
  if (!(den > 0.0)) throw DegenerateError("N_xi must exceed N_bg");
  return (n.c - n.bg) / den;
}

Sensitivities sensitivities(const CountValues& n) {
  const double den = n.xi - n.bg;
  if (!(den > 0.0)) throw DegenerateError("sensitivities undefined: N_xi must exceed N_bg");
  Sensitivities s;
  s.c = 1.0 / den;
  s.xi = -(n.c - n.bg) / (den * den);
  s.bg = -s.c - s.xi;
  return s;
}

bool is_valid_correlation(const CorrelationMatrix& rho) {
  constexpr double tol = 1e-12;
  for (std::size_t i = 0; i < 3; ++i) {
    if (std::abs(rho[i][i] - 1.0) > tol) return false;
    for (std::size_t j = 0; j < 3; ++j) {
      if (!std::isfinite(rho[i][j]) || std::abs(rho[i][j]) > 1.0 + tol) return false;
      if (std::abs(rho[i][j] - rho[j][i]) > tol) return false;
    }
  }
  return true;
}

CountValues sample_mean(const RunSeries& series) {
  if (series.runs.empty()) throw DegenerateError("empty run series");
  CountValues m;
  for (const auto& t : series.runs) {
    m.c += static_cast<double>(t.n_c);
    m.xi += static_cast<double>(t.n_xi);
    m.bg += static_cast<double>(t.n_bg);
  }
  const auto n = static_cast<double>(series.size());
  return {m.c / n, m.xi / n, m.bg / n};
}

namespace {

std::array<std::array<double, 3>, 3> sample_covariance(const RunSeries& series) {
  if (series.size() < 2) throw DegenerateError("at least two runs are needed for a variance estimate");
  const auto mean = sample_mean(series).as_array();
  std::array<std::array<double, 3>, 3> cov{};
  for (const auto& t : series.runs) {
    const auto x = CountValues::from(t).as_array();
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = 0; j < 3; ++j) cov[i][j] += (x[i] - mean[i]) * (x[j] - mean[j]);
    }
  }
  const auto dof = static_cast<double>(series.size() - 1);
  for (auto& row : cov) {
    for (auto& v : row) v /= dof;
  }
  return cov;
}

}  // namespace

CountValues sample_stddev(const RunSeries& series) {
  const auto cov = sample_covariance(series);
  return {std::sqrt(cov[0][0]), std::sqrt(cov[1][1]), std::sqrt(cov[2][2])};
}

CorrelationMatrix correlation_matrix(const RunSeries& series) {
  const auto cov = sample_covariance(series);
  for (std::size_t i = 0; i < 3; ++i) {
    if (!(cov[i][i] > 0.0)) {
      throw DegenerateError(std::string("correlation undefined: ") + kInputNames[i] + " has zero variance across runs");
    }
  }
  CorrelationMatrix rho{};
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      rho[i][j] = i == j ? 1.0 : std::clamp(cov[i][j] / std::sqrt(cov[i][i] * cov[j][j]), -1.0, 1.0);
    }
  }
  return rho;
}

double propagate(const std::array<double, 3>& sens, const std::array<double, 3>& u, const CorrelationMatrix& rho) {
  if (!is_valid_correlation(rho)) throw UsageError("correlation matrix must be symmetric with unit diagonal");
  std::array<double, 3> v{};
  double squares = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    if (u[i] < 0.0) throw UsageError("standard uncertainties must be non-negative");
    v[i] = sens[i] * u[i];
    squares += v[i] * v[i];
  }
  double variance = squares;
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = i + 1; j < 3; ++j) variance += 2.0 * rho[i][j] * v[i] * v[j];
  }
  if (variance < -1e-12 * squares) {
    throw DegenerateError("correlation matrix yields a negative variance");
  }
  return std::sqrt(std::max(variance, 0.0));
}

double combined_uncertainty(const CountValues& counts, const CountValues& u, const CorrelationMatrix& rho) {
  return propagate(sensitivities(counts).as_array(), u.as_array(), rho);
}

double poisson_uncertainty(const CountTriple& counts) {
  const CountValues n = CountValues::from(counts);
  return combined_uncertainty(n, {std::sqrt(n.c), std::sqrt(n.xi), std::sqrt(n.bg)}, kIdentityCorrelation);
}

std::vector<BudgetRow> AlphaBudget::rows() const {
  const auto m = mean.as_array();
  const auto ux = u.as_array();
  const auto s = sensitivity.as_array();
  std::vector<BudgetRow> out;
  for (std::size_t i = 0; i < 3; ++i) {
    out.push_back(BudgetRow{kInputNames[i], m[i], k * ux[i], s[i], s[i] * k * ux[i]});
  }
  return out;
}

AlphaBudget make_budget(const CountValues& mean, const CountValues& u, const CorrelationMatrix& rho, double k) {
  if (!(k > 0.0)) throw UsageError("coverage factor must be positive");
  AlphaBudget b;
  b.mean = mean;
  b.u = u;
  b.rho = rho;
  b.k = k;
  b.sensitivity = sensitivities(mean);
  b.alpha = alpha_of(mean);
  b.u_combined = combined_uncertainty(mean, u, rho);
  return b;
}

AlphaBudget budget_report(const RunSeries& series, double k) {
  AlphaBudget b = make_budget(sample_mean(series), sample_stddev(series), correlation_matrix(series), k);
  b.n_runs = series.size();
  return b;
}

std::string render_budget_table(const AlphaBudget& budget) {
  std::ostringstream out;
  auto row = [&](const std::string& a, const std::string& b, const std::string& c, const std::string& d,
                 const std::string& e) {
    out << std::left << std::setw(10) << a << std::setw(12) << b << std::setw(15) << c << std::setw(14) << d << e
        << '\n';
  };
  out << "Uncertainty budget (k=" << sig(budget.k) << ")";
  if (!budget.label.empty()) out << " - " << budget.label;
  out << '\n';
  row("Quantity", "Value", "Standard unc.", "Sens. Coeff.", "Unc. contribution");
  for (const auto& r : budget.rows()) {
    row(r.quantity, sig(r.value, 6), sig(r.standard_uncertainty), sig(r.sensitivity), sig(r.contribution));
  }
  row("alpha_exp", sig(budget.alpha), "", "", sig(budget.expanded()));
  return out.str();
}

nlohmann::json budget_to_json(const AlphaBudget& b) {
  nlohmann::json inputs = nlohmann::json::array();
  const auto m = b.mean.as_array();
  const auto ux = b.u.as_array();
  const auto s = b.sensitivity.as_array();
  for (std::size_t i = 0; i < 3; ++i) {
    inputs.push_back({{"name", kInputNames[i]}, {"value", m[i]}, {"u", b.k * ux[i]}, {"k", b.k}});
  }
  nlohmann::json j;
  j["label"] = b.label;
  j["inputs"] = inputs;
  j["sensitivities"] = {{"N_C", s[0]}, {"N_xi", s[1]}, {"N_bg", s[2]}};
  j["rho"] = b.rho;
  j["alpha"] = b.alpha;
  j["u_combined"] = b.u_combined;
  j["k"] = b.k;
  j["U"] = b.expanded();
  j["n_runs"] = b.n_runs;
  j["metadata"] = {
      {"u_combined_coverage", "k=1"},
      {"inputs_u_coverage", "k (standard uncertainties stored at k=1, multiplied by k for reporting)"},
      {"u_of_counts", "sample standard deviation across runs"},
  };
  return j;
}

AlphaBudget budget_from_json(const nlohmann::json& j) {
  try {
    AlphaBudget b;
    b.label = j.value("label", std::string{});
    b.k = j.at("k").get<double>();
    if (!(b.k > 0.0)) throw FormatError("budget JSON has a non-positive k");
    const auto& inputs = j.at("inputs");
    if (!inputs.is_array() || inputs.size() != 3) throw FormatError("budget JSON needs three inputs");
    std::array<double, 3> m{};
    std::array<double, 3> ux{};
    for (std::size_t i = 0; i < 3; ++i) {
      if (inputs[i].at("name").get<std::string>() != kInputNames[i]) {
        throw FormatError(std::string("budget JSON input ") + std::to_string(i) + " should be " + kInputNames[i]);
      }
      m[i] = inputs[i].at("value").get<double>();
      ux[i] = inputs[i].at("u").get<double>() / inputs[i].value("k", b.k);
    }
    b.mean = {m[0], m[1], m[2]};
    b.u = {ux[0], ux[1], ux[2]};
    b.rho = j.at("rho").get<CorrelationMatrix>();
    b.sensitivity = sensitivities(b.mean);
    b.alpha = j.at("alpha").get<double>();
    b.u_combined = j.at("u_combined").get<double>();
    b.n_runs = j.value("n_runs", std::size_t{0});
    return b;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed budget JSON: ") + e.what());
  }
}

Measurement Measurement::from(const AlphaBudget& budget) {
  return Measurement{budget.label, budget.alpha, budget.expanded(), budget.k};
}

ComparisonResult compare(const Measurement& a, const Measurement& b) {
  if (a.k != b.k) throw UsageError("cannot compare results stated at different coverage factors");
  ComparisonResult r;
  r.labels = {a.label, b.label};
  r.measurements = {a, b};
  const double diff = std::abs(a.alpha - b.alpha);
  const double scale = std::hypot(a.expanded_uncertainty, b.expanded_uncertainty);
  r.normalized_error = scale > 0.0 ? diff / scale : (diff == 0.0 ? 0.0 : INFINITY);
  r.compatible = r.normalized_error <= 1.0;
  return r;
}

ComparisonResult compare(const AlphaBudget& a, const AlphaBudget& b) {
  return compare(Measurement::from(a), Measurement::from(b));
}

nlohmann::json comparison_to_json(const ComparisonResult& r) {
  nlohmann::json results = nlohmann::json::array();
  for (const auto& m : r.measurements) {
    results.push_back({{"label", m.label}, {"alpha", m.alpha}, {"U", m.expanded_uncertainty}, {"k", m.k}});
  }
  return {{"labels", r.labels},
          {"results", results},
          {"normalized_error", r.normalized_error},
          {"compatible", r.compatible}};
}

RunStatistics run_statistics(const RunSeries& series) {
  if (series.size() < 2) throw DegenerateError("run statistics need at least two runs");
  RunStatistics s;
  for (const auto& t : series.runs) s.alphas.push_back(compute_alpha(t).alpha);
  const auto n = static_cast<double>(s.alphas.size());
  for (const double a : s.alphas) s.mean += a;
  s.mean /= n;
  double ss = 0.0;
  for (const double a : s.alphas) ss += (a - s.mean) * (a - s.mean);
  s.sigma = std::sqrt(ss / (n - 1.0));
  return s;
}

std::string format_run_statistics(const RunStatistics& stats) {
  std::ostringstream out;
  out.precision(17);
  out << "# mean=" << stats.mean << '\n' << "# sigma=" << stats.sigma << '\n' << "run,alpha\n";
  for (std::size_t i = 0; i < stats.alphas.size(); ++i) out << i << ',' << stats.alphas[i] << '\n';
  return out.str();
}

}  // namespace g2kit
