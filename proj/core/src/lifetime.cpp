#include "g2kit/lifetime.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <Eigen/Dense>

#include "g2kit/error.hpp"

namespace g2kit {

namespace {

// Internal parameter vector: (a, b, q = 1/c, d). q in [0, 1] keeps c >= 1
// as a box constraint and stays finite as c grows.
using Params = Eigen::Vector4d;
constexpr int kA = 0;
constexpr int kB = 1;
constexpr int kQ = 2;
constexpr int kD = 3;

struct Sample {
  double tau;
  double value;
  double weight;
};

struct Evaluation {
  double f = 0.0;
  Eigen::Vector4d grad = Eigen::Vector4d::Zero();  // w.r.t. (a, b, q, d)
};

Evaluation evaluate(const Params& p, double tau, double period, int n_range) {
  const double d = p[kD];
  double sum = 0.0;
  double dsum = 0.0;  // d/dd of the weighted sum
  double e0 = 0.0;
  for (int n = -n_range; n <= n_range; ++n) {
    const double dist = std::abs(tau - n * period);
    const double e = std::exp(-dist / d);
    const double weight = n == 0 ? 1.0 - p[kQ] : 1.0;
    if (n == 0) e0 = e;
    sum += weight * e;
    dsum += weight * e * dist / (d * d);
  }
  Evaluation out;
  out.f = p[kA] + p[kB] * sum;
  out.grad << 1.0, sum, -p[kB] * e0, p[kB] * dsum;
  return out;
}

int n_range_for(double max_abs_tau, double d, double period) {
  return LifetimeModel::required_n_range(max_abs_tau, d, period);
}

double objective(const std::vector<Sample>& samples, const Params& p, double period, double max_tau) {
  const int n_range = n_range_for(max_tau, p[kD], period);
  double chi2 = 0.0;
  for (const auto& s : samples) {
    const double r = s.value - evaluate(p, s.tau, period, n_range).f;
    chi2 += s.weight * r * r;
  }
  return chi2;
}

std::vector<std::size_t> bins_between(const Chronogram& c, double lo_ns, double hi_ns) {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < c.size(); ++k) {
    const double t = c.delay_ns(k);
    if (t >= lo_ns && t < hi_ns) out.push_back(k);
  }
  return out;
}

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  double m = *mid;
  if (v.size() % 2 == 0) m = 0.5 * (m + *std::max_element(v.begin(), mid));
  return m;
}

LifetimeModel to_model(const Params& p, double period, double max_tau) {
  LifetimeModel m;
  m.a = p[kA];
  m.b = p[kB];
  m.c = p[kQ] > 0.0 ? 1.0 / p[kQ] : std::numeric_limits<double>::infinity();
  m.d = p[kD];
  m.period_ns = period;
  m.n_range = n_range_for(max_tau, p[kD], period);
  return m;
}

double max_abs_tau(const Chronogram& c) {
  return std::max(std::abs(c.ticks_to_ns(static_cast<double>(c.geometry.min_delay_ticks))),
                  std::abs(c.ticks_to_ns(static_cast<double>(c.geometry.max_delay_ticks))));
}

}  // namespace

int LifetimeModel::required_n_range(double max_abs_tau_ns, double d, double period_ns) {
  return static_cast<int>(std::ceil(max_abs_tau_ns / period_ns) + std::ceil(40.0 * d / period_ns));
}

void LifetimeModel::validate() const {
  if (!(d > 0.0)) throw UsageError("lifetime d must be positive");
  if (!(period_ns > 0.0)) throw UsageError("excitation period must be positive");
  if (!(c >= 1.0)) throw UsageError("emitter number c must be >= 1");
  if (n_range < 0) throw UsageError("n_range must be non-negative");
}

double LifetimeModel::operator()(double tau_ns) const {
  double sum = 0.0;
  for (int n = -n_range; n <= n_range; ++n) {
    const double weight = n == 0 ? 1.0 - 1.0 / c : 1.0;
    sum += weight * std::exp(-std::abs(tau_ns - n * period_ns) / d);
  }
  return a + b * sum;
}

std::array<double, 4> LifetimeModel::gradient(double tau_ns) const {
  double sum = 0.0;
  double dsum = 0.0;
  double e0 = 0.0;
  for (int n = -n_range; n <= n_range; ++n) {
    const double dist = std::abs(tau_ns - n * period_ns);
    const double e = std::exp(-dist / d);
    const double weight = n == 0 ? 1.0 - 1.0 / c : 1.0;
    if (n == 0) e0 = e;
    sum += weight * e;
    dsum += weight * e * dist / (d * d);
  }
  return {1.0, sum, b * e0 / (c * c), b * dsum};
}

double FitResult::stddev(std::size_t i) const { return std::sqrt(covariance.at(i).at(i)); }

LifetimeModel initial_guess(const Chronogram& chronogram) {
  if (chronogram.excitation_rate_hz == 0) throw UsageError("chronogram has no excitation rate");
  const double period = chronogram.ticks_to_ns(chronogram.period().ticks());
  const double lo = chronogram.ticks_to_ns(static_cast<double>(chronogram.geometry.min_delay_ticks));
  const double hi = chronogram.ticks_to_ns(static_cast<double>(chronogram.geometry.max_delay_ticks));
  if (lo > 0.0 || hi < period) {
    throw UsageError("chronogram must span the central and +T peaks for a lifetime fit");
  }
  const double bin = chronogram.bin_width_ns();
  auto value = [&](std::size_t k) { return static_cast<double>(chronogram.bins[k]); };

  // a: median of bins far from every peak (within T/8 of the midpoints).
  std::vector<double> background;
  for (long m = static_cast<long>(std::floor(lo / period)) - 1; m * period <= hi; ++m) {
    const double mid = (static_cast<double>(m) + 0.5) * period;
    for (const auto k : bins_between(chronogram, mid - period / 8, mid + period / 8)) background.push_back(value(k));
  }
  LifetimeModel m;
  m.period_ns = period;
  m.a = median_of(background);

  double apex = -1.0;
  std::size_t apex_bin = 0;
  for (const auto k : bins_between(chronogram, period - 3 * bin, period + 3 * bin)) {
    if (value(k) > apex) {
      apex = value(k);
      apex_bin = k;
    }
  }
  const double height = apex - m.a;
  m.d = period / 25.0;
  if (height > 0.0) {
    // weighted log-linear regression over the 1-3 lifetime flank
    double sw = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
    std::size_t used = 0;
    for (std::size_t k = apex_bin + 1; k < chronogram.size() && chronogram.delay_ns(k) < period * 1.5; ++k) {
      const double y = value(k) - m.a;
      if (y > height * std::exp(-1.0) || y < height * std::exp(-3.0) || y <= 0.0) continue;
      const double x = chronogram.delay_ns(k);
      const double w = y;
      sw += w;
      sx += w * x;
      sy += w * std::log(y);
      sxx += w * x * x;
      sxy += w * x * std::log(y);
      ++used;
    }
    const double det = sw * sxx - sx * sx;
    if (used >= 3 && det > 0.0) {
      const double slope = (sw * sxy - sx * sy) / det;
      if (slope < 0.0) m.d = std::clamp(-1.0 / slope, bin * 0.5, period);
    }
  }
  m.b = std::max(height, 1.0);

  // c: from the central-peak depth relative to an unsuppressed peak.
  const double ratio = std::exp(-period / m.d);
  const double tail = 2.0 * ratio / (1.0 - ratio);
  std::vector<double> centre;
  for (const auto k : bins_between(chronogram, -1.5 * bin, 1.5 * bin)) centre.push_back(value(k));
  const double h0 = centre.empty() ? m.a : std::accumulate(centre.begin(), centre.end(), 0.0) / static_cast<double>(centre.size());
  const double depth = (h0 - m.a - m.b * tail) / m.b;  // 1 - 1/c
  m.c = depth >= 0.99 ? 100.0 : std::clamp(1.0 / (1.0 - std::max(depth, 0.0)), 1.0, 100.0);
  m.n_range = LifetimeModel::required_n_range(std::max(std::abs(lo), std::abs(hi)), m.d, period);
  return m;
}

FitResult fit_lifetime(const Chronogram& chronogram, std::optional<LifetimeModel> init, const FitOptions& options) {
  if (!options.excluded.empty() && options.excluded.size() != chronogram.size()) {
    throw UsageError("exclusion mask length differs from the chronogram");
  }
  const LifetimeModel start = init ? *init : initial_guess(chronogram);
  start.validate();
  const double period = chronogram.ticks_to_ns(chronogram.period().ticks());
  const double max_tau = max_abs_tau(chronogram);
  const double d_min = 1e-3 * chronogram.bin_width_ns();
  const double d_max = 10.0 * period;

  std::vector<Sample> samples;
  samples.reserve(chronogram.size());
  for (std::size_t k = 0; k < chronogram.size(); ++k) {
    if (!options.excluded.empty() && options.excluded[k]) continue;
    const double v = static_cast<double>(chronogram.bins[k]);
    samples.push_back({chronogram.delay_ns(k), v, 1.0 / std::max(v, 1.0)});
  }
  if (samples.size() <= 4) throw UsageError("too few bins for a four-parameter fit");

  Params p(start.a, start.b, 1.0 / start.c, std::clamp(start.d, d_min, d_max));
  const Eigen::Vector4d lower(-std::numeric_limits<double>::infinity(), 0.0, 0.0, d_min);
  const Eigen::Vector4d upper(std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(), 1.0, d_max);

  auto normal_equations = [&](const Params& params, Eigen::Matrix4d& jtj, Eigen::Vector4d& g) {
    const int n_range = n_range_for(max_tau, params[kD], period);
    jtj.setZero();
    g.setZero();
    double chi2 = 0.0;
    for (const auto& s : samples) {
      const Evaluation e = evaluate(params, s.tau, period, n_range);
      const double r = s.value - e.f;
      chi2 += s.weight * r * r;
      jtj.noalias() += s.weight * e.grad * e.grad.transpose();
      g.noalias() += s.weight * r * e.grad;
    }
    return chi2;
  };

  Eigen::Matrix4d jtj;
  Eigen::Vector4d g;
  double chi2 = normal_equations(p, jtj, g);
  double lambda = 1e-3;
  int iter = 0;
  bool converged = false;
  for (; iter < options.max_iterations; ++iter) {
    // Parameters pinned at a bound whose gradient points outward are held fixed.
    std::array<bool, 4> free{};
    double scaled_gradient = 0.0;
    for (int i = 0; i < 4; ++i) {
      const bool at_lower = p[i] <= lower[i] && g[i] <= 0.0;
      const bool at_upper = p[i] >= upper[i] && g[i] >= 0.0;
      free[i] = !(at_lower || at_upper);
      if (free[i] && jtj(i, i) > 0.0) {
        scaled_gradient = std::max(scaled_gradient, std::abs(g[i]) / std::sqrt(jtj(i, i) * std::max(chi2, 1.0)));
      }
    }
    if (scaled_gradient < options.gradient_tolerance) {
      converged = true;
      break;
    }

    bool accepted = false;
    while (!accepted) {
      Eigen::Matrix4d system = jtj;
      Eigen::Vector4d rhs = g;
      for (int i = 0; i < 4; ++i) {
        if (!free[i]) {
          system.row(i).setZero();
          system.col(i).setZero();
          system(i, i) = 1.0;
          rhs[i] = 0.0;
        } else {
          system(i, i) += lambda * std::max(jtj(i, i), 1e-300);
        }
      }
      Eigen::LDLT<Eigen::Matrix4d> solver(system);
      if (solver.info() != Eigen::Success || !solver.isPositive()) {
        throw ConvergenceError("singular normal equations in lifetime fit", iter, chi2);
      }
      const Eigen::Vector4d step = solver.solve(rhs);
      const Params trial = (p + step).cwiseMax(lower).cwiseMin(upper);
      const double trial_chi2 = objective(samples, trial, period, max_tau);
      if (std::isfinite(trial_chi2) && trial_chi2 < chi2) {
        const double decrease = chi2 - trial_chi2;
        p = trial;
        chi2 = normal_equations(p, jtj, g);
        lambda = std::max(lambda / 3.0, 1e-12);
        accepted = true;
        if (decrease <= 1e-15 * std::max(chi2, 1e-300)) converged = true;
      } else {
        lambda *= 4.0;
        if (lambda > 1e16) {
          // No damping yields a decrease: chi^2 is at its floating-point minimum.
          converged = true;
          break;
        }
      }
    }
    if (converged) {
      ++iter;
      break;
    }
  }
  if (!converged) {
    throw ConvergenceError("lifetime fit reached the iteration cap", iter, chi2);
  }

  FitResult result;
  result.model = to_model(p, period, max_tau);
  result.chi2 = chi2;
  result.bins_used = samples.size();
  result.chi2_reduced = chi2 / static_cast<double>(samples.size() - 4);
  result.iterations = iter;
  result.converged = true;
  result.c_at_bound = p[kQ] >= 1.0;

  // Covariance of (a, b, q, d) mapped to (a, b, c, d) through dc/dq = -1/q^2.
  Eigen::FullPivLU<Eigen::Matrix4d> lu(jtj);
  if (lu.isInvertible() && p[kQ] > 0.0) {
    Eigen::Matrix4d transform = Eigen::Matrix4d::Identity();
    transform(kQ, kQ) = -1.0 / (p[kQ] * p[kQ]);
    const Eigen::Matrix4d cov = transform * lu.inverse() * transform.transpose();
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 4; ++j) result.covariance[i][j] = cov(i, j);
    }
  } else {
    for (auto& row : result.covariance) row.fill(std::numeric_limits<double>::quiet_NaN());
  }
  return result;
}

LifetimeSummary aggregate_lifetime(std::span<const FitResult> fits) {
  if (fits.size() < 2) throw DegenerateError("lifetime aggregation needs at least two fits");
  LifetimeSummary s;
  s.count = fits.size();
  for (const auto& f : fits) s.mean += f.model.d;
  const auto n = static_cast<double>(fits.size());
  s.mean /= n;
  double ss = 0.0;
  for (const auto& f : fits) ss += (f.model.d - s.mean) * (f.model.d - s.mean);
  s.standard_error = std::sqrt(ss / (n - 1.0) / n);
  return s;
}

std::vector<GroupedLifetime> aggregate_by_group(std::span<const std::string> groups, std::span<const FitResult> fits) {
  if (groups.size() != fits.size()) throw UsageError("one group label per fit is required");
  std::vector<GroupedLifetime> out;
  std::vector<std::string> order;
  for (const auto& g : groups) {
    if (std::find(order.begin(), order.end(), g) == order.end()) order.push_back(g);
  }
  for (const auto& label : order) {
    std::vector<FitResult> members;
    for (std::size_t i = 0; i < fits.size(); ++i) {
      if (groups[i] == label) members.push_back(fits[i]);
    }
    out.push_back({label, aggregate_lifetime(members)});
  }
  return out;
}

nlohmann::json fit_to_json(const FitResult& fit) {
  nlohmann::json cov = nlohmann::json::array();
  for (const auto& row : fit.covariance) {
    nlohmann::json r = nlohmann::json::array();
    for (const double v : row) r.push_back(std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr));
    cov.push_back(r);
  }
  return {{"a", fit.model.a},
          {"b", fit.model.b},
          {"c", std::isfinite(fit.model.c) ? nlohmann::json(fit.model.c) : nlohmann::json(nullptr)},
          {"d", fit.model.d},
          {"period_ns", fit.model.period_ns},
          {"cov", cov},
          {"chi2_reduced", fit.chi2_reduced},
          {"n_iter", fit.iterations},
          {"converged", fit.converged},
          {"bins_used", fit.bins_used},
          {"c_at_bound", fit.c_at_bound},
          {"metadata",
           {{"weighting", "1/max(N_i,1) (Poisson)"},
            {"optimizer", "damped Gauss-Newton (Levenberg-Marquardt) with box constraints"},
            {"covariance", "(J^T W J)^-1, not rescaled by chi2_reduced"},
            {"model_evaluated_at", "bin centre"}}}};
}

std::string format_residuals(const Chronogram& chronogram, const FitResult& fit) {
  std::ostringstream out;
  out.precision(10);
  out << "tau_ns,data,model,residual\n";
  for (std::size_t k = 0; k < chronogram.size(); ++k) {
    const double tau = chronogram.delay_ns(k);
    const double model = fit.model(tau);
    const auto data = static_cast<double>(chronogram.bins[k]);
    out << tau << ',' << chronogram.bins[k] << ',' << model << ',' << data - model << '\n';
  }
  return out.str();
}

}  // namespace g2kit
