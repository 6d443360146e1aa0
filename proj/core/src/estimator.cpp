#include "g2kit/estimator.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "g2kit/error.hpp"
#include "wide_int.hpp"
#include "g2kit/lifetime.hpp"
#include "g2kit/uncertainty.hpp"

namespace g2kit {

namespace {

using detail::i128;

i128 floor_div(i128 num, i128 den) {
  i128 q = num / den;
  if ((num % den != 0) && ((num < 0) != (den < 0))) --q;
  return q;
}

/// Interval of k_w bins centred on centre_num / centre_den ticks.
DelayInterval centred_interval(const WindowSpec& w, i128 centre_num, i128 centre_den) {
  const auto bw = static_cast<i128>(w.bin_width_ticks);
  const auto kw = static_cast<i128>(w.k_w);
  // start bin = round_half_up((centre - origin) / bw - k_w / 2)
  const i128 num = 2 * (centre_num - static_cast<i128>(w.grid_origin_ticks) * centre_den) - (kw - 1) * bw * centre_den;
  const i128 start = floor_div(num, 2 * bw * centre_den);
  const i128 lo = static_cast<i128>(w.grid_origin_ticks) + start * bw;
  return DelayInterval{static_cast<std::int64_t>(lo), static_cast<std::int64_t>(lo + kw * bw)};
}

std::uint64_t sum_interval(const Chronogram& c, const DelayInterval& interval) {
  if (interval.lo_ticks < c.geometry.min_delay_ticks || interval.hi_ticks > c.geometry.max_delay_ticks) {
    throw RangeError("integration window [" + std::to_string(interval.lo_ticks) + ", " +
                     std::to_string(interval.hi_ticks) + ") ticks lies outside the chronogram range");
  }
  const auto bw = static_cast<std::int64_t>(c.geometry.bin_width_ticks);
  const auto first = static_cast<std::size_t>((interval.lo_ticks - c.geometry.min_delay_ticks) / bw);
  const auto last = static_cast<std::size_t>((interval.hi_ticks - c.geometry.min_delay_ticks) / bw);
  std::uint64_t total = 0;
  for (std::size_t k = first; k < last; ++k) total += c.bins[k];
  return total;
}

}  // namespace

WindowSpec make_window(double width_ns, const Chronogram& chronogram) {
  if (!(width_ns > 0.0) || !std::isfinite(width_ns)) throw UsageError("window width must be positive");
  WindowSpec w;
  w.width_ns = width_ns;
  w.bin_width_ticks = chronogram.geometry.bin_width_ticks;
  w.grid_origin_ticks = chronogram.geometry.min_delay_ticks;
  w.period = chronogram.period();
  w.resolution_ps = chronogram.resolution_ps;
  const double bins = width_ns / chronogram.bin_width_ns();
  w.k_w = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::llround(bins)));
  return w;
}

WindowIntervals window_intervals(const WindowSpec& w) {
  if (w.k_w == 0 || w.bin_width_ticks == 0) throw UsageError("window has no bins");
  WindowIntervals out;
  out.true_coincidence = centred_interval(w, 0, 1);
  out.accidental = centred_interval(w, static_cast<i128>(w.period.num), static_cast<i128>(w.period.den));
  out.background = centred_interval(w, -static_cast<i128>(w.period.num), 2 * static_cast<i128>(w.period.den));
  if (out.background.hi_ticks > out.true_coincidence.lo_ticks ||
      out.true_coincidence.hi_ticks > out.accidental.lo_ticks) {
    throw GeometryError("integration windows overlap; w must not exceed half the excitation period", "width_ns");
  }
  return out;
}

CountTriple count_windows(const Chronogram& chronogram, const WindowSpec& window) {
  if (window.bin_width_ticks != chronogram.geometry.bin_width_ticks) {
    throw GeometryError("window and chronogram bin widths differ", "bin_width_ticks");
  }
  const auto bw = static_cast<std::int64_t>(window.bin_width_ticks);
  if ((window.grid_origin_ticks - chronogram.geometry.min_delay_ticks) % bw != 0) {
    throw GeometryError("window grid is not aligned with the chronogram bins", "range");
  }
  const WindowIntervals iv = window_intervals(window);
  CountTriple t;
  t.n_c = sum_interval(chronogram, iv.true_coincidence);
  t.n_xi = sum_interval(chronogram, iv.accidental);
  t.n_bg = sum_interval(chronogram, iv.background);
  return t;
}

AlphaEstimate compute_alpha(const CountTriple& counts) {
  if (counts.n_xi <= counts.n_bg) {
    throw DegenerateError("accidental peak (N_xi = " + std::to_string(counts.n_xi) +
                          ") does not exceed the background (N_bg = " + std::to_string(counts.n_bg) + ")");
  }
  AlphaEstimate e;
  e.counts = counts;
  const double num = static_cast<double>(counts.n_c) - static_cast<double>(counts.n_bg);
  const double den = static_cast<double>(counts.n_xi - counts.n_bg);
  e.alpha = num / den;
  e.below_background = counts.n_c < counts.n_bg;
  e.u_alpha_k1 = poisson_uncertainty(counts);
  return e;
}

AlphaEstimate estimate_alpha(const Chronogram& chronogram, const WindowSpec& window) {
  AlphaEstimate e = compute_alpha(count_windows(chronogram, window));
  e.window = window;
  e.n_pulses = chronogram.n_pulses;
  return e;
}

double alpha_from_probabilities(const ClickProbabilities& p) {
  const double da = p.p_a - p.p_a_bg;
  const double db = p.p_b - p.p_b_bg;
  if (!(da > 0.0) || !(db > 0.0)) {
    throw DegenerateError("background-corrected click probabilities must be positive");
  }
  return (p.p_c - p.p_c_bg) / (da * db);
}

FluxCheck low_flux_check(double p_a, double p_b) {
  FluxCheck check;
  check.max_probability = std::max(p_a, p_b);
  check.ok = check.max_probability < kLowFluxLimit;
  if (!check.ok) {
    std::ostringstream msg;
    msg << "click probability per pulse " << check.max_probability << " >= " << kLowFluxLimit
        << "; alpha no longer approximates g2(0)";
    check.message = msg.str();
  }
  return check;
}

WindowValidation validate_window(const Chronogram& chronogram, const WindowSpec& window) {
  WindowValidation report;
  const WindowIntervals iv = window_intervals(window);
  if (chronogram.total() == 0) {
    report.note = "empty chronogram";
    return report;
  }

  const std::size_t n = chronogram.size();
  FitOptions options;
  options.excluded.assign(n, false);
  std::vector<bool> over(n, false);
  std::optional<FitResult> fit;
  for (int pass = 0; pass < 6; ++pass) {
    try {
      fit = fit_lifetime(chronogram, std::nullopt, options);
    } catch (const Error& e) {
      report.note = std::string("model fit failed: ") + e.what();
      return report;
    }
    bool grew = false;
    for (std::size_t k = 0; k < n; ++k) {
      const double model = fit->model(chronogram.delay_ns(k));
      const double data = static_cast<double>(chronogram.bins[k]);
      over[k] = data - model > kBackflashSigmas * std::sqrt(std::max(model, 1.0));
      if (!over[k]) continue;
      const std::size_t lo = k >= 2 ? k - 2 : 0;
      const std::size_t hi = std::min(n - 1, k + 2);
      for (std::size_t j = lo; j <= hi; ++j) {
        if (!options.excluded[j]) {
          options.excluded[j] = true;
          grew = true;
        }
      }
    }
    if (!grew) break;
  }
  report.model_available = true;

  const auto bw = static_cast<std::int64_t>(chronogram.geometry.bin_width_ticks);
  for (std::size_t k = 0; k < n;) {
    if (!over[k]) {
      ++k;
      continue;
    }
    SecondaryPeak peak;
    peak.first_bin = k;
    double weighted = 0.0;
    for (; k < n && over[k]; ++k) {
      const double excess = static_cast<double>(chronogram.bins[k]) - fit->model(chronogram.delay_ns(k));
      peak.excess_counts += excess;
      weighted += excess * chronogram.delay_ns(k);
    }
    peak.last_bin = k - 1;
    peak.delay_ns = weighted / peak.excess_counts;
    const std::int64_t lo = chronogram.geometry.min_delay_ticks + static_cast<std::int64_t>(peak.first_bin) * bw;
    const std::int64_t hi = chronogram.geometry.min_delay_ticks + static_cast<std::int64_t>(peak.last_bin + 1) * bw;
    const bool inside = lo < iv.true_coincidence.hi_ticks && hi > iv.true_coincidence.lo_ticks;
    (inside ? report.flagged : report.elsewhere).push_back(peak);
  }
  if (!report.flagged.empty()) {
    std::ostringstream msg;
    msg << report.flagged.size() << " secondary peak(s) inside the true-coincidence window";
    report.note = msg.str();
  }
  return report;
}

std::vector<SweepPoint> window_sweep(const Chronogram& chronogram, std::span<const double> widths_ns) {
  std::vector<SweepPoint> out;
  out.reserve(widths_ns.size());
  for (const double w : widths_ns) {
    out.push_back(SweepPoint{w, estimate_alpha(chronogram, make_window(w, chronogram))});
  }
  return out;
}

std::vector<double> sweep_widths(double w_min, double w_max, double step) {
  if (!(w_min > 0.0) || !(step > 0.0) || w_max < w_min) {
    throw UsageError("sweep needs 0 < w_min <= w_max and a positive step");
  }
  const auto n = static_cast<std::size_t>(std::floor((w_max - w_min) / step + 1e-9)) + 1;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = w_min + static_cast<double>(i) * step;
  return out;
}

std::string format_sweep(std::span<const SweepPoint> points) {
  std::ostringstream out;
  out.precision(17);
  out << "w_ns,alpha,u_alpha_k1\n";
  for (const auto& p : points) out << p.width_ns << ',' << p.estimate.alpha << ',' << p.estimate.u_alpha_k1 << '\n';
  return out.str();
}

void write_sweep_csv(std::span<const SweepPoint> points, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << format_sweep(points);
  if (!out) throw IoError("write failure on " + path.string());
}

}  // namespace g2kit
