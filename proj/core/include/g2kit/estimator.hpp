#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "g2kit/correlator.hpp"

namespace g2kit {

/// Three equal-width integration windows on a chronogram's bin grid:
/// background around -T/2, true coincidences around 0 and accidental
/// coincidences around +T.
struct WindowSpec {
  double width_ns = 16.0;
  std::uint64_t k_w = 1;  // bins per window
  std::uint64_t bin_width_ticks = 1;
  std::int64_t grid_origin_ticks = 0;
  Period period;
  std::uint32_t resolution_ps = 1;

  double effective_width_ns() const {
    return static_cast<double>(k_w * bin_width_ticks) * resolution_ps * 1e-3;
  }

  friend bool operator==(const WindowSpec&, const WindowSpec&) = default;
};

/// Half-open delay interval in ticks.
struct DelayInterval {
  std::int64_t lo_ticks = 0;
  std::int64_t hi_ticks = 0;

  friend bool operator==(const DelayInterval&, const DelayInterval&) = default;
};

struct WindowIntervals {
  DelayInterval background;
  DelayInterval true_coincidence;
  DelayInterval accidental;
};

/// k_w = round(w / bin width), at least 1. Throws UsageError for w <= 0.
WindowSpec make_window(double width_ns, const Chronogram& chronogram);

/// Bin-aligned intervals. Each window holds k_w bins centred on its target
/// delay (the bin holding the centre wins ties for odd k_w). Throws
/// GeometryError when the windows overlap.
WindowIntervals window_intervals(const WindowSpec& window);

struct CountTriple {
  std::uint64_t n_c = 0;   // true-coincidence window
  std::uint64_t n_xi = 0;  // accidental window
  std::uint64_t n_bg = 0;  // background window
  std::string provenance;

  friend bool operator==(const CountTriple&, const CountTriple&) = default;
};

/// Sums the three windows. Throws RangeError when a window leaves the
/// chronogram and GeometryError when the bin grids disagree.
CountTriple count_windows(const Chronogram& chronogram, const WindowSpec& window);

struct AlphaEstimate {
  double alpha = 0.0;
  CountTriple counts;
  std::optional<WindowSpec> window;
  std::uint64_t n_pulses = 0;
  /// k=1 counting uncertainty: the three windows cover disjoint bins, so
  /// their Poisson counts are independent.
  double u_alpha_k1 = 0.0;
  /// N_C < N_bg; alpha is negative and reported as-is.
  bool below_background = false;
};

/// alpha = (N_C - N_bg) / (N_xi - N_bg). Throws DegenerateError when
/// N_xi <= N_bg.
AlphaEstimate compute_alpha(const CountTriple& counts);

/// count_windows followed by compute_alpha.
AlphaEstimate estimate_alpha(const Chronogram& chronogram, const WindowSpec& window);

struct ClickProbabilities {
  double p_c = 0.0;
  double p_a = 0.0;
  double p_b = 0.0;
  double p_c_bg = 0.0;
  double p_a_bg = 0.0;
  double p_b_bg = 0.0;
};

/// (P_C - P_Cbg) / ((P_A - P_Abg)(P_B - P_Bbg)); with zero backgrounds this is
/// P_C / (P_A P_B). Throws DegenerateError for a non-positive denominator.
double alpha_from_probabilities(const ClickProbabilities& p);

inline constexpr double kLowFluxLimit = 0.1;

struct FluxCheck {
  bool ok = true;
  double max_probability = 0.0;
  std::string message;
};

/// Warns when max(P_A, P_B) >= 0.1, where alpha stops approximating g2(0).
FluxCheck low_flux_check(double p_a, double p_b);

struct SecondaryPeak {
  double delay_ns = 0.0;  // excess-weighted centre
  double excess_counts = 0.0;
  std::size_t first_bin = 0;
  std::size_t last_bin = 0;
};

struct WindowValidation {
  bool model_available = false;
  /// Peaks inside the true-coincidence window; these bias alpha upwards.
  std::vector<SecondaryPeak> flagged;
  /// Peaks found elsewhere in the chronogram (reported, not flagged).
  std::vector<SecondaryPeak> elsewhere;
  std::string note;

  bool clean() const { return flagged.empty(); }
};

inline constexpr double kBackflashSigmas = 5.0;

/// Fits the pulse-train model with iterative masking of outlying bins, then
/// reports contiguous bin groups exceeding model + 5 sqrt(model).
WindowValidation validate_window(const Chronogram& chronogram, const WindowSpec& window);

struct SweepPoint {
  double width_ns = 0.0;
  AlphaEstimate estimate;
};

/// One estimate per width; per-width errors propagate.
std::vector<SweepPoint> window_sweep(const Chronogram& chronogram, std::span<const double> widths_ns);

/// Widths w_min, w_min + step, ... up to w_max inclusive (within 1e-9).
std::vector<double> sweep_widths(double w_min, double w_max, double step);

/// CSV with header w_ns,alpha,u_alpha_k1.
std::string format_sweep(std::span<const SweepPoint> points);
void write_sweep_csv(std::span<const SweepPoint> points, const std::filesystem::path& path);

}  // namespace g2kit
