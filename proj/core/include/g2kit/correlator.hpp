#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "g2kit/timetag.hpp"

namespace g2kit {

struct ChannelPair {
  std::uint8_t a = 0;
  std::uint8_t b = 1;

  friend bool operator==(const ChannelPair&, const ChannelPair&) = default;
};

/// Half-open delay interval [min_delay, max_delay) split into equal bins.
struct BinGeometry {
  std::uint64_t bin_width_ticks = 1;
  std::int64_t min_delay_ticks = 0;
  std::int64_t max_delay_ticks = 0;

  /// Throws GeometryError unless width > 0, max > min and the range divides evenly.
  void validate() const;
  std::size_t bin_count() const;

  friend bool operator==(const BinGeometry&, const BinGeometry&) = default;
};

/// 1 ns bins (rounded to whole ticks) over +-1.5 excitation periods, widened
/// to a whole number of bins.
BinGeometry default_geometry(std::uint32_t resolution_ps, std::uint64_t excitation_rate_hz);

/// Histogram of delays t_b - t_a between clicks on two channels.
struct Chronogram {
  BinGeometry geometry;
  std::vector<std::uint64_t> bins;
  std::uint64_t n_pulses = 0;
  std::uint32_t resolution_ps = 1;
  std::uint64_t excitation_rate_hz = 0;
  ChannelPair channels;

  /// All-zero chronogram with the given geometry.
  static Chronogram zeros(const BinGeometry& geometry, std::uint32_t resolution_ps,
                          std::uint64_t excitation_rate_hz, ChannelPair channels);

  std::size_t size() const noexcept { return bins.size(); }
  std::int64_t bin_lower_ticks(std::size_t k) const;
  /// Bin centre in nanoseconds.
  double delay_ns(std::size_t k) const;
  double bin_width_ns() const;
  double ticks_to_ns(double ticks) const { return ticks * resolution_ps * 1e-3; }
  std::uint64_t total() const;
  Period period() const { return excitation_period(excitation_rate_hz, resolution_ps); }

  friend bool operator==(const Chronogram&, const Chronogram&) = default;
};

/// Two-pointer correlation of two sorted timestamp lists into `bins`
/// (which must already have geometry.bin_count() entries). Adds to the bins,
/// so chunks of `a` can be accumulated into one histogram.
void accumulate_delays(std::span<const Ticks> a, std::span<const Ticks> b,
                       const BinGeometry& geometry, std::span<std::uint64_t> bins);

/// bins[k] counts pairs with t_b - t_a in [min + k*w, min + (k+1)*w).
/// Runs in O(n_a + n_b + pairs in range). `threads` > 1 splits channel a
/// into chunks that are correlated independently and summed.
Chronogram cross_correlate(const TimeTagStream& stream, std::uint8_t ch_a, std::uint8_t ch_b,
                           const BinGeometry& geometry, unsigned threads = 1);

/// Element-wise sum; n_pulses are added. Throws GeometryError naming the
/// first field that differs.
Chronogram merge(std::span<const Chronogram> chronograms);

/// Correlates each run (in parallel) and merges the results.
Chronogram correlate_runs(std::span<const TimeTagStream> runs, std::uint8_t ch_a, std::uint8_t ch_b,
                          const BinGeometry& geometry, unsigned threads);

/// CSV with columns delay_ns,counts (bin centres); geometry is echoed in '#'
/// header lines so that import_chronogram restores the exact histogram.
void export_chronogram(const Chronogram& chronogram, const std::filesystem::path& path);
std::string format_chronogram(const Chronogram& chronogram);
Chronogram import_chronogram(const std::filesystem::path& path);
Chronogram parse_chronogram(const std::string& text);

}  // namespace g2kit
