#include "g2kit/correlator.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "g2kit/error.hpp"
#include "wide_int.hpp"
#include "g2kit/parallel.hpp"

namespace g2kit {

namespace {

constexpr Ticks kMaxSignedTick = static_cast<Ticks>(std::numeric_limits<std::int64_t>::max() / 2);

template <typename T>
T header_number(const std::string& key, const std::string& text) {
  T value{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw FormatError("chronogram CSV header '" + key + "' is not a number");
  }
  return value;
}

void check_same(bool same, const char* field) {
  if (!same) throw GeometryError(std::string("chronogram geometry mismatch: ") + field, field);
}

}  // namespace

void BinGeometry::validate() const {
  if (bin_width_ticks == 0) throw GeometryError("bin width must be positive", "bin_width_ticks");
  if (max_delay_ticks <= min_delay_ticks) throw GeometryError("empty delay range", "range");
  const auto span = static_cast<std::uint64_t>(max_delay_ticks - min_delay_ticks);
  if (span % bin_width_ticks != 0) {
    throw GeometryError("delay range is not a whole number of bins", "range");
  }
}

std::size_t BinGeometry::bin_count() const {
  return static_cast<std::size_t>(static_cast<std::uint64_t>(max_delay_ticks - min_delay_ticks) / bin_width_ticks);
}

BinGeometry default_geometry(std::uint32_t resolution_ps, std::uint64_t excitation_rate_hz) {
  const std::uint64_t width = std::max<std::uint64_t>(1, (1000 + resolution_ps / 2) / resolution_ps);
  const Period period = excitation_period(excitation_rate_hz, resolution_ps);
  // ceil(1.5 T / width) bins on each side
  const auto half_span = (3 * static_cast<detail::u128>(period.num) + 2 * period.den - 1) / (2 * period.den);
  const auto bins = static_cast<std::int64_t>((half_span + width - 1) / width);
  const auto extent = bins * static_cast<std::int64_t>(width);
  return BinGeometry{width, -extent, extent};
}

Chronogram Chronogram::zeros(const BinGeometry& geometry, std::uint32_t resolution_ps,
                             std::uint64_t excitation_rate_hz, ChannelPair channels) {
  geometry.validate();
  Chronogram out;
  out.geometry = geometry;
  out.bins.assign(geometry.bin_count(), 0);
  out.resolution_ps = resolution_ps;
  out.excitation_rate_hz = excitation_rate_hz;
  out.channels = channels;
  return out;
}

std::int64_t Chronogram::bin_lower_ticks(std::size_t k) const {
  return geometry.min_delay_ticks + static_cast<std::int64_t>(k * geometry.bin_width_ticks);
}

double Chronogram::delay_ns(std::size_t k) const {
  return ticks_to_ns(static_cast<double>(bin_lower_ticks(k)) + 0.5 * static_cast<double>(geometry.bin_width_ticks));
}

double Chronogram::bin_width_ns() const { return ticks_to_ns(static_cast<double>(geometry.bin_width_ticks)); }

std::uint64_t Chronogram::total() const { return std::accumulate(bins.begin(), bins.end(), std::uint64_t{0}); }

void accumulate_delays(std::span<const Ticks> a, std::span<const Ticks> b, const BinGeometry& geometry,
                       std::span<std::uint64_t> bins) {
  const std::int64_t lo = geometry.min_delay_ticks;
  const std::int64_t hi = geometry.max_delay_ticks;
  const auto width = static_cast<std::int64_t>(geometry.bin_width_ticks);
  std::size_t first = 0;
  for (const Ticks ta_raw : a) {
    const auto ta = static_cast<std::int64_t>(ta_raw);
    const std::int64_t window_start = ta + lo;
    const std::int64_t window_end = ta + hi;
    while (first < b.size() && static_cast<std::int64_t>(b[first]) < window_start) ++first;
    for (std::size_t j = first; j < b.size(); ++j) {
      const auto tb = static_cast<std::int64_t>(b[j]);
      if (tb >= window_end) break;
      ++bins[static_cast<std::size_t>((tb - window_start) / width)];
    }
  }
}

Chronogram cross_correlate(const TimeTagStream& stream, std::uint8_t ch_a, std::uint8_t ch_b,
                           const BinGeometry& geometry, unsigned threads) {
  if (ch_a == ch_b) throw UsageError("cross_correlate needs two distinct channels");
  if (!stream.has_channel(ch_a) || !stream.has_channel(ch_b)) {
    throw UsageError("channel not present in stream");
  }
  if (stream.duration_ticks() > kMaxSignedTick) throw RangeError("stream duration exceeds signed tick range");

  Chronogram out = Chronogram::zeros(geometry, stream.resolution_ps(), stream.metadata().excitation_rate_hz,
                                     ChannelPair{ch_a, ch_b});
  out.n_pulses = stream.metadata().pulse_count();

  const std::vector<Ticks> a = stream.timestamps(ch_a);
  const std::vector<Ticks> b = stream.timestamps(ch_b);

  const std::size_t chunks = threads <= 1 ? 1 : std::min<std::size_t>(threads * 4, std::max<std::size_t>(1, a.size() / 4096));
  if (chunks <= 1) {
    accumulate_delays(a, b, geometry, out.bins);
    return out;
  }

  std::vector<std::vector<std::uint64_t>> partial(chunks, std::vector<std::uint64_t>(out.bins.size(), 0));
  const std::size_t step = (a.size() + chunks - 1) / chunks;
  parallel_for(chunks, threads, [&](std::size_t c) {
    const std::size_t begin = std::min(a.size(), c * step);
    const std::size_t end = std::min(a.size(), begin + step);
    if (begin == end) return;
    // start b at the first element that can pair with a[begin]
    const auto start = static_cast<std::int64_t>(a[begin]) + geometry.min_delay_ticks;
    const auto b_begin = start <= 0 ? b.begin() : std::lower_bound(b.begin(), b.end(), static_cast<Ticks>(start));
    accumulate_delays(std::span(a).subspan(begin, end - begin),
                      std::span(b).subspan(static_cast<std::size_t>(b_begin - b.begin())), geometry, partial[c]);
  });
  for (const auto& p : partial) {
    for (std::size_t k = 0; k < p.size(); ++k) out.bins[k] += p[k];
  }
  return out;
}

Chronogram merge(std::span<const Chronogram> chronograms) {
  if (chronograms.empty()) throw UsageError("merge needs at least one chronogram");
  Chronogram out = chronograms.front();
  for (const auto& c : chronograms.subspan(1)) {
    check_same(c.geometry.bin_width_ticks == out.geometry.bin_width_ticks, "bin_width_ticks");
    check_same(c.geometry.min_delay_ticks == out.geometry.min_delay_ticks &&
                   c.geometry.max_delay_ticks == out.geometry.max_delay_ticks,
               "range");
    check_same(c.resolution_ps == out.resolution_ps, "resolution_ps");
    check_same(c.channels == out.channels, "channel_pair");
    check_same(c.excitation_rate_hz == out.excitation_rate_hz, "excitation_rate_hz");
    check_same(c.bins.size() == out.bins.size(), "bins");
    for (std::size_t k = 0; k < c.bins.size(); ++k) out.bins[k] += c.bins[k];
    out.n_pulses += c.n_pulses;
  }
  return out;
}

Chronogram correlate_runs(std::span<const TimeTagStream> runs, std::uint8_t ch_a, std::uint8_t ch_b,
                          const BinGeometry& geometry, unsigned threads) {
  if (runs.empty()) throw UsageError("correlate_runs needs at least one run");
  std::vector<Chronogram> per_run(runs.size());
  parallel_for(runs.size(), threads, [&](std::size_t i) {
    per_run[i] = cross_correlate(runs[i], ch_a, ch_b, geometry, 1);
  });
  return merge(per_run);
}

std::string format_chronogram(const Chronogram& c) {
  std::ostringstream out;
  out << "# bin_width_ticks=" << c.geometry.bin_width_ticks << '\n'
      << "# min_delay_ticks=" << c.geometry.min_delay_ticks << '\n'
      << "# max_delay_ticks=" << c.geometry.max_delay_ticks << '\n'
      << "# resolution_ps=" << c.resolution_ps << '\n'
      << "# excitation_rate_hz=" << c.excitation_rate_hz << '\n'
      << "# n_pulses=" << c.n_pulses << '\n'
      << "# channel_a=" << static_cast<unsigned>(c.channels.a) << '\n'
      << "# channel_b=" << static_cast<unsigned>(c.channels.b) << '\n'
      << "delay_ns,counts\n";
  std::array<char, 64> buf{};
  for (std::size_t k = 0; k < c.bins.size(); ++k) {
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), c.delay_ns(k));
    out.write(buf.data(), ptr - buf.data());
    out << ',' << c.bins[k] << '\n';
  }
  return out.str();
}

void export_chronogram(const Chronogram& chronogram, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << format_chronogram(chronogram);
  if (!out) throw IoError("write failure on " + path.string());
}

Chronogram parse_chronogram(const std::string& text) {
  std::map<std::string, std::string> header;
  std::vector<std::uint64_t> counts;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  bool column_header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.front() == '#') {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      auto key = line.substr(1, eq - 1);
      key.erase(0, key.find_first_not_of(' '));
      header[key] = line.substr(eq + 1);
      continue;
    }
    if (!column_header_seen) {
      if (line != "delay_ns,counts") throw ParseError("expected 'delay_ns,counts' column header", line_no);
      column_header_seen = true;
      continue;
    }
    const auto comma = line.find(',');
    std::uint64_t value = 0;
    const char* begin = comma == std::string::npos ? nullptr : line.data() + comma + 1;
    if (!begin) throw ParseError("expected 'delay_ns,counts' row", line_no);
    auto [ptr, ec] = std::from_chars(begin, line.data() + line.size(), value);
    if (ec != std::errc() || ptr != line.data() + line.size()) throw ParseError("bad count", line_no);
    counts.push_back(value);
  }

  auto field = [&](const char* key) -> std::string {
    auto it = header.find(key);
    if (it == header.end()) throw FormatError(std::string("chronogram CSV lacks '# ") + key + "=' header");
    return it->second;
  };
  Chronogram c;
  c.geometry.bin_width_ticks = header_number<std::uint64_t>("bin_width_ticks", field("bin_width_ticks"));
  c.geometry.min_delay_ticks = header_number<std::int64_t>("min_delay_ticks", field("min_delay_ticks"));
  c.geometry.max_delay_ticks = header_number<std::int64_t>("max_delay_ticks", field("max_delay_ticks"));
  c.geometry.validate();
  c.resolution_ps = header_number<std::uint32_t>("resolution_ps", field("resolution_ps"));
  c.excitation_rate_hz = header_number<std::uint64_t>("excitation_rate_hz", field("excitation_rate_hz"));
  c.n_pulses = header_number<std::uint64_t>("n_pulses", field("n_pulses"));
  c.channels.a = header_number<std::uint8_t>("channel_a", field("channel_a"));
  c.channels.b = header_number<std::uint8_t>("channel_b", field("channel_b"));
  if (counts.size() != c.geometry.bin_count()) {
    throw FormatError("chronogram CSV has " + std::to_string(counts.size()) + " rows, geometry needs " +
                      std::to_string(c.geometry.bin_count()));
  }
  c.bins = std::move(counts);
  return c;
}

Chronogram import_chronogram(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_chronogram(buffer.str());
}

}  // namespace g2kit
