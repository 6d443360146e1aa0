#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace g2kit {

using Ticks = std::uint64_t;

enum class ChannelRole : std::uint8_t { detector, sync };

struct ChannelInfo {
  std::uint8_t id = 0;
  ChannelRole role = ChannelRole::detector;

  /// "ch<id>" for detectors, "sync" for the sync channel.
  std::string label() const;

  friend bool operator==(const ChannelInfo&, const ChannelInfo&) = default;
};

struct EventRecord {
  std::uint8_t channel = 0;
  Ticks timestamp = 0;

  friend bool operator==(const EventRecord&, const EventRecord&) = default;
};

enum class SyncMode : std::uint8_t { nominal_clock, recorded_sync_channel };

/// Excitation period expressed as an exact fraction of ticks.
struct Period {
  std::uint64_t num = 1;  // ticks * den
  std::uint64_t den = 1;

  double ticks() const { return static_cast<double>(num) / static_cast<double>(den); }
  friend bool operator==(const Period&, const Period&) = default;
};

struct RunMetadata {
  std::uint64_t excitation_rate_hz = 2'500'000;
  std::uint64_t acquisition_time_ms = 0;
  std::uint32_t run_index = 0;
  SyncMode sync_mode = SyncMode::nominal_clock;

  double acquisition_time_s() const { return static_cast<double>(acquisition_time_ms) * 1e-3; }

  /// R * t_acq rounded to the nearest integer; the normalisation denominator.
  std::uint64_t pulse_count() const;

  friend bool operator==(const RunMetadata&, const RunMetadata&) = default;
};

/// Exact period 1/(R * resolution) in ticks, reduced to lowest terms.
Period excitation_period(std::uint64_t excitation_rate_hz, std::uint32_t resolution_ps);

/// Validated, immutable record of one acquisition.
///
/// Events are sorted by timestamp (ties keep insertion order) and strictly
/// increasing within each channel. Every timestamp is below duration_ticks.
class TimeTagStream {
 public:
  TimeTagStream() = default;
  /// Throws IntegrityError (position = event index) or UsageError.
  TimeTagStream(std::uint32_t resolution_ps, std::vector<ChannelInfo> channels,
                std::vector<EventRecord> events, Ticks duration_ticks, RunMetadata metadata);

  /// Builds the default two-detector layout (channels 0 and 1).
  static std::vector<ChannelInfo> detector_channels(std::size_t count);

  std::uint32_t resolution_ps() const noexcept { return resolution_ps_; }
  const std::vector<ChannelInfo>& channels() const noexcept { return channels_; }
  std::span<const EventRecord> events() const noexcept { return events_; }
  Ticks duration_ticks() const noexcept { return duration_ticks_; }
  const RunMetadata& metadata() const noexcept { return metadata_; }

  bool has_channel(std::uint8_t id) const noexcept { return id < channels_.size(); }
  /// Sorted timestamps of one channel.
  std::vector<Ticks> timestamps(std::uint8_t channel) const;
  std::size_t count(std::uint8_t channel) const;

  friend bool operator==(const TimeTagStream&, const TimeTagStream&) = default;

 private:
  std::uint32_t resolution_ps_ = 1;
  std::vector<ChannelInfo> channels_;
  std::vector<EventRecord> events_;
  Ticks duration_ticks_ = 0;
  RunMetadata metadata_;
};

// TTAG binary layout (little-endian, 32-byte header):
//   0  char[4]  "TTAG"
//   4  u16      version (1)
//   6  u32      resolution_ps
//  10  u8       channel_count
//  11  u8       sync channel id, 0xFF when the excitation clock is nominal
//  12  u32      run index
//  16  u64      duration_ticks
//  24  u32      excitation rate in Hz
//  28  u32      acquisition time in ms
// followed by 9-byte records (u8 channel, u64 timestamp).
inline constexpr std::size_t kTtagHeaderSize = 32;
inline constexpr std::size_t kTtagRecordSize = 9;
inline constexpr std::uint16_t kTtagVersion = 1;

TimeTagStream read_ttag(const std::filesystem::path& path);
void write_ttag(const TimeTagStream& stream, const std::filesystem::path& path);

/// Serialises into memory; write_ttag writes exactly these bytes.
std::vector<std::uint8_t> encode_ttag(const TimeTagStream& stream);
TimeTagStream decode_ttag(std::span<const std::uint8_t> bytes);

/// True when the file starts with the TTAG magic.
bool is_ttag_file(const std::filesystem::path& path);

struct CsvImport {
  TimeTagStream stream;
  bool sorted = false;  // rows had to be reordered
};

/// Reads "channel,timestamp_ticks" rows. '#' lines are comments and a
/// non-numeric first row is treated as a header. The duration is the larger of
/// the acquisition time in ticks and the last timestamp + 1.
CsvImport import_csv(const std::filesystem::path& path, std::uint32_t resolution_ps,
                     const RunMetadata& metadata);
CsvImport parse_csv(const std::string& text, std::uint32_t resolution_ps,
                    const RunMetadata& metadata);
void export_csv(const TimeTagStream& stream, const std::filesystem::path& path);

struct PulseIndex {
  std::uint64_t pulse = 0;
  std::uint64_t offset_ticks = 0;

  friend bool operator==(const PulseIndex&, const PulseIndex&) = default;
};

/// Excitation pulse containing `timestamp` under a nominal clock starting at
/// tick 0. Integer arithmetic only, so there is no drift over 64-bit ranges.
PulseIndex pulse_index(Ticks timestamp, const RunMetadata& metadata, std::uint32_t resolution_ps);

}  // namespace g2kit
