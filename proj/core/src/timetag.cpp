#include "g2kit/timetag.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>

#include "g2kit/error.hpp"
#include "wide_int.hpp"

namespace g2kit {

namespace {

constexpr std::uint8_t kNoSyncChannel = 0xFF;
constexpr std::array<char, 4> kMagic{'T', 'T', 'A', 'G'};

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<std::uint8_t>(static_cast<std::uint64_t>(value) >> (8 * i)));
  }
}

template <typename T>
T get_le(std::span<const std::uint8_t> bytes, std::size_t offset) {
  std::uint64_t value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    value |= static_cast<std::uint64_t>(bytes[offset + i]) << (8 * i);
  }
  return static_cast<T>(value);
}

Ticks acquisition_ticks(const RunMetadata& metadata, std::uint32_t resolution_ps) {
  const auto ps = static_cast<detail::u128>(metadata.acquisition_time_ms) * 1'000'000'000u;
  return static_cast<Ticks>(ps / resolution_ps);
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename T>
bool parse_uint(std::string_view s, T& out) {
  s = trim(s);
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

}  // namespace

std::string ChannelInfo::label() const {
  return role == ChannelRole::sync ? std::string("sync") : "ch" + std::to_string(id);
}

std::uint64_t RunMetadata::pulse_count() const {
  const auto product = static_cast<detail::u128>(excitation_rate_hz) * acquisition_time_ms;
  return static_cast<std::uint64_t>((product + 500) / 1000);
}

Period excitation_period(std::uint64_t excitation_rate_hz, std::uint32_t resolution_ps) {
  if (excitation_rate_hz == 0 || resolution_ps == 0) {
    throw UsageError("excitation rate and resolution must be positive");
  }
  std::uint64_t num = 1'000'000'000'000ULL;  // ps per second
  std::uint64_t rate = excitation_rate_hz;
  std::uint64_t res = resolution_ps;
  std::uint64_t g = std::gcd(num, rate);
  num /= g;
  rate /= g;
  g = std::gcd(num, res);
  num /= g;
  res /= g;
  const auto den = static_cast<detail::u128>(rate) * res;
  if (den > UINT64_MAX) throw UsageError("excitation period is not representable");
  return Period{num, static_cast<std::uint64_t>(den)};
}

TimeTagStream::TimeTagStream(std::uint32_t resolution_ps, std::vector<ChannelInfo> channels,
                             std::vector<EventRecord> events, Ticks duration_ticks,
                             RunMetadata metadata)
    : resolution_ps_(resolution_ps),
      channels_(std::move(channels)),
      events_(std::move(events)),
      duration_ticks_(duration_ticks),
      metadata_(metadata) {
  if (resolution_ps_ == 0) throw UsageError("resolution_ps must be positive");
  if (channels_.size() > 255) throw UsageError("at most 255 channels are supported");

  std::size_t sync_channels = 0;
  for (std::size_t i = 0; i < channels_.size(); ++i) {
    if (channels_[i].id != i) {
      throw UsageError("channel ids must be 0..n-1 in order");
    }
    if (channels_[i].role == ChannelRole::sync) ++sync_channels;
  }
  if (sync_channels > 1) throw UsageError("at most one sync channel is allowed");
  if ((sync_channels == 1) != (metadata_.sync_mode == SyncMode::recorded_sync_channel)) {
    throw UsageError("sync mode does not match the channel roles");
  }

  std::vector<Ticks> last(channels_.size(), 0);
  std::vector<bool> seen(channels_.size(), false);
  for (std::size_t i = 0; i < events_.size(); ++i) {
    const EventRecord& e = events_[i];
    if (e.channel >= channels_.size()) {
      throw IntegrityError("event on undeclared channel " + std::to_string(e.channel), i);
    }
    if (e.timestamp >= duration_ticks_) {
      throw IntegrityError("timestamp beyond stream duration", i);
    }
    if (i > 0 && e.timestamp < events_[i - 1].timestamp) {
      throw IntegrityError("timestamps are not sorted", i);
    }
    if (seen[e.channel] && e.timestamp <= last[e.channel]) {
      throw IntegrityError("duplicate timestamp on channel " + std::to_string(e.channel), i);
    }
    seen[e.channel] = true;
    last[e.channel] = e.timestamp;
  }
}

std::vector<ChannelInfo> TimeTagStream::detector_channels(std::size_t count) {
  std::vector<ChannelInfo> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back({static_cast<std::uint8_t>(i), ChannelRole::detector});
  }
  return out;
}

std::vector<Ticks> TimeTagStream::timestamps(std::uint8_t channel) const {
  std::vector<Ticks> out;
  out.reserve(count(channel));
  for (const auto& e : events_) {
    if (e.channel == channel) out.push_back(e.timestamp);
  }
  return out;
}

std::size_t TimeTagStream::count(std::uint8_t channel) const {
  return static_cast<std::size_t>(std::count_if(
      events_.begin(), events_.end(), [channel](const EventRecord& e) { return e.channel == channel; }));
}

std::vector<std::uint8_t> encode_ttag(const TimeTagStream& stream) {
  const auto& meta = stream.metadata();
  if (meta.excitation_rate_hz > UINT32_MAX || meta.acquisition_time_ms > UINT32_MAX) {
    throw FormatError("excitation rate or acquisition time exceeds the TTAG u32 fields");
  }
  std::uint8_t sync_id = kNoSyncChannel;
  for (const auto& ch : stream.channels()) {
    if (ch.role == ChannelRole::sync) sync_id = ch.id;
  }

  std::vector<std::uint8_t> out;
  out.reserve(kTtagHeaderSize + kTtagRecordSize * stream.events().size());
  out.insert(out.end(), kMagic.begin(), kMagic.end());
  put_le<std::uint16_t>(out, kTtagVersion);
  put_le<std::uint32_t>(out, stream.resolution_ps());
  put_le<std::uint8_t>(out, static_cast<std::uint8_t>(stream.channels().size()));
  put_le<std::uint8_t>(out, sync_id);
  put_le<std::uint32_t>(out, meta.run_index);
  put_le<std::uint64_t>(out, stream.duration_ticks());
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(meta.excitation_rate_hz));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(meta.acquisition_time_ms));
  for (const auto& e : stream.events()) {
    out.push_back(e.channel);
    put_le<std::uint64_t>(out, e.timestamp);
  }
  return out;
}

TimeTagStream decode_ttag(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || !std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
    throw FormatError("missing TTAG magic");
  }
  if (bytes.size() < kTtagHeaderSize) throw IoError("truncated TTAG header");
  const auto version = get_le<std::uint16_t>(bytes, 4);
  if (version != kTtagVersion) {
    throw FormatError("unsupported TTAG version " + std::to_string(version));
  }
  const auto resolution = get_le<std::uint32_t>(bytes, 6);
  const auto channel_count = get_le<std::uint8_t>(bytes, 10);
  const auto sync_id = get_le<std::uint8_t>(bytes, 11);
  if (resolution == 0) throw FormatError("TTAG resolution is zero");
  if (sync_id != kNoSyncChannel && sync_id >= channel_count) {
    throw FormatError("TTAG sync channel id out of range");
  }

  RunMetadata meta;
  meta.run_index = get_le<std::uint32_t>(bytes, 12);
  const auto duration = get_le<std::uint64_t>(bytes, 16);
  meta.excitation_rate_hz = get_le<std::uint32_t>(bytes, 24);
  meta.acquisition_time_ms = get_le<std::uint32_t>(bytes, 28);
  meta.sync_mode = sync_id == kNoSyncChannel ? SyncMode::nominal_clock : SyncMode::recorded_sync_channel;

  std::vector<ChannelInfo> channels = TimeTagStream::detector_channels(channel_count);
  if (sync_id != kNoSyncChannel) channels[sync_id].role = ChannelRole::sync;

  const std::size_t payload = bytes.size() - kTtagHeaderSize;
  if (payload % kTtagRecordSize != 0) {
    throw IoError("truncated TTAG record at byte " +
                  std::to_string(kTtagHeaderSize + payload / kTtagRecordSize * kTtagRecordSize));
  }
  std::vector<EventRecord> events(payload / kTtagRecordSize);
  for (std::size_t i = 0; i < events.size(); ++i) {
    const std::size_t off = kTtagHeaderSize + i * kTtagRecordSize;
    events[i].channel = bytes[off];
    events[i].timestamp = get_le<std::uint64_t>(bytes, off + 1);
  }

  try {
    return TimeTagStream(resolution, std::move(channels), std::move(events), duration, meta);
  } catch (const IntegrityError& e) {
    const std::uint64_t offset = kTtagHeaderSize + e.position() * kTtagRecordSize;
    throw IntegrityError(std::string(e.what()) + " at byte offset " + std::to_string(offset), offset);
  } catch (const UsageError& e) {
    throw FormatError(std::string("invalid TTAG header: ") + e.what());
  }
}

TimeTagStream read_ttag(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failure on " + path.string());
  return decode_ttag(bytes);
}

void write_ttag(const TimeTagStream& stream, const std::filesystem::path& path) {
  const auto bytes = encode_ttag(stream);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failure on " + path.string());
}

bool is_ttag_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::array<char, 4> head{};
  in.read(head.data(), head.size());
  return in.gcount() == 4 && head == kMagic;
}

CsvImport parse_csv(const std::string& text, std::uint32_t resolution_ps, const RunMetadata& metadata) {
  std::vector<EventRecord> events;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  bool first_data_row = true;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view row = trim(line);
    if (row.empty() || row.front() == '#') continue;
    const auto comma = row.find(',');
    EventRecord e;
    unsigned channel = 0;
    const bool ok = comma != std::string_view::npos && parse_uint(row.substr(0, comma), channel) &&
                    channel <= 255 && parse_uint(row.substr(comma + 1), e.timestamp);
    if (!ok) {
      if (first_data_row) {
        first_data_row = false;  // header row
        continue;
      }
      throw ParseError("expected 'channel,timestamp_ticks'", line_no);
    }
    first_data_row = false;
    e.channel = static_cast<std::uint8_t>(channel);
    events.push_back(e);
  }

  CsvImport result;
  result.sorted = !std::is_sorted(events.begin(), events.end(),
                                  [](const EventRecord& a, const EventRecord& b) { return a.timestamp < b.timestamp; });
  if (result.sorted) {
    std::stable_sort(events.begin(), events.end(),
                     [](const EventRecord& a, const EventRecord& b) { return a.timestamp < b.timestamp; });
  }

  std::size_t channel_count = 0;
  Ticks last = 0;
  for (const auto& e : events) {
    channel_count = std::max<std::size_t>(channel_count, e.channel + 1u);
    last = std::max(last, e.timestamp);
  }
  Ticks duration = acquisition_ticks(metadata, resolution_ps);
  if (!events.empty()) duration = std::max(duration, last + 1);

  RunMetadata meta = metadata;
  meta.sync_mode = SyncMode::nominal_clock;
  result.stream = TimeTagStream(resolution_ps, TimeTagStream::detector_channels(channel_count),
                                std::move(events), duration, meta);
  return result;
}

CsvImport import_csv(const std::filesystem::path& path, std::uint32_t resolution_ps, const RunMetadata& metadata) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_csv(buffer.str(), resolution_ps, metadata);
}

void export_csv(const TimeTagStream& stream, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "# resolution_ps=" << stream.resolution_ps() << '\n'
      << "# duration_ticks=" << stream.duration_ticks() << '\n'
      << "channel,timestamp_ticks\n";
  for (const auto& e : stream.events()) {
    out << static_cast<unsigned>(e.channel) << ',' << e.timestamp << '\n';
  }
  if (!out) throw IoError("write failure on " + path.string());
}

PulseIndex pulse_index(Ticks timestamp, const RunMetadata& metadata, std::uint32_t resolution_ps) {
  const Period period = excitation_period(metadata.excitation_rate_hz, resolution_ps);
  // pulse = floor(t / (num/den)) = floor(t * den / num)
  const auto scaled = static_cast<detail::u128>(timestamp) * period.den;
  const auto pulse = scaled / period.num;
  const auto offset_scaled = scaled - pulse * period.num;  // in units of 1/den ticks
  return PulseIndex{static_cast<std::uint64_t>(pulse),
                    static_cast<std::uint64_t>(offset_scaled / period.den)};
}

}  // namespace g2kit
