#include "g2kit/simulator.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <random>
#include <sstream>

#include "g2kit/error.hpp"
#include "wide_int.hpp"
#include "g2kit/parallel.hpp"

namespace g2kit {

namespace {

/// Distribution transforms are written out so that a given seed produces the
/// same stream with every standard library (std:: distributions are
/// implementation-defined; mt19937_64 is not).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform on (0, 1).
  double uniform() { return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1p-53; }

  double exponential(double mean) { return -mean * std::log(uniform()); }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double r = std::sqrt(-2.0 * std::log(uniform()));
    const double phi = 2.0 * M_PI * uniform();
    spare_ = r * std::sin(phi);
    has_spare_ = true;
    return r * std::cos(phi);
  }

  /// Failures before the first success of a Bernoulli(q) sequence.
  std::uint64_t geometric(double q) {
    if (q >= 1.0) return 0;
    const double g = std::floor(std::log(uniform()) / std::log1p(-q));
    return g >= 1.8e19 ? UINT64_MAX / 2 : static_cast<std::uint64_t>(g);
  }

  /// Poisson(lambda) conditioned on being >= 1, by inversion.
  unsigned zero_truncated_poisson(double lambda) {
    const double p0 = std::exp(-lambda);
    double u = p0 + uniform() * (1.0 - p0);
    unsigned k = 0;
    double pk = p0;
    double cdf = p0;
    while (cdf < u && k < 1000) {
      ++k;
      pk *= lambda / k;
      cdf += pk;
    }
    return std::max(k, 1u);
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

class EventSink {
 public:
  EventSink(const SimConfig& config, Period period, Ticks duration)
      : period_(period), duration_(duration), ticks_per_ns_(1000.0 / config.resolution_ps) {}

  /// Photon of pulse `pulse` arriving `delay_ns` after the pulse edge.
  void photon(std::vector<Ticks>& out, std::uint64_t pulse, double delay_ns) const {
    const auto scaled = static_cast<detail::u128>(pulse) * period_.num;
    const auto base = static_cast<std::int64_t>(scaled / period_.den);
    const double frac = static_cast<double>(static_cast<std::uint64_t>(scaled % period_.den)) /
                        static_cast<double>(period_.den);
    const double offset = std::floor(frac + delay_ns * ticks_per_ns_);
    const double t = static_cast<double>(base) + offset;
    if (t < 0.0 || t >= static_cast<double>(duration_)) return;
    out.push_back(static_cast<Ticks>(base + static_cast<std::int64_t>(offset)));
  }

  void at(std::vector<Ticks>& out, double ticks) const {
    if (ticks < 0.0 || ticks >= static_cast<double>(duration_)) return;
    out.push_back(static_cast<Ticks>(ticks));
  }

  double ticks_per_ns() const { return ticks_per_ns_; }

 private:
  Period period_;
  Ticks duration_;
  double ticks_per_ns_;
};

void sort_unique(std::vector<Ticks>& v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
}

void apply_dead_time(std::vector<Ticks>& v, Ticks dead) {
  if (dead == 0 || v.empty()) return;
  std::size_t kept = 1;
  Ticks last = v.front();
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] - last >= dead) {
      v[kept++] = v[i];
      last = v[i];
    }
  }
  v.resize(kept);
}

double pair_cdf(double x, double lifetime, double sigma) {
  // CDF of Laplace(lifetime) convolved with N(0, sigma^2).
  if (sigma <= 1e-12 * lifetime) {
    return x < 0.0 ? 0.5 * std::exp(x / lifetime) : 1.0 - 0.5 * std::exp(-x / lifetime);
  }
  auto phi = [](double z) { return 0.5 * std::erfc(-z / M_SQRT2); };
  const double shift = sigma * sigma / (2.0 * lifetime * lifetime);
  double f = phi(x / sigma);
  const double lo = phi(x / sigma - sigma / lifetime);
  if (lo > 0.0) f -= 0.5 * std::exp(-x / lifetime + shift + std::log(lo));
  const double hi = phi(-x / sigma - sigma / lifetime);
  if (hi > 0.0) f += 0.5 * std::exp(x / lifetime + shift + std::log(hi));
  return f;
}

double get_double(const KeyValues& kv, const std::string& key, double fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  double value = 0.0;
  const auto& s = it->second;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw ConfigError("'" + key + "' is not a number: " + s);
  return value;
}

template <typename T>
T get_uint(const KeyValues& kv, const std::string& key, T fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  T value{};
  const auto& s = it->second;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError("'" + key + "' is not a non-negative integer: " + s);
  }
  return value;
}

std::string exact(double v) {
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), ptr);
}

}  // namespace

void SimConfig::validate() const {
  auto probability = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string(name) + " must lie in [0, 1]");
  };
  if (excitation_rate_hz == 0) throw ConfigError("excitation_rate_hz must be positive");
  if (!(acquisition_time_s > 0.0)) throw ConfigError("acquisition_time_s must be positive");
  if (acquisition_time_ms() == 0) throw ConfigError("acquisition_time_s must be at least 1 ms");
  if (!(lifetime_ns > 0.0)) throw ConfigError("lifetime_ns must be positive");
  probability(p_emit, "p_emit");
  if (n_emitters < 1) throw ConfigError("n_emitters must be >= 1");
  if (!(poisson_mean >= 0.0)) throw ConfigError("poisson_mean must be non-negative");
  if (!(background_rate_hz >= 0.0)) throw ConfigError("background_rate_hz must be non-negative");
  probability(eta_a, "eta_a");
  probability(eta_b, "eta_b");
  if (eta_a + eta_b > 1.0) throw ConfigError("eta_a + eta_b must not exceed 1");
  if (!(dead_time_ns >= 0.0)) throw ConfigError("dead_time_ns must be non-negative");
  if (!(jitter_sigma_ns >= 0.0)) throw ConfigError("jitter_sigma_ns must be non-negative");
  if (resolution_ps == 0) throw ConfigError("resolution_ps must be positive");
  if (backflash) {
    probability(backflash->probability, "backflash_probability");
    if (!(backflash->spread_ns >= 0.0)) throw ConfigError("backflash_spread_ns must be non-negative");
  }
  if (excitation_rate_hz > UINT32_MAX || acquisition_time_ms() > UINT32_MAX) {
    throw ConfigError("excitation rate or acquisition time exceeds the TTAG field range");
  }
}

std::uint64_t SimConfig::acquisition_time_ms() const {
  return static_cast<std::uint64_t>(std::llround(acquisition_time_s * 1000.0));
}

RunMetadata SimConfig::metadata(std::uint32_t run_index) const {
  RunMetadata m;
  m.excitation_rate_hz = excitation_rate_hz;
  m.acquisition_time_ms = acquisition_time_ms();
  m.run_index = run_index;
  m.sync_mode = SyncMode::nominal_clock;
  return m;
}

SimConfig SimConfig::nv_reference() {
  SimConfig c;
  c.excitation_rate_hz = 2'500'000;
  c.acquisition_time_s = 500.0;
  c.lifetime_ns = 15.34;
  c.n_emitters = 1;
  c.eta_a = 0.0044;
  c.eta_b = 0.0044;
  c.p_emit = 0.807;
  c.poisson_mean = 0.02728;
  c.background_rate_hz = 3241.0;
  c.dead_time_ns = 0.0;
  c.jitter_sigma_ns = 0.35;
  c.resolution_ps = 1;
  c.seed = 1;
  return c;
}

SimConfig sim_config_from(const KeyValues& kv, SimConfig c) {
  static const std::vector<std::string> known{
      "excitation_rate_hz", "acquisition_time_s", "lifetime_ns",     "p_emit",
      "n_emitters",         "poisson_mean",       "background_rate_hz", "eta_a",
      "eta_b",              "dead_time_ns",       "jitter_sigma_ns",  "backflash",
      "backflash_probability", "backflash_delay_ns", "backflash_spread_ns", "resolution_ps",
      "seed"};
  for (const auto& [key, value] : kv) {
    if (std::find(known.begin(), known.end(), key) == known.end()) throw ConfigError("unknown config key '" + key + "'");
  }
  c.excitation_rate_hz = get_uint<std::uint64_t>(kv, "excitation_rate_hz", c.excitation_rate_hz);
  c.acquisition_time_s = get_double(kv, "acquisition_time_s", c.acquisition_time_s);
  c.lifetime_ns = get_double(kv, "lifetime_ns", c.lifetime_ns);
  c.p_emit = get_double(kv, "p_emit", c.p_emit);
  c.n_emitters = get_uint<unsigned>(kv, "n_emitters", c.n_emitters);
  c.poisson_mean = get_double(kv, "poisson_mean", c.poisson_mean);
  c.background_rate_hz = get_double(kv, "background_rate_hz", c.background_rate_hz);
  c.eta_a = get_double(kv, "eta_a", c.eta_a);
  c.eta_b = get_double(kv, "eta_b", c.eta_b);
  c.dead_time_ns = get_double(kv, "dead_time_ns", c.dead_time_ns);
  c.jitter_sigma_ns = get_double(kv, "jitter_sigma_ns", c.jitter_sigma_ns);
  c.resolution_ps = get_uint<std::uint32_t>(kv, "resolution_ps", c.resolution_ps);
  c.seed = get_uint<std::uint64_t>(kv, "seed", c.seed);

  bool backflash = c.backflash.has_value();
  if (auto it = kv.find("backflash"); it != kv.end()) {
    if (it->second == "on" || it->second == "true" || it->second == "1") {
      backflash = true;
    } else if (it->second == "off" || it->second == "false" || it->second == "0") {
      backflash = false;
    } else {
      throw ConfigError("'backflash' must be on/off");
    }
  }
  if (backflash) {
    BackflashConfig b = c.backflash.value_or(BackflashConfig{});
    b.probability = get_double(kv, "backflash_probability", b.probability);
    b.delay_ns = get_double(kv, "backflash_delay_ns", b.delay_ns);
    b.spread_ns = get_double(kv, "backflash_spread_ns", b.spread_ns);
    c.backflash = b;
  } else {
    c.backflash.reset();
  }
  c.validate();
  return c;
}

KeyValues to_key_values(const SimConfig& c) {
  KeyValues kv{
      {"excitation_rate_hz", std::to_string(c.excitation_rate_hz)},
      {"acquisition_time_s", exact(c.acquisition_time_s)},
      {"lifetime_ns", exact(c.lifetime_ns)},
      {"p_emit", exact(c.p_emit)},
      {"n_emitters", std::to_string(c.n_emitters)},
      {"poisson_mean", exact(c.poisson_mean)},
      {"background_rate_hz", exact(c.background_rate_hz)},
      {"eta_a", exact(c.eta_a)},
      {"eta_b", exact(c.eta_b)},
      {"dead_time_ns", exact(c.dead_time_ns)},
      {"jitter_sigma_ns", exact(c.jitter_sigma_ns)},
      {"backflash", c.backflash ? "on" : "off"},
      {"resolution_ps", std::to_string(c.resolution_ps)},
      {"seed", std::to_string(c.seed)},
  };
  if (c.backflash) {
    kv["backflash_probability"] = exact(c.backflash->probability);
    kv["backflash_delay_ns"] = exact(c.backflash->delay_ns);
    kv["backflash_spread_ns"] = exact(c.backflash->spread_ns);
  }
  return kv;
}

std::uint64_t run_seed(std::uint64_t seed, std::uint32_t run_index) {
  return splitmix64(seed ^ splitmix64(run_index));
}

TimeTagStream simulate_run(const SimConfig& config, std::uint32_t run_index) {
  config.validate();
  Rng rng(config.seed);
  const RunMetadata meta = config.metadata(run_index);
  const Period period = excitation_period(config.excitation_rate_hz, config.resolution_ps);
  const std::uint64_t pulses = meta.pulse_count();
  const auto duration = static_cast<Ticks>(static_cast<detail::u128>(meta.acquisition_time_ms) *
                                           1'000'000'000u / config.resolution_ps);
  const EventSink sink(config, period, duration);

  std::array<std::vector<Ticks>, 2> channel;
  const double eta = config.eta_a + config.eta_b;
  const double to_a = eta > 0.0 ? config.eta_a / eta : 0.0;
  auto detect = [&](std::uint64_t pulse) {
    const int ch = rng.uniform() < to_a ? 0 : 1;
    double delay = rng.exponential(config.lifetime_ns);
    if (config.jitter_sigma_ns > 0.0) delay += config.jitter_sigma_ns * rng.normal();
    sink.photon(channel[ch], pulse, delay);
  };

  // Emitters: one photon at most per pulse, detected with probability p_emit * eta.
  const double q_emitter = config.p_emit * eta;
  if (q_emitter > 0.0) {
    for (unsigned e = 0; e < config.n_emitters; ++e) {
      for (std::uint64_t pulse = rng.geometric(q_emitter); pulse < pulses; pulse += 1 + rng.geometric(q_emitter)) {
        detect(pulse);
      }
    }
  }

  // Pulse-synchronous Poissonian light: detected photon number ~ Poisson(mu * eta).
  const double lambda = config.poisson_mean * eta;
  if (lambda > 0.0) {
    const double q = -std::expm1(-lambda);
    for (std::uint64_t pulse = rng.geometric(q); pulse < pulses; pulse += 1 + rng.geometric(q)) {
      const unsigned k = rng.zero_truncated_poisson(lambda);
      for (unsigned i = 0; i < k; ++i) detect(pulse);
    }
  }

  if (config.background_rate_hz > 0.0) {
    const double mean_gap = 1e12 / config.resolution_ps / config.background_rate_hz;
    for (auto& ch : channel) {
      for (double t = rng.exponential(mean_gap); t < static_cast<double>(duration); t += rng.exponential(mean_gap)) {
        sink.at(ch, std::floor(t));
      }
    }
  }

  const auto dead = static_cast<Ticks>(std::llround(config.dead_time_ns * sink.ticks_per_ns()));
  for (auto& ch : channel) {
    sort_unique(ch);
    apply_dead_time(ch, dead);
  }

  if (config.backflash && config.backflash->probability > 0.0) {
    const BackflashConfig& bf = *config.backflash;
    std::array<std::vector<Ticks>, 2> injected;
    for (int src = 0; src < 2; ++src) {
      for (const Ticks t : channel[src]) {
        if (rng.uniform() >= bf.probability) continue;
        const double delay_ns = bf.delay_ns + bf.spread_ns * rng.normal();
        sink.at(injected[1 - src], std::floor(static_cast<double>(t) + delay_ns * sink.ticks_per_ns()));
      }
    }
    for (int ch = 0; ch < 2; ++ch) {
      channel[ch].insert(channel[ch].end(), injected[ch].begin(), injected[ch].end());
      sort_unique(channel[ch]);
    }
  }

  std::vector<EventRecord> events;
  events.reserve(channel[0].size() + channel[1].size());
  std::size_t i = 0;
  std::size_t j = 0;
  while (i < channel[0].size() || j < channel[1].size()) {
    if (j == channel[1].size() || (i < channel[0].size() && channel[0][i] <= channel[1][j])) {
      events.push_back({0, channel[0][i++]});
    } else {
      events.push_back({1, channel[1][j++]});
    }
  }
  return TimeTagStream(config.resolution_ps, TimeTagStream::detector_channels(2), std::move(events), duration, meta);
}

std::vector<TimeTagStream> simulate_runs(const SimConfig& config, std::uint32_t runs, unsigned threads) {
  std::vector<TimeTagStream> out(runs);
  parallel_for(runs, threads, [&](std::size_t i) {
    SimConfig c = config;
    c.seed = run_seed(config.seed, static_cast<std::uint32_t>(i));
    out[i] = simulate_run(c, static_cast<std::uint32_t>(i));
  });
  return out;
}

double expected_singles_rate(const SimConfig& config, int detector) {
  const double eta = detector == 0 ? config.eta_a : config.eta_b;
  const double photons_per_pulse = config.n_emitters * config.p_emit + config.poisson_mean;
  const double rate = static_cast<double>(config.excitation_rate_hz) * photons_per_pulse * eta + config.background_rate_hz;
  return rate * (1.0 - rate * config.dead_time_ns * 1e-9);
}

Expectations analytic_expectations(const SimConfig& config, const WindowSpec& window) {
  config.validate();
  if (config.dead_time_ns > 0.0) throw ConfigError("closed-form expectations require zero dead time");
  if (config.backflash && config.backflash->probability > 0.0) {
    throw ConfigError("closed-form expectations require backflash to be off");
  }

  const double rate = static_cast<double>(config.excitation_rate_hz);
  const double pulses = static_cast<double>(config.metadata().pulse_count());
  const double t_acq = static_cast<double>(config.acquisition_time_ms()) * 1e-3;
  const double n = config.n_emitters;
  const double p = config.p_emit;
  const double mu = config.poisson_mean;
  const double mean_a = config.eta_a * (n * p + mu);
  const double mean_b = config.eta_b * (n * p + mu);
  // E[n_A n_B] within one pulse: distinct emitters, emitter x Poisson, Poisson x Poisson.
  const double same_pulse = config.eta_a * config.eta_b * (n * (n - 1.0) * p * p + 2.0 * n * p * mu + mu * mu);
  const double period_ns = 1e9 / rate;
  const double sigma = config.jitter_sigma_ns * M_SQRT2;
  const double ns_per_tick = window.resolution_ps * 1e-3;

  auto expected = [&](const DelayInterval& iv) {
    const double lo = static_cast<double>(iv.lo_ticks) * ns_per_tick;
    const double hi = static_cast<double>(iv.hi_ticks) * ns_per_tick;
    const double reach = std::max(std::abs(lo), std::abs(hi)) + 60.0 * config.lifetime_ns + 20.0 * sigma;
    const auto k_max = static_cast<long>(std::ceil(reach / period_ns));
    double peaks = 0.0;
    for (long k = -k_max; k <= k_max; ++k) {
      const double centre = static_cast<double>(k) * period_ns;
      const double mass = pair_cdf(hi - centre, config.lifetime_ns, sigma) - pair_cdf(lo - centre, config.lifetime_ns, sigma);
      peaks += (k == 0 ? same_pulse : mean_a * mean_b) * mass;
    }
    const double width_s = (hi - lo) * 1e-9;
    const double flat = (mean_a * rate * config.background_rate_hz + mean_b * rate * config.background_rate_hz +
                         config.background_rate_hz * config.background_rate_hz) *
                        t_acq * width_s;
    return pulses * peaks + flat;
  };

  const WindowIntervals iv = window_intervals(window);
  Expectations e;
  e.n_c = expected(iv.true_coincidence);
  e.n_xi = expected(iv.accidental);
  e.n_bg = expected(iv.background);
  e.alpha = (e.n_c - e.n_bg) / (e.n_xi - e.n_bg);
  e.singles_a_hz = expected_singles_rate(config, 0);
  e.singles_b_hz = expected_singles_rate(config, 1);
  return e;
}

}  // namespace g2kit
