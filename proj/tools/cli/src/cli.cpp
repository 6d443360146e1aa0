#include "g2kit/cli.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "g2kit/g2kit.hpp"

#ifndef G2KIT_VERSION
#define G2KIT_VERSION "0.0.0"
#endif

namespace g2kit::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::string file_checksum(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[static_cast<std::size_t>(i)]);
      h *= 0x100000001b3ULL;
    }
  }
  std::array<char, 17> hex{};
  std::snprintf(hex.data(), hex.size(), "%016llx", static_cast<unsigned long long>(h));
  return hex.data();
}

fs::path manifest_path(const fs::path& out) { return fs::path(out.string() + ".manifest.json"); }

namespace {

struct Options {
  std::string config;
  bool strict = false;
  std::string out;

  // simulate
  std::optional<std::uint64_t> seed;
  unsigned runs = 1;
  std::vector<std::string> set;

  // inputs and histogram geometry
  std::vector<std::string> in;
  double bin_ns = 1.0;
  double range_ns = 0.0;  // 0: 1.5 excitation periods
  unsigned ch_a = 0;
  unsigned ch_b = 1;
  std::uint32_t resolution_ps = 1;
  std::uint64_t rate_hz = 2'500'000;
  std::uint64_t acq_ms = 0;

  // windows
  double w = 16.0;
  double w_min = 4.0;
  double w_max = 40.0;
  double step = 1.0;

  // budget
  double k = 2.0;
  std::string label;

  // lifetime
  std::vector<std::string> group;

  // compare
  std::string budget_a;
  std::string budget_b;

  // replay
  std::string manifest;
};

struct Session {
  std::ostream& out;
  std::ostream& err;
  const Options& opt;
  json params = json::object();
  std::vector<fs::path> inputs;
  std::vector<fs::path> outputs;
  std::vector<std::string> warnings;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw IoError("write failure on " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

fs::path sibling(const fs::path& out, const std::string& suffix, const std::string& ext) {
  fs::path p = out;
  p.replace_filename(out.stem().string() + suffix + ext);
  return p;
}

std::uint8_t channel_id(unsigned value, const char* flag) {
  if (value > 254) throw UsageError(std::string(flag) + " must be a channel id below 255");
  return static_cast<std::uint8_t>(value);
}

enum class InputKind { ttag, chronogram, timetag_csv, estimate_json };

InputKind classify(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("input not found: " + path.string());
  if (is_ttag_file(path)) return InputKind::ttag;
  if (path.extension() == ".json") return InputKind::estimate_json;
  std::ifstream f(path);
  std::string first;
  std::getline(f, first);
  return first.rfind("# bin_width_ticks=", 0) == 0 ? InputKind::chronogram : InputKind::timetag_csv;
}

TimeTagStream load_stream(Session& s, const fs::path& path, InputKind kind) {
  if (kind == InputKind::ttag) return read_ttag(path);
  RunMetadata meta;
  meta.excitation_rate_hz = s.opt.rate_hz;
  meta.acquisition_time_ms = s.opt.acq_ms;
  CsvImport imported = import_csv(path, s.opt.resolution_ps, meta);
  if (imported.sorted) s.warnings.push_back(path.string() + ": rows were reordered by timestamp");
  return std::move(imported.stream);
}

BinGeometry geometry_for(const Options& o, std::uint32_t resolution_ps, std::uint64_t rate_hz) {
  if (!(o.bin_ns > 0.0)) throw UsageError("--bin must be positive");
  if (o.range_ns < 0.0) throw UsageError("--range must be non-negative");
  const auto width = static_cast<std::int64_t>(std::llround(o.bin_ns * 1000.0 / resolution_ps));
  if (width < 1) throw UsageError("--bin is finer than the timing resolution");
  double range_ticks = 0.0;
  if (o.range_ns > 0.0) {
    range_ticks = o.range_ns * 1000.0 / resolution_ps;
  } else {
    if (rate_hz == 0) throw UsageError("excitation rate is zero; pass --range");
    range_ticks = 1.5 * excitation_period(rate_hz, resolution_ps).ticks();
  }
  const auto half_bins = static_cast<std::int64_t>(std::ceil(range_ticks / static_cast<double>(width) - 1e-9));
  BinGeometry g;
  g.bin_width_ticks = static_cast<std::uint64_t>(width);
  g.min_delay_ticks = -half_bins * width;
  g.max_delay_ticks = half_bins * width;
  g.validate();
  return g;
}

void record_geometry(Session& s) {
  s.params["bin_ns"] = s.opt.bin_ns;
  s.params["range_ns"] = s.opt.range_ns;
  s.params["ch_a"] = s.opt.ch_a;
  s.params["ch_b"] = s.opt.ch_b;
  s.params["resolution_ps"] = s.opt.resolution_ps;
  s.params["rate_hz"] = s.opt.rate_hz;
  s.params["acq_ms"] = s.opt.acq_ms;
}

struct LoadedChronogram {
  Chronogram chronogram;
  std::optional<std::array<std::size_t, 2>> singles;  // known for time-tag inputs
};

LoadedChronogram chronogram_for(Session& s, const fs::path& path, unsigned threads) {
  const InputKind kind = classify(path);
  LoadedChronogram loaded;
  if (kind == InputKind::chronogram) {
    loaded.chronogram = import_chronogram(path);
    return loaded;
  }
  if (kind == InputKind::estimate_json) throw UsageError(path.string() + " is not a time-tag or chronogram file");
  const TimeTagStream stream = load_stream(s, path, kind);
  const auto a = channel_id(s.opt.ch_a, "--ch-a");
  const auto b = channel_id(s.opt.ch_b, "--ch-b");
  const BinGeometry g = geometry_for(s.opt, stream.resolution_ps(), stream.metadata().excitation_rate_hz);
  loaded.chronogram = cross_correlate(stream, a, b, g, threads);
  loaded.singles = std::array<std::size_t, 2>{stream.count(a), stream.count(b)};
  return loaded;
}

json peak_json(const SecondaryPeak& p) {
  return {{"delay_ns", p.delay_ns}, {"excess_counts", p.excess_counts}, {"first_bin", p.first_bin},
          {"last_bin", p.last_bin}};
}

std::string fmt(double v, int digits = 6) {
  std::ostringstream os;
  os << std::setprecision(digits) << v;
  return os.str();
}

// ---- commands ----------------------------------------------------------

void cmd_simulate(Session& s) {
  SimConfig config = SimConfig::nv_reference();
  if (!s.opt.config.empty()) {
    config = sim_config_from(read_key_values(s.opt.config), config);
    s.inputs.emplace_back(s.opt.config);
  }
  if (!s.opt.set.empty()) {
    std::string text;
    for (const auto& kv : s.opt.set) text += kv + "\n";
    config = sim_config_from(parse_key_values(text), config);
  }
  if (s.opt.seed) config.seed = *s.opt.seed;
  config.validate();
  if (s.opt.runs == 0) throw UsageError("--runs must be at least 1");

  json cfg = json::object();
  for (const auto& [key, value] : to_key_values(config)) cfg[key] = value;
  s.params["config"] = cfg;
  s.params["runs"] = s.opt.runs;

  const auto runs = simulate_runs(config, s.opt.runs, default_thread_count());
  const fs::path out = s.opt.out;
  for (std::uint32_t i = 0; i < runs.size(); ++i) {
    fs::path path = out;
    if (runs.size() > 1) {
      std::array<char, 16> idx{};
      std::snprintf(idx.data(), idx.size(), "_%03u", i);
      path = sibling(out, idx.data(), out.extension().string());
    }
    write_ttag(runs[i], path);
    s.outputs.push_back(path);
    s.out << path.string() << ": " << runs[i].events().size() << " events (A " << runs[i].count(0) << ", B "
          << runs[i].count(1) << ")\n";
  }
}

void cmd_histogram(Session& s) {
  record_geometry(s);
  const auto a = channel_id(s.opt.ch_a, "--ch-a");
  const auto b = channel_id(s.opt.ch_b, "--ch-b");
  std::vector<TimeTagStream> streams;
  for (const auto& in : s.opt.in) {
    const InputKind kind = classify(in);
    if (kind != InputKind::ttag && kind != InputKind::timetag_csv) {
      throw UsageError(in + " is not a time-tag file");
    }
    streams.push_back(load_stream(s, in, kind));
    s.inputs.emplace_back(in);
  }
  const BinGeometry g =
      geometry_for(s.opt, streams.front().resolution_ps(), streams.front().metadata().excitation_rate_hz);
  const Chronogram c = streams.size() == 1 ? cross_correlate(streams.front(), a, b, g, default_thread_count())
                                           : correlate_runs(streams, a, b, g, default_thread_count());
  export_chronogram(c, s.opt.out);
  s.outputs.emplace_back(s.opt.out);
  s.out << s.opt.out << ": " << c.size() << " bins, " << c.total() << " pairs\n";
}

void cmd_estimate(Session& s) {
  record_geometry(s);
  s.params["w_ns"] = s.opt.w;
  if (s.opt.in.size() != 1) throw UsageError("estimate takes exactly one --in");
  const fs::path in = s.opt.in.front();
  LoadedChronogram loaded = chronogram_for(s, in, default_thread_count());
  s.inputs.push_back(in);
  const Chronogram& c = loaded.chronogram;

  const WindowSpec window = make_window(s.opt.w, c);
  AlphaEstimate e = estimate_alpha(c, window);
  e.counts.provenance = in.string();
  const WindowIntervals iv = window_intervals(window);
  const WindowValidation validation = validate_window(c, window);

  json j;
  j["input"] = in.string();
  j["counts"] = {{"N_C", e.counts.n_c}, {"N_xi", e.counts.n_xi}, {"N_bg", e.counts.n_bg}};
  j["alpha"] = e.alpha;
  j["u_alpha_k1"] = e.u_alpha_k1;
  j["n_pulses"] = e.n_pulses;
  j["below_background"] = e.below_background;
  auto interval = [&](const DelayInterval& d) {
    return json::array({c.ticks_to_ns(static_cast<double>(d.lo_ticks)), c.ticks_to_ns(static_cast<double>(d.hi_ticks))});
  };
  j["window"] = {{"width_ns", window.width_ns},
                 {"k_w", window.k_w},
                 {"effective_width_ns", window.effective_width_ns()},
                 {"true_ns", interval(iv.true_coincidence)},
                 {"accidental_ns", interval(iv.accidental)},
                 {"background_ns", interval(iv.background)}};
  json flagged = json::array();
  json elsewhere = json::array();
  for (const auto& p : validation.flagged) flagged.push_back(peak_json(p));
  for (const auto& p : validation.elsewhere) elsewhere.push_back(peak_json(p));
  j["validation"] = {{"model_available", validation.model_available},
                     {"clean", validation.clean()},
                     {"flagged", flagged},
                     {"elsewhere", elsewhere},
                     {"note", validation.note}};
  if (loaded.singles && c.n_pulses > 0) {
    const double pulses = static_cast<double>(c.n_pulses);
    const double p_a = static_cast<double>((*loaded.singles)[0]) / pulses;
    const double p_b = static_cast<double>((*loaded.singles)[1]) / pulses;
    const FluxCheck flux = low_flux_check(p_a, p_b);
    j["low_flux"] = {{"checked", true}, {"ok", flux.ok}, {"p_a", p_a}, {"p_b", p_b}, {"message", flux.message}};
    if (!flux.ok) s.warnings.push_back(flux.message);
  } else {
    j["low_flux"] = {{"checked", false}};
  }

  for (const auto& p : validation.flagged) {
    s.warnings.push_back("secondary peak inside the true-coincidence window at " + fmt(p.delay_ns, 4) + " ns");
  }
  if (e.below_background) s.warnings.push_back("N_C is below N_bg; alpha is negative");

  write_json(s.opt.out, j);
  s.outputs.emplace_back(s.opt.out);
  s.out << "alpha = " << fmt(e.alpha) << " (u = " << fmt(e.u_alpha_k1, 3) << ", k=1) N_C=" << e.counts.n_c
        << " N_xi=" << e.counts.n_xi << " N_bg=" << e.counts.n_bg << "\n";
}

void cmd_sweep(Session& s) {
  record_geometry(s);
  s.params["w_min_ns"] = s.opt.w_min;
  s.params["w_max_ns"] = s.opt.w_max;
  s.params["step_ns"] = s.opt.step;
  if (s.opt.in.size() != 1) throw UsageError("sweep takes exactly one --in");
  const fs::path in = s.opt.in.front();
  const LoadedChronogram loaded = chronogram_for(s, in, default_thread_count());
  s.inputs.push_back(in);
  const auto widths = sweep_widths(s.opt.w_min, s.opt.w_max, s.opt.step);
  const auto points = window_sweep(loaded.chronogram, widths);
  write_sweep_csv(points, s.opt.out);
  s.outputs.emplace_back(s.opt.out);
  s.out << s.opt.out << ": " << points.size() << " widths\n";
}

CountTriple counts_from_estimate_json(const fs::path& path) {
  const json j = read_json(path);
  try {
    const auto& c = j.at("counts");
    CountTriple t{c.at("N_C").get<std::uint64_t>(), c.at("N_xi").get<std::uint64_t>(),
                  c.at("N_bg").get<std::uint64_t>(), path.string()};
    return t;
  } catch (const json::exception& e) {
    throw FormatError(path.string() + " is not an estimate report: " + e.what());
  }
}

void cmd_budget(Session& s) {
  record_geometry(s);
  s.params["w_ns"] = s.opt.w;
  s.params["k"] = s.opt.k;
  s.params["label"] = s.opt.label;
  if (s.opt.in.size() < 2) throw UsageError("budget needs at least two --in runs");

  RunSeries series;
  series.runs.resize(s.opt.in.size());
  std::vector<std::vector<std::string>> run_warnings(s.opt.in.size());
  parallel_for(s.opt.in.size(), default_thread_count(), [&](std::size_t i) {
    const fs::path in = s.opt.in[i];
    if (classify(in) == InputKind::estimate_json) {
      series.runs[i] = counts_from_estimate_json(in);
      return;
    }
    Session local{s.out, s.err, s.opt, {}, {}, {}, {}};
    const LoadedChronogram loaded = chronogram_for(local, in, 1);
    series.runs[i] = count_windows(loaded.chronogram, make_window(s.opt.w, loaded.chronogram));
    series.runs[i].provenance = in.string();
    run_warnings[i] = std::move(local.warnings);
  });
  for (std::size_t i = 0; i < s.opt.in.size(); ++i) {
    s.inputs.emplace_back(s.opt.in[i]);
    for (auto& w : run_warnings[i]) s.warnings.push_back(std::move(w));
  }

  AlphaBudget budget = budget_report(series, s.opt.k);
  budget.label = s.opt.label.empty() ? fs::path(s.opt.out).stem().string() : s.opt.label;
  const std::string table = render_budget_table(budget);
  json j = budget_to_json(budget);
  json runs = json::array();
  for (const auto& t : series.runs) runs.push_back({{"input", t.provenance}, {"N_C", t.n_c}, {"N_xi", t.n_xi}, {"N_bg", t.n_bg}});
  j["runs"] = runs;

  const fs::path out = s.opt.out;
  write_json(out, j);
  const fs::path table_path = sibling(out, "", ".txt");
  write_text(table_path, table);
  const fs::path runs_path = sibling(out, "_runs", ".csv");
  write_text(runs_path, format_run_statistics(run_statistics(series)));
  s.outputs = {out, table_path, runs_path};
  s.out << table;
}

void cmd_lifetime(Session& s) {
  record_geometry(s);
  if (s.opt.in.empty()) throw UsageError("lifetime needs at least one --in");
  if (!s.opt.group.empty() && s.opt.group.size() != s.opt.in.size()) {
    throw UsageError("--group must be given once per --in");
  }
  s.params["group"] = s.opt.group;

  const std::size_t n = s.opt.in.size();
  std::vector<Chronogram> chronograms(n);
  std::vector<FitResult> fits(n);
  std::vector<std::vector<std::string>> run_warnings(n);
  parallel_for(n, default_thread_count(), [&](std::size_t i) {
    Session local{s.out, s.err, s.opt, {}, {}, {}, {}};
    chronograms[i] = chronogram_for(local, s.opt.in[i], 1).chronogram;
    fits[i] = fit_lifetime(chronograms[i]);
    run_warnings[i] = std::move(local.warnings);
  });

  const fs::path out = s.opt.out;
  json fits_json = json::array();
  std::vector<fs::path> residuals;
  for (std::size_t i = 0; i < n; ++i) {
    s.inputs.emplace_back(s.opt.in[i]);
    for (auto& w : run_warnings[i]) s.warnings.push_back(std::move(w));
    json f = fit_to_json(fits[i]);
    f["input"] = s.opt.in[i];
    if (!s.opt.group.empty()) f["group"] = s.opt.group[i];
    fits_json.push_back(f);
    const fs::path res = n == 1 ? sibling(out, "_residuals", ".csv")
                                : sibling(out, "_residuals_" + std::to_string(i), ".csv");
    write_text(res, format_residuals(chronograms[i], fits[i]));
    residuals.push_back(res);
    s.out << s.opt.in[i] << ": d = " << fmt(fits[i].model.d) << " +- " << fmt(fits[i].stddev(3), 3)
          << " ns, c = " << fmt(fits[i].model.c, 4) << ", chi2_red = " << fmt(fits[i].chi2_reduced, 4) << "\n";
  }

  json j;
  j["fits"] = fits_json;
  if (n >= 2) {
    const LifetimeSummary sum = aggregate_lifetime(fits);
    j["summary"] = {{"mean_ns", sum.mean}, {"standard_error_ns", sum.standard_error}, {"count", sum.count}};
    s.out << "mean d = " << fmt(sum.mean) << " ns, standard error " << fmt(sum.standard_error, 3) << " ns\n";
  }
  if (!s.opt.group.empty()) {
    json groups = json::array();
    for (const auto& g : aggregate_by_group(s.opt.group, fits)) {
      groups.push_back({{"group", g.group},
                        {"mean_ns", g.summary.mean},
                        {"standard_error_ns", g.summary.standard_error},
                        {"count", g.summary.count}});
    }
    j["groups"] = groups;
  }
  write_json(out, j);
  s.outputs.push_back(out);
  for (auto& r : residuals) s.outputs.push_back(r);
}

void cmd_compare(Session& s) {
  const fs::path a = s.opt.budget_a;
  const fs::path b = s.opt.budget_b;
  s.inputs = {a, b};
  const AlphaBudget ba = budget_from_json(read_json(a));
  const AlphaBudget bb = budget_from_json(read_json(b));
  const ComparisonResult r = compare(ba, bb);
  if (!r.compatible) {
    s.warnings.push_back("measurements are not compatible (E = " + fmt(r.normalized_error, 3) + ")");
  }
  write_json(s.opt.out, comparison_to_json(r));
  s.outputs.emplace_back(s.opt.out);
  s.out << r.labels[0] << " vs " << r.labels[1] << ": E = " << fmt(r.normalized_error, 3)
        << (r.compatible ? " (compatible)" : " (not compatible)") << "\n";
}

// ---- plumbing -----------------------------------------------------------

void add_common(CLI::App* sub, Options& o, bool with_config = true) {
  if (with_config) sub->add_option("--config", o.config, "key=value file providing defaults for flags");
  sub->add_flag("--strict", o.strict, "treat validation warnings as errors (exit 1)");
  sub->add_option("--out", o.out, "output file")->required();
}

void add_geometry(CLI::App* sub, Options& o) {
  sub->add_option("--bin", o.bin_ns, "bin width in ns")->capture_default_str();
  sub->add_option("--range", o.range_ns, "delay range +-ns (0: 1.5 periods)")->capture_default_str();
  sub->add_option("--ch-a", o.ch_a, "start channel")->capture_default_str();
  sub->add_option("--ch-b", o.ch_b, "stop channel")->capture_default_str();
  sub->add_option("--resolution-ps", o.resolution_ps, "tick size of CSV time-tag input")->capture_default_str();
  sub->add_option("--rate", o.rate_hz, "excitation rate of CSV time-tag input (Hz)")->capture_default_str();
  sub->add_option("--acq-ms", o.acq_ms, "acquisition time of CSV time-tag input (ms)")->capture_default_str();
}

void build(CLI::App& app, Options& o) {
  app.require_subcommand(1);
  app.set_version_flag("--version", G2KIT_VERSION);

  auto* sim = app.add_subcommand("simulate", "generate time-tag runs (TTAG)");
  add_common(sim, o);
  sim->add_option("--seed", o.seed, "64-bit seed (overrides the config)");
  sim->add_option("--runs", o.runs, "number of runs; files get a _NNN suffix when > 1")->capture_default_str();
  sim->add_option("--set", o.set, "override one config key (key=value)");

  auto* hist = app.add_subcommand("histogram", "cross-correlate two channels into a chronogram CSV");
  add_common(hist, o);
  hist->add_option("--in", o.in, "TTAG or CSV time-tag file(s); several are merged")->required();
  add_geometry(hist, o);

  auto* est = app.add_subcommand("estimate", "alpha from one chronogram or time-tag file");
  add_common(est, o);
  est->add_option("--in", o.in, "chronogram CSV, TTAG or CSV time-tag file")->required();
  est->add_option("--w", o.w, "window width in ns")->capture_default_str();
  add_geometry(est, o);

  auto* sweep = app.add_subcommand("sweep", "alpha as a function of the window width");
  add_common(sweep, o);
  sweep->add_option("--in", o.in, "chronogram CSV, TTAG or CSV time-tag file")->required();
  sweep->add_option("--w-min", o.w_min, "smallest width in ns")->capture_default_str();
  sweep->add_option("--w-max", o.w_max, "largest width in ns")->capture_default_str();
  sweep->add_option("--step", o.step, "width step in ns")->capture_default_str();
  add_geometry(sweep, o);

  auto* budget = app.add_subcommand("budget", "uncertainty budget over repeated runs");
  add_common(budget, o);
  budget->add_option("--in", o.in, "per-run inputs (time-tag, chronogram or estimate JSON)")->required();
  budget->add_option("--w", o.w, "window width in ns")->capture_default_str();
  budget->add_option("--k", o.k, "coverage factor")->capture_default_str();
  budget->add_option("--label", o.label, "label stored in the budget");
  add_geometry(budget, o);

  auto* life = app.add_subcommand("lifetime", "fit the pulse-train lifetime model");
  add_common(life, o);
  life->add_option("--in", o.in, "chronogram CSV, TTAG or CSV time-tag file(s)")->required();
  life->add_option("--group", o.group, "group label per input (e.g. partner)");
  add_geometry(life, o);

  auto* cmp = app.add_subcommand("compare", "normalised error between two budgets");
  add_common(cmp, o);
  cmp->add_option("--a", o.budget_a, "first budget JSON")->required();
  cmp->add_option("--b", o.budget_b, "second budget JSON")->required();

  auto* replay = app.add_subcommand("replay", "re-run a command from its manifest and verify its outputs");
  replay->add_option("--manifest", o.manifest, "manifest JSON")->required();
}

std::vector<std::string> reversed(std::vector<std::string> args) {
  std::reverse(args.begin(), args.end());
  return args;
}

json file_entries(const std::vector<fs::path>& paths) {
  json arr = json::array();
  for (const auto& p : paths) {
    arr.push_back({{"path", p.string()}, {"bytes", fs::file_size(p)}, {"fnv1a64", file_checksum(p)}});
  }
  return arr;
}

int finish(Session& s, const std::string& command, const std::vector<std::string>& args) {
  json m;
  m["tool"] = "g2kit";
  m["version"] = G2KIT_VERSION;
  m["command"] = command;
  m["argv"] = args;
  m["seed"] = s.opt.seed ? json(*s.opt.seed) : json(nullptr);
  m["params"] = s.params;
  m["inputs"] = file_entries(s.inputs);
  m["outputs"] = file_entries(s.outputs);
  m["warnings"] = s.warnings;
  write_json(manifest_path(s.opt.out), m);
  for (const auto& w : s.warnings) s.err << "g2kit " << command << ": warning: " << w << "\n";
  return s.opt.strict && !s.warnings.empty() ? kExitWarning : kExitOk;
}

int replay(const Options& o, std::ostream& out, std::ostream& err) {
  const json m = read_json(o.manifest);
  std::vector<std::string> args;
  try {
    args = m.at("argv").get<std::vector<std::string>>();
    for (const auto& in : m.at("inputs")) {
      const fs::path p = in.at("path").get<std::string>();
      if (!fs::exists(p) || file_checksum(p) != in.at("fnv1a64").get<std::string>()) {
        throw IoError("input " + p.string() + " is missing or differs from the manifest");
      }
    }
  } catch (const json::exception& e) {
    throw FormatError(o.manifest + ": " + e.what());
  }
  const int rc = run_cli(args, out, err);
  if (rc == kExitError) return rc;
  std::size_t checked = 0;
  for (const auto& entry : m.at("outputs")) {
    const fs::path p = entry.at("path").get<std::string>();
    if (file_checksum(p) != entry.at("fnv1a64").get<std::string>()) {
      err << "g2kit replay: error: " << p.string() << " differs from the recorded output\n";
      return kExitError;
    }
    ++checked;
  }
  out << "replay: " << checked << " output(s) reproduced\n";
  return rc;
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"g2kit: second-order correlation analysis of time-tagged photon data", "g2kit"};
  build(app, o);
  auto parse = [&](CLI::App& a, const std::vector<std::string>& argv) -> std::optional<int> {
    try {
      a.parse(reversed(argv));
    } catch (const CLI::ParseError& e) {
      const int rc = a.exit(e, out, err);
      return rc == 0 ? kExitOk : kExitError;
    }
    return std::nullopt;
  };
  if (auto rc = parse(app, args)) return *rc;

  CLI::App* sub = app.get_subcommands().front();
  const std::string command = sub->get_name();
  if (command == "replay") return replay(o, out, err);

  std::vector<std::string> effective = args;
  if (!o.config.empty() && command != "simulate") {
    const KeyValues kv = read_key_values(o.config);
    for (const auto& [key, value] : kv) {
      const CLI::Option* opt = sub->get_option_no_throw("--" + key);
      if (opt == nullptr) throw UsageError("unknown key '" + key + "' in " + o.config);
      if (opt->count() == 0) {
        effective.push_back("--" + key);
        effective.push_back(value);
      }
    }
    o = Options{};
    CLI::App again{"g2kit", "g2kit"};
    build(again, o);
    if (auto rc = parse(again, effective)) return *rc;
  }

  Session s{out, err, o, json::object(), {}, {}, {}};
  if (!o.config.empty() && command != "simulate") {
    s.params["config"] = o.config;
    s.inputs.emplace_back(o.config);
  }
  if (command == "simulate") cmd_simulate(s);
  else if (command == "histogram") cmd_histogram(s);
  else if (command == "estimate") cmd_estimate(s);
  else if (command == "sweep") cmd_sweep(s);
  else if (command == "budget") cmd_budget(s);
  else if (command == "lifetime") cmd_lifetime(s);
  else if (command == "compare") cmd_compare(s);
  return finish(s, command, args);
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  try {
    return dispatch(args, out, err);
  } catch (const Error& e) {
    err << "g2kit: error: " << e.what() << "\n";
    return kExitError;
  } catch (const std::exception& e) {
    err << "g2kit: error: " << e.what() << "\n";
    return kExitError;
  }
}

}  // namespace g2kit::cli
