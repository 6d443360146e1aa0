#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "g2kit/cli.hpp"
#include "g2kit/g2kit.hpp"

using namespace g2kit;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("g2kit_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  int run(std::vector<std::string> args) {
    out_.str({});
    err_.str({});
    return cli::run_cli(args, out_, err_);
  }

  // Short calibrated runs: 20 s each.
  void simulate(const std::string& name, std::uint64_t seed, int runs = 1, std::vector<std::string> extra = {}) {
    std::vector<std::string> args{"simulate", "--out", path(name), "--seed", std::to_string(seed), "--runs",
                                  std::to_string(runs), "--set", "acquisition_time_s=20"};
    args.insert(args.end(), extra.begin(), extra.end());
    ASSERT_EQ(run(args), cli::kExitOk) << err_.str();
  }

  static json load(const std::string& p) {
    std::ifstream in(p);
    return json::parse(in);
  }

  static std::string slurp(const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
  }

  fs::path dir_;
  std::ostringstream out_;
  std::ostringstream err_;
};

}  // namespace

TEST_F(Cli, Checksum) {
  std::ofstream(path("empty")).close();
  std::ofstream(path("a")) << "a";
  EXPECT_EQ(cli::file_checksum(path("empty")), "cbf29ce484222325");
  EXPECT_EQ(cli::file_checksum(path("a")), "af63dc4c8601ec8c");
  EXPECT_EQ(cli::manifest_path("x/out.json"), fs::path("x/out.json.manifest.json"));
}

TEST_F(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(run({"--help"}), cli::kExitOk);
  EXPECT_NE(out_.str().find("estimate"), std::string::npos);
  EXPECT_EQ(run({"frobnicate"}), cli::kExitError);
  EXPECT_EQ(run({"estimate", "--out", path("e.json")}), cli::kExitError);
  EXPECT_EQ(run({"estimate", "--in", path("missing.ttag"), "--out", path("e.json")}), cli::kExitError);
  EXPECT_NE(err_.str().find("g2kit: error:"), std::string::npos);
  EXPECT_EQ(run({"simulate", "--out", path("s.ttag"), "--set", "no_such_key=1"}), cli::kExitError);
  EXPECT_EQ(run({"simulate", "--out", path("s.ttag"), "--set", "p_emit=3"}), cli::kExitError);
}

TEST_F(Cli, SimulateWritesManifest) {
  simulate("run.ttag", 5, 3);
  for (const char* name : {"run_000.ttag", "run_001.ttag", "run_002.ttag"}) EXPECT_TRUE(fs::exists(path(name))) << name;
  const json m = load(path("run.ttag.manifest.json"));
  EXPECT_EQ(m.at("command"), "simulate");
  EXPECT_EQ(m.at("seed"), 5);
  EXPECT_EQ(m.at("outputs").size(), 3u);
  EXPECT_EQ(m.at("params").at("config").at("acquisition_time_s"), "20");
  EXPECT_EQ(m.at("outputs")[1].at("fnv1a64"), cli::file_checksum(path("run_001.ttag")));

  SimConfig c = SimConfig::nv_reference();
  c.acquisition_time_s = 20.0;
  c.seed = run_seed(5, 1);
  EXPECT_EQ(read_ttag(path("run_001.ttag")), simulate_run(c, 1));
}

TEST_F(Cli, EstimateMatchesLibrary) {
  simulate("run.ttag", 11);
  ASSERT_EQ(run({"estimate", "--in", path("run.ttag"), "--out", path("e.json")}), cli::kExitOk) << err_.str();
  const json j = load(path("e.json"));

  const TimeTagStream s = read_ttag(path("run.ttag"));
  const Chronogram c = cross_correlate(s, 0, 1, default_geometry(1, 2'500'000));
  const AlphaEstimate e = estimate_alpha(c, make_window(16.0, c));
  EXPECT_EQ(j.at("alpha").get<double>(), e.alpha);
  EXPECT_EQ(j.at("u_alpha_k1").get<double>(), e.u_alpha_k1);
  EXPECT_EQ(j.at("counts").at("N_C"), e.counts.n_c);
  EXPECT_EQ(j.at("counts").at("N_xi"), e.counts.n_xi);
  EXPECT_EQ(j.at("counts").at("N_bg"), e.counts.n_bg);
  EXPECT_EQ(j.at("window").at("k_w"), 16);
  EXPECT_EQ(j.at("window").at("true_ns"), json::array({-8.0, 8.0}));
  EXPECT_TRUE(j.at("validation").at("clean").get<bool>());
  EXPECT_TRUE(j.at("low_flux").at("ok").get<bool>());

  // Same numbers from the exported chronogram.
  ASSERT_EQ(run({"histogram", "--in", path("run.ttag"), "--out", path("h.csv")}), cli::kExitOk) << err_.str();
  EXPECT_EQ(import_chronogram(path("h.csv")), c);
  ASSERT_EQ(run({"estimate", "--in", path("h.csv"), "--out", path("e2.json")}), cli::kExitOk) << err_.str();
  EXPECT_EQ(load(path("e2.json")).at("alpha").get<double>(), e.alpha);
}

TEST_F(Cli, StrictTurnsWarningsIntoExitOne) {
  simulate("bf.ttag", 3, 1, {"--set", "backflash=on"});
  ASSERT_EQ(run({"estimate", "--in", path("bf.ttag"), "--out", path("wide.json"), "--w", "120"}), cli::kExitOk);
  EXPECT_NE(err_.str().find("warning: secondary peak"), std::string::npos) << err_.str();
  EXPECT_FALSE(load(path("wide.json")).at("validation").at("clean").get<bool>());
  EXPECT_EQ(load(path("wide.json.manifest.json")).at("warnings").size(), 2u);

  EXPECT_EQ(run({"estimate", "--strict", "--in", path("bf.ttag"), "--out", path("wide.json"), "--w", "120"}),
            cli::kExitWarning);
  EXPECT_EQ(run({"estimate", "--strict", "--in", path("bf.ttag"), "--out", path("narrow.json")}), cli::kExitOk);
  EXPECT_TRUE(err_.str().empty());
}

TEST_F(Cli, ConfigFileSuppliesDefaults) {
  simulate("run.ttag", 12);
  std::ofstream(path("est.cfg")) << "# analysis settings\nw = 8\nbin = 1\n";
  ASSERT_EQ(run({"estimate", "--config", path("est.cfg"), "--in", path("run.ttag"), "--out", path("a.json")}),
            cli::kExitOk)
      << err_.str();
  EXPECT_EQ(load(path("a.json")).at("window").at("k_w"), 8);
  ASSERT_EQ(run({"estimate", "--config", path("est.cfg"), "--w", "12", "--in", path("run.ttag"), "--out",
                 path("b.json")}),
            cli::kExitOk);
  EXPECT_EQ(load(path("b.json")).at("window").at("k_w"), 12);

  std::ofstream(path("bad.cfg")) << "window=8\n";
  EXPECT_EQ(run({"estimate", "--config", path("bad.cfg"), "--in", path("run.ttag"), "--out", path("c.json")}),
            cli::kExitError);

  std::ofstream(path("sim.cfg")) << "acquisition_time_s = 2\nlifetime_ns = 10\n";
  ASSERT_EQ(run({"simulate", "--config", path("sim.cfg"), "--out", path("s.ttag")}), cli::kExitOk) << err_.str();
  EXPECT_EQ(read_ttag(path("s.ttag")).metadata().acquisition_time_ms, 2000u);
}

TEST_F(Cli, SweepCsv) {
  simulate("run.ttag", 13);
  ASSERT_EQ(run({"sweep", "--in", path("run.ttag"), "--out", path("sweep.csv")}), cli::kExitOk) << err_.str();
  const std::string csv = slurp(path("sweep.csv"));
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "w_ns,alpha,u_alpha_k1");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 38);
}

TEST_F(Cli, BudgetCompareAndReplay) {
  simulate("a.ttag", 100, 10);
  simulate("b.ttag", 200, 10);
  std::vector<std::string> a_args{"budget", "--out", path("lab_a.json"), "--label", "lab A"};
  std::vector<std::string> b_args{"budget", "--out", path("lab_b.json"), "--label", "lab B"};
  for (int i = 0; i < 10; ++i) {
    char suffix[16];
    std::snprintf(suffix, sizeof suffix, "_%03d.ttag", i);
    a_args.insert(a_args.end(), {"--in", path(std::string("a") + suffix)});
    b_args.insert(b_args.end(), {"--in", path(std::string("b") + suffix)});
  }
  ASSERT_EQ(run(a_args), cli::kExitOk) << err_.str();
  const std::string table = out_.str();
  EXPECT_EQ(table, slurp(path("lab_a.txt")));
  EXPECT_EQ(table.rfind("Uncertainty budget (k=2) - lab A\n", 0), 0u) << table;
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 6);
  EXPECT_NE(table.find("alpha_exp"), std::string::npos);
  const std::string runs_csv = slurp(path("lab_a_runs.csv"));
  EXPECT_EQ(std::count(runs_csv.begin(), runs_csv.end(), '\n'), 13);

  const json ja = load(path("lab_a.json"));
  EXPECT_EQ(ja.at("n_runs"), 10);
  EXPECT_EQ(ja.at("runs").size(), 10u);
  const AlphaBudget a = budget_from_json(ja);
  EXPECT_GT(a.expanded(), 0.0);

  ASSERT_EQ(run(b_args), cli::kExitOk) << err_.str();
  ASSERT_EQ(run({"compare", "--a", path("lab_a.json"), "--b", path("lab_b.json"), "--out", path("cmp.json")}),
            cli::kExitOk);
  const json cmp = load(path("cmp.json"));
  EXPECT_TRUE(cmp.at("compatible").get<bool>()) << cmp.dump();
  EXPECT_EQ(cmp.at("normalized_error").get<double>(),
            compare(a, budget_from_json(load(path("lab_b.json")))).normalized_error);

  // Replay reproduces every output byte for byte.
  const std::string before = cli::file_checksum(path("lab_a.json"));
  fs::remove(path("lab_a.json"));
  fs::remove(path("lab_a.txt"));
  ASSERT_EQ(run({"replay", "--manifest", path("lab_a.json.manifest.json")}), cli::kExitOk) << err_.str();
  EXPECT_NE(out_.str().find("replay: 3 output(s) reproduced"), std::string::npos) << out_.str();
  EXPECT_EQ(cli::file_checksum(path("lab_a.json")), before);

  // A changed input is refused.
  fs::copy_file(path("b_000.ttag"), path("a_000.ttag"), fs::copy_options::overwrite_existing);
  EXPECT_EQ(run({"replay", "--manifest", path("lab_a.json.manifest.json")}), cli::kExitError);
}

TEST_F(Cli, BudgetNeedsTwoRuns) {
  simulate("one.ttag", 1);
  EXPECT_EQ(run({"budget", "--in", path("one.ttag"), "--out", path("b.json")}), cli::kExitError);
}

TEST_F(Cli, BudgetFromEstimateReports) {
  simulate("r.ttag", 21, 3);
  std::vector<std::string> args{"budget", "--out", path("b.json")};
  for (int i = 0; i < 3; ++i) {
    const std::string in = path("r_00" + std::to_string(i) + ".ttag");
    const std::string est = path("e" + std::to_string(i) + ".json");
    ASSERT_EQ(run({"estimate", "--in", in, "--out", est}), cli::kExitOk);
    args.insert(args.end(), {"--in", est});
  }
  ASSERT_EQ(run(args), cli::kExitOk) << err_.str();
  const json j = load(path("b.json"));
  EXPECT_EQ(j.at("n_runs"), 3);
  EXPECT_EQ(j.at("runs")[0].at("N_C"), load(path("e0.json")).at("counts").at("N_C"));
}

TEST_F(Cli, LifetimeWithGroups) {
  simulate("r.ttag", 31, 4);
  std::vector<std::string> args{"lifetime", "--out", path("life.json")};
  for (int i = 0; i < 4; ++i) args.insert(args.end(), {"--in", path("r_00" + std::to_string(i) + ".ttag")});
  for (const char* g : {"PTB", "PTB", "NPL", "NPL"}) args.insert(args.end(), {"--group", g});
  ASSERT_EQ(run(args), cli::kExitOk) << err_.str();
  const json j = load(path("life.json"));
  ASSERT_EQ(j.at("fits").size(), 4u);
  EXPECT_EQ(j.at("summary").at("count"), 4);
  ASSERT_EQ(j.at("groups").size(), 2u);
  EXPECT_EQ(j.at("groups")[0].at("group"), "PTB");
  EXPECT_TRUE(fs::exists(path("life_residuals_3.csv")));

  const TimeTagStream s = read_ttag(path("r_002.ttag"));
  const FitResult fit = fit_lifetime(cross_correlate(s, 0, 1, default_geometry(1, 2'500'000)));
  EXPECT_EQ(j.at("fits")[2].at("d").get<double>(), fit.model.d);
  EXPECT_EQ(j.at("fits")[2].at("group"), "NPL");

  args.pop_back();
  args.pop_back();
  EXPECT_EQ(run(args), cli::kExitError);
}

TEST_F(Cli, CsvTimeTagInput) {
  std::ofstream csv(path("tags.csv"));
  csv << "channel,timestamp_ticks\n";
  for (int p = 0; p < 1000; ++p) {
    csv << 0 << ',' << p * 400'000 + 10'000 << '\n';
    csv << 1 << ',' << (p + 1) * 400'000 + 12'000 << '\n';
  }
  csv.close();
  ASSERT_EQ(run({"histogram", "--in", path("tags.csv"), "--rate", "2500000", "--acq-ms", "1", "--out",
                 path("h.csv")}),
            cli::kExitOk)
      << err_.str();
  const Chronogram c = import_chronogram(path("h.csv"));
  EXPECT_EQ(c.n_pulses, 2500u);
  EXPECT_GT(c.total(), 1000u);
}
