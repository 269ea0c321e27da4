#include <gtest/gtest.h>

#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "unida/error.hpp"
#include "unida/runner.hpp"

namespace unida {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    path_ = fs::temp_directory_path() /
            ("unida_" + std::string(info->test_suite_name()) + "_" + info->name() + "_" + std::to_string(::getpid()));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

const char* kTinyDataset =
    R"("dataset": {"synthetic": {"n_domains": 3, "n_classes": 3, "samples_per_class": 12, "channels": 2,
                                  "length": 32, "seed": 3}})";

std::string tiny_run_config(const std::string& extra = "") {
  return std::string("{") + kTinyDataset + R"(,
    "method": "unijdot",
    "backbone": {"kind": "cnn", "cnn_widths": [8, 8], "feature_dim": 8},
    "training": {"epochs": 2, "batch_size": 16},
    "search_space": {"lr": {"min": 0.0001, "max": 0.01, "log": true}},
    "selection": {"n_configs": 3, "n_val": 1, "n_eval": 2, "seeds": [0]})" +
         extra + "}";
}

fs::path write_config(const fs::path& dir, const std::string& name, const std::string& text) {
  const fs::path p = dir / name;
  std::ofstream(p) << text;
  return p;
}

CommandOptions quiet_options(const fs::path& config, const fs::path& out, std::size_t jobs = 1) {
  CommandOptions o;
  o.config = config;
  o.out_dir = out;
  o.jobs = jobs;
  o.quiet = true;
  return o;
}

// ------------------------------------------------------------ configuration

TEST(RunConfig, ParsesMinimalConfig) {
  const RunConfig c = parse_run_config(tiny_run_config());
  ASSERT_TRUE(c.synthetic.has_value());
  EXPECT_EQ(c.synthetic->n_domains, 3u);
  EXPECT_EQ(c.methods, std::vector<MethodKind>{MethodKind::Unijdot});
  ASSERT_EQ(c.backbones.size(), 1u);
  EXPECT_EQ(c.backbones[0].cnn_widths[1], 8u);
  EXPECT_EQ(c.backbone_names, std::vector<std::string>{"cnn"});
  EXPECT_EQ(c.train.epochs, 2u);
  EXPECT_EQ(c.n_configs, 3u);
  EXPECT_EQ(c.seeds, std::vector<std::uint64_t>{0});
  ASSERT_EQ(c.space.params.size(), 1u);
  EXPECT_TRUE(c.space.params[0].log_scale);
}

TEST(RunConfig, DefaultsFollowTheProtocol) {
  const RunConfig c = parse_run_config(std::string("{") + kTinyDataset + R"(, "method": "uan", "backbone": "fno"})");
  EXPECT_EQ(c.n_configs, 100u);
  EXPECT_EQ(c.n_val, 5u);
  EXPECT_EQ(c.n_eval, 5u);
  EXPECT_EQ(c.seeds.size(), 10u);
  EXPECT_TRUE(c.space.empty());
}

TEST(RunConfig, RejectsInvalidInput) {
  const std::string head = std::string("{") + kTinyDataset + R"(, "method": "uan", "backbone": "cnn")";
  const std::vector<std::string> bad = {
      "{not json",
      R"({"method": "uan", "backbone": "cnn"})",
      head + R"(, "colour": 1})",
      head + R"(, "training": {"epochs": -1}})",
      head + R"(, "training": {"epochs": "ten"}})",
      head + R"(, "training": {"split_ratio": 1.0}})",
      head + R"(, "hyperparams": {"learning_rate": 0.1}})",
      head + R"(, "search_space": {"nonsense": {"min": 0, "max": 1}}})",
      head + R"(, "search_space": {"lr": {"min": 1, "max": 0}}})",
      head + R"(, "selection": {"seeds": [1, 1]}})",
      head + R"(, "selection": {"n_eval": 0}})",
      head + R"(, "methods": ["uan"]})",
      head + R"(, "uan_score": "psychic"})",
      std::string("{") + kTinyDataset + R"(, "method": "magic", "backbone": "cnn"})",
      std::string("{") + kTinyDataset + R"(, "method": "uan", "backbones": ["cnn", "cnn"]})",
      std::string("{") + kTinyDataset + R"(, "method": "uan", "backbone": {"kind": "cnn", "depth": 3}})",
      R"({"dataset": {"path": "x", "synthetic": {}}, "method": "uan", "backbone": "cnn"})",
  };
  for (const auto& text : bad) EXPECT_THROW(parse_run_config(text), ConfigError) << text;
}

TEST(RunConfig, RelativeDatasetPathResolvesAgainstConfigDir) {
  const RunConfig c =
      parse_run_config(R"({"dataset": {"path": "data/hhar"}, "method": "uan", "backbone": "cnn"})", "/cfg/dir");
  ASSERT_TRUE(c.dataset_path.has_value());
  EXPECT_EQ(c.dataset_path->generic_string(), "/cfg/dir/data/hhar");
}

TEST(RunConfig, MethodHyperparamsOverlayShared) {
  const RunConfig c = parse_run_config(std::string("{") + kTinyDataset + R"(, "methods": "all", "backbone": "cnn",
      "hyperparams": {"lr": 0.01, "gamma": 2},
      "method_hyperparams": {"uan": {"lr": 0.003}}})");
  EXPECT_EQ(c.methods.size(), 6u);
  EXPECT_DOUBLE_EQ(c.hyperparams_for(MethodKind::Uan).at("lr"), 0.003);
  EXPECT_DOUBLE_EQ(c.hyperparams_for(MethodKind::Uan).at("gamma"), 2.0);
  EXPECT_DOUBLE_EQ(c.hyperparams_for(MethodKind::Ppot).at("lr"), 0.01);
}

TEST(RunConfig, RunIdIgnoresOutputAndJobs) {
  const RunConfig a = parse_run_config(tiny_run_config());
  const RunConfig b = parse_run_config(tiny_run_config(R"(, "output": "elsewhere", "jobs": 4)"));
  const RunConfig c = parse_run_config(tiny_run_config(R"(, "seed": 1)"));
  EXPECT_EQ(a.run_id(), b.run_id());
  EXPECT_NE(a.run_id(), c.run_id());
  EXPECT_EQ(a.run_id().size(), 16u);
}

// ---------------------------------------------------------------- trial log

LoggedTrial make_trial(std::size_t scenario, std::size_t seed_index, double h, bool failed = false,
                       std::size_t method = 0, std::size_t backbone = 0) {
  LoggedTrial t;
  t.run_id = "r1";
  t.command = "run";
  t.phase = "eval";
  t.method = method == 0 ? "uan" : "ppot";
  t.backbone = backbone == 0 ? "cnn" : "fno";
  t.method_index = method;
  t.backbone_index = backbone;
  t.scenario_index = scenario;
  t.seed_index = seed_index;
  t.scenario_name = "s" + std::to_string(scenario);
  t.record.report.h_score = h;
  t.record.failed = failed;
  t.record.seed = seed_index;
  return t;
}

TEST(TrialLog, JsonLineRoundTripProperty) {
  Rng rng(5);
  for (int i = 0; i < 300; ++i) {
    LoggedTrial t = make_trial(rng.below(7), rng.below(10), rng.uniform(), rng.below(2) == 1);
    t.record.report.a_common = rng.uniform();
    t.record.report.a_unknown = std::ldexp(rng.uniform(), -900);
    t.record.report.n_common = rng.below(1000);
    t.record.seed = (std::uint64_t{1} << 63) + rng.below(1000);
    t.record.hyperparams = {{"lr", rng.uniform() * 1e-3}, {"gamma", 1.0 / 3.0}};
    t.record.wall_time = rng.uniform() * 100;
    t.record.scenario.source_id = "d" + std::to_string(i);
    t.record.scenario.removed_target_class = static_cast<int>(rng.below(9));
    t.record.failure = "quote \" and \n newline";
    const LoggedTrial u = parse_json_line(to_json_line(t));
    EXPECT_EQ(to_json_line(u), to_json_line(t));
    EXPECT_EQ(u.record.report.a_unknown, t.record.report.a_unknown);
    EXPECT_EQ(u.record.hyperparams, t.record.hyperparams);
    EXPECT_EQ(u.record.seed, t.record.seed);
    EXPECT_EQ(to_json_line(t).find('\n'), std::string::npos);
  }
}

TEST(TrialLog, MalformedLineIsFormatError) {
  EXPECT_THROW(parse_json_line("{\"run_id\": 3}", 7), FormatError);
  EXPECT_THROW(parse_json_line("garbage", 1), FormatError);
  try {
    parse_json_line("{}", 42);
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("42"), std::string::npos);
  }
}

// ------------------------------------------------------------------- tables

TEST(Format, FixedFourDecimals) {
  EXPECT_EQ(format_fixed(0.5), "0.5000");
  EXPECT_EQ(format_fixed(1.0 / 3.0), "0.3333");
  EXPECT_EQ(format_fixed(2.0 / 3.0), "0.6667");
  EXPECT_EQ(format_fixed(-0.0), "0.0000");
  EXPECT_EQ(format_fixed(-1e-9), "0.0000");
  EXPECT_EQ(format_fixed(1.0), "1.0000");
  EXPECT_EQ(format_fixed(12.5, 1), "12.5");
}

TEST(RunTable, HandComputedExample) {
  // Scenario 0: {0.2, 0.4, 0.6}; scenario 1: {0.5, 0.5, 0.8}.
  std::vector<LoggedTrial> trials = {make_trial(0, 0, 0.2), make_trial(0, 1, 0.4), make_trial(0, 2, 0.6),
                                     make_trial(1, 0, 0.5), make_trial(1, 1, 0.5), make_trial(1, 2, 0.8, true)};
  const ResultTable t = build_run_table(trials);
  ASSERT_EQ(t.rows.size(), 3u);
  EXPECT_NEAR(t.rows[0].mean, 0.4, 1e-12);
  EXPECT_NEAR(t.rows[0].stddev, 0.2, 1e-12);
  EXPECT_NEAR(t.rows[1].mean, 0.6, 1e-12);
  EXPECT_EQ(t.rows[1].failures, 1u);
  EXPECT_EQ(t.rows[2].label, "Mean");
  EXPECT_NEAR(t.rows[2].mean, 0.5, 1e-12);
  // Per-seed averages 0.35, 0.45, 0.70: sample std.
  const double m = (0.35 + 0.45 + 0.7) / 3;
  const double var = ((0.35 - m) * (0.35 - m) + (0.45 - m) * (0.45 - m) + (0.7 - m) * (0.7 - m)) / 2;
  EXPECT_NEAR(t.rows[2].stddev, std::sqrt(var), 1e-12);
  EXPECT_EQ(t.rows[2].n_trials, 6u);
  EXPECT_EQ(t.rows[2].failures, 1u);
}

TEST(RunTable, MeanRowIsMeanOfScenarioRowsProperty) {
  Rng rng(3);
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<LoggedTrial> trials;
    const std::size_t ns = 1 + rng.below(6), nk = 1 + rng.below(5);
    for (std::size_t s = 0; s < ns; ++s)
      for (std::size_t k = 0; k < nk; ++k) trials.push_back(make_trial(s, k, rng.uniform()));
    const ResultTable t = build_run_table(trials);
    ASSERT_EQ(t.rows.size(), ns + 1);
    double sum = 0.0;
    for (std::size_t s = 0; s < ns; ++s) sum += t.rows[s].mean;
    EXPECT_NEAR(t.rows.back().mean, sum / static_cast<double>(ns), 1e-12);
  }
}

TEST(RunTable, LaterDuplicateWinsAndValidationIgnored) {
  LoggedTrial val = make_trial(0, 0, 0.9);
  val.phase = "val";
  std::vector<LoggedTrial> trials = {val, make_trial(0, 0, 0.1), make_trial(0, 0, 0.3)};
  const ResultTable t = build_run_table(trials);
  EXPECT_EQ(t.rows[0].n_trials, 1u);
  EXPECT_NEAR(t.rows[0].mean, 0.3, 1e-12);
  EXPECT_THROW(build_run_table(std::vector<LoggedTrial>{val}), ContractError);
}

TEST(MatrixTable, RanksMeansAndFailureFlags) {
  std::vector<LoggedTrial> trials;
  // uan: cnn 0.5, fno 0.7; ppot: cnn 0.6, fno 0 (all failed).
  for (std::size_t k = 0; k < 2; ++k) {
    trials.push_back(make_trial(0, k, 0.5, false, 0, 0));
    trials.push_back(make_trial(0, k, 0.7, false, 0, 1));
    trials.push_back(make_trial(0, k, 0.6, false, 1, 0));
    trials.push_back(make_trial(0, k, 0.0, true, 1, 1));
  }
  for (auto& t : trials) t.command = "matrix";
  const ResultTable t = build_matrix_table(trials);
  EXPECT_EQ(t.methods, (std::vector<std::string>{"uan", "ppot"}));
  EXPECT_EQ(t.backbones, (std::vector<std::string>{"cnn", "fno"}));
  ASSERT_EQ(t.rows.size(), 6u);
  EXPECT_EQ(t.rows[0].rank, 2u);
  EXPECT_EQ(t.rows[1].rank, 1u);
  EXPECT_EQ(t.rows[2].rank, 1u);
  EXPECT_EQ(t.rows[3].rank, 2u);
  EXPECT_EQ(t.rows[3].failures, 2u);
  EXPECT_DOUBLE_EQ(t.rows[3].mean, 0.0);
  EXPECT_EQ(t.rows[4].label, "Mean");
  EXPECT_NEAR(t.rows[4].mean, 0.55, 1e-12);
  EXPECT_NEAR(t.rows[5].mean, 0.35, 1e-12);

  const auto csv = lines_of(to_csv(t));
  ASSERT_EQ(csv.size(), 7u);
  EXPECT_EQ(csv[4], "r1,matrix,ppot,ppot,fno,0.0000,0.0000,2,2,1,2");
  for (const auto& line : csv) EXPECT_EQ(std::count(line.begin(), line.end(), ','), 10) << line;
  EXPECT_NE(to_text(t).find("!2"), std::string::npos);
}

TEST(MatrixTable, TiesRankEarlierBackboneFirst) {
  std::vector<LoggedTrial> trials = {make_trial(0, 0, 0.4, false, 0, 0), make_trial(0, 0, 0.4, false, 0, 1)};
  const ResultTable t = build_matrix_table(trials);
  EXPECT_EQ(t.rows[0].rank, 1u);
  EXPECT_EQ(t.rows[1].rank, 2u);
}

// ----------------------------------------------------------------- commands

TEST(Commands, MissingConfigExitsTwo) {
  TempDir dir;
  EXPECT_EQ(cmd_run(quiet_options(dir.path() / "absent.json", dir.path())), kExitConfig);
  EXPECT_EQ(cmd_matrix(quiet_options(dir.path() / "absent.json", dir.path())), kExitConfig);
  const fs::path bad = write_config(dir.path(), "bad.json", "{\"method\": 3}");
  EXPECT_EQ(cmd_run(quiet_options(bad, dir.path())), kExitConfig);
}

TEST(Commands, RunRejectsGrids) {
  TempDir dir;
  const fs::path cfg = write_config(dir.path(), "grid.json",
                                    std::string("{") + kTinyDataset + R"(, "methods": ["uan", "ppot"], "backbone": "cnn"})");
  EXPECT_EQ(cmd_run(quiet_options(cfg, dir.path())), kExitConfig);
}

TEST(Commands, TinyRunWritesTablesAndReproduces) {
  TempDir dir;
  const fs::path cfg = write_config(dir.path(), "tiny.json", tiny_run_config());
  ASSERT_EQ(cmd_run(quiet_options(cfg, dir.path() / "a")), kExitOk);
  ASSERT_EQ(cmd_run(quiet_options(cfg, dir.path() / "b")), kExitOk);
  ASSERT_EQ(cmd_run(quiet_options(cfg, dir.path() / "c", 4)), kExitOk);
  const std::string csv = read_file(dir.path() / "a" / "results.csv");
  const auto lines = lines_of(csv);
  ASSERT_EQ(lines.size(), 1u + 2u + 1u);  // header, N_eval scenarios, Mean
  EXPECT_EQ(lines.back().rfind(parse_run_config(tiny_run_config()).run_id() + ",run,Mean,", 0), 0u);
  EXPECT_EQ(csv, read_file(dir.path() / "b" / "results.csv"));
  EXPECT_EQ(csv, read_file(dir.path() / "c" / "results.csv"));
  EXPECT_TRUE(fs::exists(dir.path() / "a" / "results.txt"));
  // 3 configurations x 1 validation scenario, then 2 scenarios x 1 seed.
  EXPECT_EQ(lines_of(read_file(dir.path() / "a" / "trials.jsonl")).size(), 5u);
}

TEST(Commands, ReportRebuildsRunTables) {
  TempDir dir;
  const fs::path cfg = write_config(dir.path(), "tiny.json", tiny_run_config());
  const fs::path out = dir.path() / "out";
  ASSERT_EQ(cmd_run(quiet_options(cfg, out)), kExitOk);
  ASSERT_EQ(cmd_report(out, std::nullopt, true), kExitOk);
  const std::string id = parse_run_config(tiny_run_config()).run_id();
  EXPECT_EQ(read_file(out / "results.csv"), read_file(out / "report" / id / "results.csv"));
  EXPECT_EQ(read_file(out / "results.txt"), read_file(out / "report" / id / "results.txt"));
}

TEST(Commands, ReportSeparatesRunsSharingALog) {
  TempDir dir;
  const fs::path out = dir.path() / "out";
  const fs::path a = write_config(dir.path(), "a.json", tiny_run_config());
  const fs::path b = write_config(dir.path(), "b.json", tiny_run_config(R"(, "seed": 9)"));
  ASSERT_EQ(cmd_run(quiet_options(a, out)), kExitOk);
  const std::string csv_a = read_file(out / "results.csv");
  ASSERT_EQ(cmd_run(quiet_options(b, out)), kExitOk);
  const std::string csv_b = read_file(out / "results.csv");
  const fs::path rep = dir.path() / "rep";
  ASSERT_EQ(cmd_report(out, rep, true), kExitOk);
  const std::string id_a = parse_run_config(tiny_run_config()).run_id();
  const std::string id_b = parse_run_config(tiny_run_config(R"(, "seed": 9)")).run_id();
  EXPECT_EQ(read_file(rep / "report" / id_a / "results.csv"), csv_a);
  EXPECT_EQ(read_file(rep / "report" / id_b / "results.csv"), csv_b);
}

TEST(Commands, ReportOnEmptyOrBrokenLogExitsTwo) {
  TempDir dir;
  EXPECT_EQ(cmd_report(dir.path(), std::nullopt, true), kExitConfig);
  std::ofstream(dir.path() / "trials.jsonl") << "";
  EXPECT_EQ(cmd_report(dir.path(), std::nullopt, true), kExitConfig);
  std::ofstream(dir.path() / "trials.jsonl") << "{broken\n";
  EXPECT_EQ(cmd_report(dir.path(), std::nullopt, true), kExitConfig);
}

TEST(Commands, MatrixShapeFailuresAndRanks) {
  TempDir dir;
  const fs::path cfg = write_config(dir.path(), "m.json", std::string("{") + kTinyDataset + R"(,
      "methods": ["ppot", "uan"],
      "backbones": [{"kind": "cnn", "cnn_widths": [8, 8]}, "fno"],
      "backbone_options": {"feature_dim": 8},
      "training": {"epochs": 2, "batch_size": 16},
      "method_hyperparams": {"uan": {"lr": 1e308}},
      "selection": {"n_eval": 1, "seeds": [0, 1]}})");
  ASSERT_EQ(cmd_matrix(quiet_options(cfg, dir.path() / "m", 2)), kExitOk);
  const auto csv = lines_of(read_file(dir.path() / "m" / "results.csv"));
  ASSERT_EQ(csv.size(), 1u + 2u * 2u + 2u);
  std::set<std::string> ranks_ppot;
  for (std::size_t i = 1; i < csv.size(); ++i) {
    const std::string& line = csv[i];
    if (line.find(",uan,uan,") != std::string::npos) {
      EXPECT_NE(line.find(",0.0000,0.0000,2,2,1,"), std::string::npos) << line;
    }
    if (line.find(",ppot,ppot,") != std::string::npos) ranks_ppot.insert(line.substr(line.rfind(',') + 1));
  }
  EXPECT_EQ(ranks_ppot, (std::set<std::string>{"1", "2"}));
  ASSERT_EQ(cmd_report(dir.path() / "m", std::nullopt, true), kExitOk);
  const std::string id = load_run_config(cfg).run_id();
  EXPECT_EQ(read_file(dir.path() / "m" / "results.csv"), read_file(dir.path() / "m" / "report" / id / "results.csv"));
}

// --------------------------------------------------------------- executable

#ifdef UNIDA_BENCH_PATH
int run_bench(const std::string& args) {
  const int status = std::system((std::string(UNIDA_BENCH_PATH) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(Executable, ExitCodes) {
  TempDir dir;
  EXPECT_EQ(run_bench(""), 2);
  EXPECT_EQ(run_bench("run"), 2);
  EXPECT_EQ(run_bench("run --config " + (dir.path() / "absent.json").string()), 2);
  EXPECT_EQ(run_bench("report " + dir.path().string()), 2);
  EXPECT_EQ(run_bench("--help"), 0);
  const fs::path cfg = write_config(dir.path(), "tiny.json", tiny_run_config());
  EXPECT_EQ(run_bench("run --quiet --config " + cfg.string() + " --out " + (dir.path() / "o").string()), 0);
  EXPECT_TRUE(fs::exists(dir.path() / "o" / "results.csv"));
}
#endif

}  // namespace
}  // namespace unida
