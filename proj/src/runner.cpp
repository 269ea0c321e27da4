#include <algorithm>
#include <charconv>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>

#include "json.hpp"

#include "unida/error.hpp"
#include "unida/runner.hpp"

namespace unida {

namespace fs = std::filesystem;

std::string format_fixed(double value, int decimals) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value + 0.0, std::chars_format::fixed, decimals);
  std::string out(buf, res.ptr);
  if (out.find_first_not_of("-0.") == std::string::npos && out.front() == '-') out.erase(0, 1);
  return out;
}

namespace {

// Scores of one group of trials keyed by (scenario, seed); later log lines
// replace earlier ones with the same key.
struct ScoreGrid {
  std::map<std::size_t, std::map<std::size_t, std::pair<double, bool>>> cells;
  std::map<std::size_t, std::string> scenario_names;

  void add(const LoggedTrial& t) {
    cells[t.scenario_index][t.seed_index] = {t.record.report.h_score, t.record.failed};
    scenario_names[t.scenario_index] = t.scenario_name;
  }
};

struct Aggregate {
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t n_trials = 0;
  std::size_t failures = 0;
};

Aggregate aggregate(const ScoreGrid& grid) {
  Aggregate a;
  std::vector<double> scenario_means;
  std::map<std::size_t, std::pair<double, std::size_t>> per_seed;
  for (const auto& [s, seeds] : grid.cells) {
    std::vector<double> h;
    for (const auto& [k, v] : seeds) {
      h.push_back(v.first);
      per_seed[k].first += v.first;
      ++per_seed[k].second;
      ++a.n_trials;
      if (v.second) ++a.failures;
    }
    scenario_means.push_back(mean_std(h).first);
  }
  std::vector<double> seed_means;
  for (const auto& [k, v] : per_seed) seed_means.push_back(v.first / static_cast<double>(v.second));
  a.mean = mean_std(scenario_means).first;
  a.stddev = mean_std(seed_means).second;
  return a;
}

std::vector<const LoggedTrial*> eval_trials_of_first_run(std::span<const LoggedTrial> trials) {
  std::vector<const LoggedTrial*> out;
  const LoggedTrial* first = nullptr;
  for (const auto& t : trials) {
    if (t.phase != "eval") continue;
    if (!first) first = &t;
    if (t.run_id == first->run_id) out.push_back(&t);
  }
  if (out.empty()) throw ContractError("no evaluation trials to tabulate");
  return out;
}

// Counts code points so that the plus-minus sign aligns.
std::size_t display_len(const std::string& s) {
  std::size_t len = 0;
  for (unsigned char c : s) len += (c & 0xC0) != 0x80;
  return len;
}

std::string pad(const std::string& s, std::size_t width) {
  const std::size_t len = display_len(s);
  return s + std::string(width > len ? width - len : 0, ' ');
}

std::string cell_text(const ResultRow& r) {
  std::string s = format_fixed(r.mean) + " ± " + format_fixed(r.stddev);
  if (r.failures > 0) s += " !" + std::to_string(r.failures);
  return s;
}

}  // namespace

ResultTable build_run_table(std::span<const LoggedTrial> trials) {
  const auto selected = eval_trials_of_first_run(trials);
  ResultTable table;
  table.run_id = selected.front()->run_id;
  table.command = selected.front()->command;
  table.methods = {selected.front()->method};
  table.backbones = {selected.front()->backbone};
  ScoreGrid grid;
  for (const auto* t : selected) grid.add(*t);
  for (const auto& [s, seeds] : grid.cells) {
    ResultRow row{grid.scenario_names.at(s), table.methods[0], table.backbones[0]};
    std::vector<double> h;
    for (const auto& [k, v] : seeds) {
      h.push_back(v.first);
      if (v.second) ++row.failures;
    }
    std::tie(row.mean, row.stddev) = mean_std(h);
    row.n_trials = h.size();
    table.rows.push_back(row);
  }
  const Aggregate a = aggregate(grid);
  table.rows.push_back({"Mean", table.methods[0], table.backbones[0], a.mean, a.stddev, a.n_trials, a.failures, 0});
  return table;
}

ResultTable build_matrix_table(std::span<const LoggedTrial> trials) {
  const auto selected = eval_trials_of_first_run(trials);
  ResultTable table;
  table.run_id = selected.front()->run_id;
  table.command = selected.front()->command;
  std::map<std::size_t, std::string> method_names, backbone_names;
  std::map<std::pair<std::size_t, std::size_t>, ScoreGrid> grids;
  for (const auto* t : selected) {
    method_names[t->method_index] = t->method;
    backbone_names[t->backbone_index] = t->backbone;
    grids[{t->method_index, t->backbone_index}].add(*t);
  }
  for (const auto& [i, n] : method_names) table.methods.push_back(n);
  for (const auto& [i, n] : backbone_names) table.backbones.push_back(n);

  const auto assign_ranks = [](std::vector<ResultRow>& rows) {
    std::vector<std::size_t> order(rows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rows[a].mean > rows[b].mean; });
    for (std::size_t r = 0; r < order.size(); ++r) rows[order[r]].rank = r + 1;
  };

  std::map<std::size_t, std::vector<double>> column_means;
  std::map<std::size_t, Aggregate> column_totals;
  for (const auto& [mi, mname] : method_names) {
    std::vector<ResultRow> row;
    for (const auto& [bi, bname] : backbone_names) {
      auto it = grids.find({mi, bi});
      if (it == grids.end()) continue;
      const Aggregate a = aggregate(it->second);
      row.push_back({mname, mname, bname, a.mean, a.stddev, a.n_trials, a.failures, 0});
      column_means[bi].push_back(a.mean);
      column_totals[bi].n_trials += a.n_trials;
      column_totals[bi].failures += a.failures;
    }
    assign_ranks(row);
    table.rows.insert(table.rows.end(), row.begin(), row.end());
  }
  std::vector<ResultRow> mean_row;
  for (const auto& [bi, bname] : backbone_names) {
    const auto [m, s] = mean_std(column_means[bi]);
    mean_row.push_back({"Mean", "Mean", bname, m, s, column_totals[bi].n_trials, column_totals[bi].failures, 0});
  }
  assign_ranks(mean_row);
  table.rows.insert(table.rows.end(), mean_row.begin(), mean_row.end());
  return table;
}

std::string to_csv(const ResultTable& table) {
  std::ostringstream out;
  out << "run_id,command,row,method,backbone,h_mean,h_std,n_trials,failures,failed,rank\n";
  for (const auto& r : table.rows) {
    out << table.run_id << ',' << table.command << ',' << r.label << ',' << r.method << ',' << r.backbone << ','
        << format_fixed(r.mean) << ',' << format_fixed(r.stddev) << ',' << r.n_trials << ',' << r.failures << ','
        << (r.failures > 0 ? 1 : 0) << ',';
    if (r.rank > 0) out << r.rank;
    out << '\n';
  }
  return out.str();
}

std::string to_text(const ResultTable& table) {
  std::ostringstream out;
  if (table.command == "matrix") {
    out << "matrix " << table.run_id << "  (H-score mean ± std over seeds; * best backbone; !k failed trials)\n";
    std::vector<std::vector<std::string>> grid;
    std::vector<std::string> header{"method"};
    header.insert(header.end(), table.backbones.begin(), table.backbones.end());
    grid.push_back(header);
    std::vector<std::string> labels;
    for (const auto& r : table.rows)
      if (std::find(labels.begin(), labels.end(), r.label) == labels.end()) labels.push_back(r.label);
    for (const auto& label : labels) {
      std::vector<std::string> line{label};
      for (const auto& b : table.backbones) {
        auto it = std::find_if(table.rows.begin(), table.rows.end(),
                               [&](const ResultRow& r) { return r.label == label && r.backbone == b; });
        line.push_back(it == table.rows.end() ? "-" : cell_text(*it) + (it->rank == 1 ? " *" : ""));
      }
      grid.push_back(line);
    }
    std::vector<std::size_t> widths(header.size(), 0);
    for (const auto& line : grid)
      for (std::size_t c = 0; c < line.size(); ++c)
        widths[c] = std::max(widths[c], display_len(line[c]));
    for (const auto& line : grid) {
      for (std::size_t c = 0; c + 1 < line.size(); ++c) out << pad(line[c], widths[c] + 2);
      out << line.back() << '\n';
    }
    return out.str();
  }
  const std::string method = table.methods.empty() ? "" : table.methods[0];
  const std::string backbone = table.backbones.empty() ? "" : table.backbones[0];
  out << "run " << table.run_id << "  method=" << method << "  backbone=" << backbone << '\n';
  std::size_t width = 8;
  for (const auto& r : table.rows) width = std::max(width, r.label.size());
  out << pad("scenario", width + 2) << pad("H-score", 19) << pad("trials", 8) << "failures\n";
  for (const auto& r : table.rows)
    out << pad(r.label, width + 2) << pad(format_fixed(r.mean) + " ± " + format_fixed(r.stddev), 19)
        << pad(std::to_string(r.n_trials), 8) << r.failures << '\n';
  return out.str();
}

namespace {

template <class F>
int guarded(F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const FormatError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

struct Session {
  RunConfig config;
  std::string run_id;
  fs::path out_dir;
  std::size_t jobs = 1;
  bool quiet = false;
};

Session open_session(const CommandOptions& options) {
  Session s;
  s.config = load_run_config(options.config);
  if (options.seed) s.config.seed = *options.seed;
  if (options.out_dir) s.config.out_dir = *options.out_dir;
  if (options.jobs) s.config.jobs = std::max<std::size_t>(1, *options.jobs);
  s.run_id = s.config.run_id();
  s.out_dir = s.config.out_dir;
  s.jobs = s.config.jobs;
  s.quiet = options.quiet;
  fs::create_directories(s.out_dir);
  return s;
}

std::pair<std::vector<DomainScenario>, std::vector<DomainScenario>> pick_scenarios(const RunConfig& cfg,
                                                                                   const DatasetMeta& meta,
                                                                                   bool with_validation) {
  Rng rng = Rng(cfg.seed).derive("scenarios");
  try {
    const std::vector<ScenarioRequest> none;
    return select_scenarios(meta, with_validation ? cfg.val_scenarios : none, cfg.eval_scenarios,
                            with_validation ? cfg.n_val : 0, cfg.n_eval, rng);
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
}

// Appends finished trials to trials.jsonl and keeps them for the tables.
class TrialLog {
 public:
  TrialLog(const Session& s, std::string command) : session_(s), command_(std::move(command)) {
    out_.open(s.out_dir / "trials.jsonl", std::ios::app);
    if (!out_) throw Error("cannot open " + (s.out_dir / "trials.jsonl").string());
  }

  void record(const TrialTask& task, const TrialRecord& rec, std::size_t method_index, std::size_t backbone_index) {
    LoggedTrial t;
    t.run_id = session_.run_id;
    t.command = command_;
    t.phase = task.phase;
    t.method = std::string(to_string(session_.config.methods[method_index]));
    t.backbone = session_.config.backbone_names[backbone_index];
    t.method_index = method_index;
    t.backbone_index = backbone_index;
    t.config_index = task.config_index;
    t.scenario_index = task.scenario_index;
    t.seed_index = task.seed_index;
    t.scenario_name = task.scenario.name();
    t.record = rec;
    out_ << to_json_line(t) << '\n';
    out_.flush();
    if (!session_.quiet) {
      std::cerr << "[" << ++count_ << "] " << t.method << "/" << t.backbone << " " << t.phase << " cfg "
                << t.config_index << " " << t.scenario_name << " seed " << rec.seed << "  H="
                << format_fixed(rec.report.h_score) << (rec.failed ? "  FAILED: " + rec.failure : std::string())
                << "  (" << format_fixed(rec.wall_time, 1) << "s)\n";
    }
    trials_.push_back(std::move(t));
  }

  const std::vector<LoggedTrial>& trials() const { return trials_; }

 private:
  const Session& session_;
  std::string command_;
  std::ofstream out_;
  std::vector<LoggedTrial> trials_;
  std::size_t count_ = 0;
};

void write_tables(const fs::path& dir, const ResultTable& table, bool quiet) {
  fs::create_directories(dir);
  std::ofstream(dir / "results.csv") << to_csv(table);
  std::ofstream(dir / "results.txt") << to_text(table);
  if (!quiet) std::cout << to_text(table);
}

MethodConfig method_config(const RunConfig& cfg, std::size_t m) {
  MethodConfig mc;
  mc.kind = cfg.methods[m];
  mc.uan_score = cfg.uan_score;
  return mc;
}

SelectionConfig selection_config(const RunConfig& cfg, std::size_t m) {
  SelectionConfig sc;
  sc.n_configs = cfg.space.empty() ? 1 : cfg.n_configs;
  sc.space = cfg.space;
  sc.fixed = cfg.hyperparams_for(cfg.methods[m]);
  sc.eval_seeds = cfg.seeds;
  sc.seed = cfg.seed;
  return sc;
}

}  // namespace

int cmd_run(const CommandOptions& options) {
  return guarded([&] {
    Session s = open_session(options);
    const RunConfig& cfg = s.config;
    if (cfg.methods.size() != 1 || cfg.backbones.size() != 1)
      throw ConfigError("run takes one method and one backbone; use matrix for grids");
    const Dataset data = load_config_dataset(cfg);
    const bool search = !cfg.space.empty();
    const auto [val, eval] = pick_scenarios(cfg, data.meta, search);
    TrialLog log(s, "run");
    const MethodConfig mc = method_config(cfg, 0);
    const auto executor = [&](const std::vector<TrialTask>& tasks) {
      return run_parallel(
          tasks, s.jobs,
          [&](const TrialTask& t) {
            return run_trial(data, t.scenario, mc, cfg.backbones[0], cfg.train, t.hyperparams, t.seed);
          },
          [&](const TrialTask& t, const TrialRecord& r) { log.record(t, r, 0, 0); });
    };
    const SelectionResult result = model_selection(val, eval, selection_config(cfg, 0), executor);
    if (!s.quiet && search) {
      std::cout << "selected configuration " << result.best_index << " (validation H "
                << format_fixed(result.val_means[result.best_index]) << "):";
      for (const auto& [k, v] : result.best) std::cout << ' ' << k << '=' << v;
      std::cout << '\n';
    }
    write_tables(s.out_dir, build_run_table(log.trials()), s.quiet);
    return static_cast<int>(kExitOk);
  });
}

int cmd_matrix(const CommandOptions& options) {
  return guarded([&] {
    Session s = open_session(options);
    const RunConfig& cfg = s.config;
    const Dataset data = load_config_dataset(cfg);
    const bool search = !cfg.space.empty();
    const auto [val, eval] = pick_scenarios(cfg, data.meta, search);
    TrialLog log(s, "matrix");
    const std::size_t n_backbones = cfg.backbones.size();
    const auto run_cells = [&](const std::vector<TrialTask>& tasks) {
      return run_parallel(
          tasks, s.jobs,
          [&](const TrialTask& t) {
            const std::size_t m = t.cell_index / n_backbones, b = t.cell_index % n_backbones;
            return run_trial(data, t.scenario, method_config(cfg, m), cfg.backbones[b], cfg.train, t.hyperparams,
                             t.seed);
          },
          [&](const TrialTask& t, const TrialRecord& r) {
            log.record(t, r, t.cell_index / n_backbones, t.cell_index % n_backbones);
          });
    };
    if (!search) {
      std::vector<TrialTask> tasks;
      for (std::size_t m = 0; m < cfg.methods.size(); ++m) {
        const Hyperparams hp = cfg.hyperparams_for(cfg.methods[m]);
        for (std::size_t b = 0; b < n_backbones; ++b)
          for (std::size_t sc = 0; sc < eval.size(); ++sc)
            for (std::size_t k = 0; k < cfg.seeds.size(); ++k)
              tasks.push_back({"eval", 0, sc, k, m * n_backbones + b, eval[sc], hp, cfg.seeds[k]});
      }
      run_cells(tasks);
    } else {
      for (std::size_t cell = 0; cell < cfg.methods.size() * n_backbones; ++cell) {
        const auto executor = [&](const std::vector<TrialTask>& tasks) {
          std::vector<TrialTask> tagged = tasks;
          for (auto& t : tagged) t.cell_index = cell;
          return run_cells(tagged);
        };
        model_selection(val, eval, selection_config(cfg, cell / n_backbones), executor);
      }
    }
    write_tables(s.out_dir, build_matrix_table(log.trials()), s.quiet);
    return static_cast<int>(kExitOk);
  });
}

int cmd_report(const fs::path& log_dir, const std::optional<fs::path>& out_dir, bool quiet) {
  return guarded([&] {
    const fs::path log_path = log_dir / "trials.jsonl";
    std::ifstream in(log_path);
    if (!in) throw ConfigError("no trial log at " + log_path.string());
    std::vector<std::string> order;
    std::map<std::string, std::vector<LoggedTrial>> runs;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      LoggedTrial t = parse_json_line(line, n);
      if (!runs.count(t.run_id)) order.push_back(t.run_id);
      runs[t.run_id].push_back(std::move(t));
    }
    std::size_t written = 0;
    for (const auto& id : order) {
      const auto& trials = runs[id];
      if (std::none_of(trials.begin(), trials.end(), [](const LoggedTrial& t) { return t.phase == "eval"; }))
        continue;
      const ResultTable table =
          trials.front().command == "matrix" ? build_matrix_table(trials) : build_run_table(trials);
      write_tables(out_dir.value_or(log_dir) / "report" / id, table, quiet);
      ++written;
    }
    if (written == 0) throw ConfigError("trial log " + log_path.string() + " holds no evaluation trials");
    return static_cast<int>(kExitOk);
  });
}

}  // namespace unida
