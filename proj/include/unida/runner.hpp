#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "unida/backbones.hpp"
#include "unida/bayes_opt.hpp"
#include "unida/data.hpp"
#include "unida/methods.hpp"
#include "unida/protocol.hpp"

namespace unida {

/// Parsed experiment description. See README for the file schema.
struct RunConfig {
  std::string name = "experiment";
  std::optional<std::filesystem::path> dataset_path;  // empty path: $UNIDA_DATA_DIR
  std::optional<SyntheticSpec> synthetic;
  std::vector<MethodKind> methods;
  std::vector<BackboneConfig> backbones;
  std::vector<std::string> backbone_names;  // parallel to `backbones`, unique
  TrainConfig train;
  UanScore uan_score = UanScore::DomainEntropy;
  Hyperparams hyperparams;
  std::map<MethodKind, Hyperparams> method_hyperparams;
  SearchSpace space;
  std::size_t n_configs = 100;
  std::size_t n_val = 5;
  std::size_t n_eval = 5;
  std::vector<ScenarioRequest> val_scenarios;
  std::vector<ScenarioRequest> eval_scenarios;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::uint64_t seed = 0;
  std::filesystem::path out_dir = "results";
  std::size_t jobs = 1;

  /// Hyperparameters of one method: shared values overlaid with the
  /// method's own entries.
  Hyperparams hyperparams_for(MethodKind kind) const;
  /// Stable identifier: FNV-1a of the canonical configuration, excluding the
  /// output directory and the worker count.
  std::string run_id() const;
  /// Canonical JSON text of every setting that affects results.
  std::string canonical() const;
};

/// Parses configuration text. Unknown keys, wrong types and invalid values
/// raise ConfigError. Relative dataset paths resolve against `base_dir`.
RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir = {});
/// Reads and parses a file; a missing or unreadable file is a ConfigError.
RunConfig load_run_config(const std::filesystem::path& path);

/// Synthetic data or the dataset directory named by the config.
Dataset load_config_dataset(const RunConfig& config);

/// One line of the trial log.
struct LoggedTrial {
  std::string run_id;
  std::string command;  // "run" or "matrix"
  std::string phase;    // "val" or "eval"
  std::string method;
  std::string backbone;
  std::size_t method_index = 0;
  std::size_t backbone_index = 0;
  std::size_t config_index = 0;
  std::size_t scenario_index = 0;
  std::size_t seed_index = 0;
  std::string scenario_name;
  TrialRecord record;
};

std::string to_json_line(const LoggedTrial& trial);
/// Throws FormatError naming the line on malformed input.
LoggedTrial parse_json_line(const std::string& line, std::size_t line_number = 0);

struct ResultRow {
  std::string label;  // scenario name, or "Mean"
  std::string method;
  std::string backbone;
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t n_trials = 0;
  std::size_t failures = 0;
  std::size_t rank = 0;  // position within its method row (matrix only), 1 = best
};

struct ResultTable {
  std::string run_id;
  std::string command;
  std::vector<std::string> methods;
  std::vector<std::string> backbones;
  std::vector<ResultRow> rows;
};

/// Per-scenario mean and standard deviation over seeds plus a final "Mean"
/// row (mean of the scenario means; its spread is the standard deviation of
/// the per-seed averages over scenarios). Only evaluation trials are used.
ResultTable build_run_table(std::span<const LoggedTrial> trials);
/// One row per (method, backbone) cell, aggregated like the "Mean" row of a
/// run table, ranked within each method, followed by a per-backbone "Mean"
/// row over methods.
ResultTable build_matrix_table(std::span<const LoggedTrial> trials);

/// Comma-separated, dot decimal separator, four decimals.
std::string to_csv(const ResultTable& table);
/// Aligned plain-text rendering.
std::string to_text(const ResultTable& table);
/// Fixed-point rendering with `decimals` digits via std::to_chars.
std::string format_fixed(double value, int decimals = 4);

enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitRuntime = 3 };

struct CommandOptions {
  std::filesystem::path config;
  std::optional<std::filesystem::path> out_dir;
  std::optional<std::size_t> jobs;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

/// Model selection on one method and backbone; writes trials.jsonl,
/// results.csv and results.txt to the output directory.
int cmd_run(const CommandOptions& options);
/// Method x backbone grid with fixed hyperparameters (or per-cell selection
/// when the config has a search space).
int cmd_matrix(const CommandOptions& options);
/// Rebuilds tables from `log_dir`/trials.jsonl into
/// `<out>/report/<run_id>/results.{csv,txt}`.
int cmd_report(const std::filesystem::path& log_dir, const std::optional<std::filesystem::path>& out_dir = {},
               bool quiet = false);

}  // namespace unida
