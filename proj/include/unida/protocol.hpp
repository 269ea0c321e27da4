#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "unida/backbones.hpp"
#include "unida/bayes_opt.hpp"
#include "unida/data.hpp"
#include "unida/methods.hpp"
#include "unida/rng.hpp"

namespace unida {

/// Ordered domain pair with one class removed on each side.
struct DomainScenario {
  std::string source_id;
  std::string target_id;
  int removed_source_class = 0;
  int removed_target_class = 0;
  std::vector<int> source_classes;  // Y^s, ascending
  std::vector<int> target_classes;  // Y^t, ascending
  std::vector<int> common_set;
  std::vector<int> source_private_set;
  std::vector<int> target_private_set;

  /// "<source>-><target>/s<removed_source>/t<removed_target>"
  std::string name() const;
  bool operator==(const DomainScenario&) const = default;
};

/// Throws ContractError when the ids coincide or are unknown, a removed class
/// lies outside [0, n_classes), or both removed classes are equal.
DomainScenario build_scenario(const DatasetMeta& meta, const std::string& source_id, const std::string& target_id,
                              int removed_source_class, int removed_target_class);

struct TargetSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Stratified split: per class, round(ratio * n_c) samples (clamped to
/// [1, n_c - 1]) go to the training part. Index lists are ascending. Throws
/// ContractError for a ratio outside (0, 1) or a class with fewer than two
/// samples.
TargetSplit split_target(std::span<const int> labels, double ratio, std::uint64_t seed);

struct HScoreReport {
  double a_common = 0.0;
  double a_unknown = 0.0;
  double h_score = 0.0;
  std::size_t n_common = 0;
  std::size_t n_unknown = 0;
};

double harmonic_h(double a_common, double a_unknown);

/// `predictions` and `true_labels` use global class ids, kUnknown for
/// rejected samples. Throws ContractError on length mismatch, a true label
/// outside the target label set, or an empty common or private subset.
HScoreReport h_score(std::span<const int> predictions, std::span<const int> true_labels,
                     const DomainScenario& scenario);

/// Uniform predictions over Y^s and UNKNOWN for `n_samples` target samples
/// whose true labels are uniform over Y^t.
HScoreReport random_baseline(const DomainScenario& scenario, std::size_t n_samples, Rng& rng);

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  double split_ratio = 0.8;
};

/// Writes known hyperparameter names into the configs. Recognized names:
/// lr, weight_decay, lambda_align, lambda_aux, threshold (the method's own
/// detection threshold), dance_margin, dance_temperature, gamma, epsilon,
/// mass, momentum, alpha, beta, batch_size, epochs. Throws ConfigError on
/// any other name.
void apply_hyperparams(const Hyperparams& hp, MethodConfig& method, TrainConfig& train);

struct TrialRecord {
  Hyperparams hyperparams;
  std::uint64_t seed = 0;
  DomainScenario scenario;
  HScoreReport report;
  double wall_time = 0.0;
  bool failed = false;
  std::string failure;
};

/// Normalized tensors of one trial. Source labels are local ids
/// 0..|Y^s|-1; target labels stay global.
struct TrialData {
  TimeSeriesDataset source;
  std::vector<int> source_local;
  TimeSeriesDataset target_train;
  TimeSeriesDataset target_test;
};

/// Restricts both domains to their label sets, splits the target and
/// z-normalizes everything with the source channel statistics.
TrialData prepare_trial_data(const Dataset& data, const DomainScenario& scenario, double split_ratio,
                             std::uint64_t seed);

/// Runs `train.epochs` epochs of shuffled source batches paired with cycling
/// target batches. Returns an error message instead of throwing when the
/// loss becomes non-finite.
std::optional<std::string> train_method(UniDAMethod& method, const TrialData& data, const TrainConfig& train,
                                        std::uint64_t seed);

/// Detection on the target test split, mapped back to global labels.
HScoreReport evaluate_method(UniDAMethod& method, const TrialData& data, const DomainScenario& scenario);

/// Trains one method on (source, target-train) of `scenario` and scores it on
/// target-test. The source is z-normalized with its own channel statistics
/// and the same transform is applied to the target. Source classes are
/// mapped to local ids 0..|Y^s|-1 for training. A non-finite loss or a
/// numerical error inside the method marks the record failed with H = 0.
TrialRecord run_trial(const Dataset& data, const DomainScenario& scenario, MethodConfig method_cfg,
                      BackboneConfig backbone_cfg, const TrainConfig& train_cfg, const Hyperparams& hyperparams,
                      std::uint64_t seed);

/// Requests scenarios by explicit tuple; unset removed classes are drawn.
struct ScenarioRequest {
  std::string source_id;
  std::string target_id;
  std::optional<int> removed_source_class;
  std::optional<int> removed_target_class;
};

/// Resolves explicit requests, or samples `n_val + n_eval` ordered domain
/// pairs without replacement when both lists are empty. An explicit
/// validation list may be omitted when n_val is 0. Removed classes are
/// drawn per scenario from a stream keyed by the pair. Throws ConfigError
/// when too few pairs exist and ContractError when the lists share a pair.
std::pair<std::vector<DomainScenario>, std::vector<DomainScenario>> select_scenarios(
    const DatasetMeta& meta, std::span<const ScenarioRequest> val_requests,
    std::span<const ScenarioRequest> eval_requests, std::size_t n_val, std::size_t n_eval, Rng& rng);

/// Unit of parallel work.
struct TrialTask {
  std::string phase;  // "val" or "eval"
  std::size_t config_index = 0;
  std::size_t scenario_index = 0;
  std::size_t seed_index = 0;
  std::size_t cell_index = 0;  // caller-defined grouping, e.g. a matrix cell
  DomainScenario scenario;
  Hyperparams hyperparams;
  std::uint64_t seed = 0;
};

/// Executes tasks and returns records in task order.
using TrialExecutor = std::function<std::vector<TrialRecord>(const std::vector<TrialTask>&)>;

struct SelectionConfig {
  std::size_t n_configs = 10;  // N_r
  SearchSpace space;
  /// Values applied to every trial before the searched ones.
  Hyperparams fixed;
  std::vector<std::uint64_t> eval_seeds;
  std::uint64_t seed = 0;
};

struct ScenarioSummary {
  DomainScenario scenario;
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t failures = 0;
};

struct SelectionResult {
  std::vector<Hyperparams> configs;
  std::vector<double> val_means;
  std::size_t best_index = 0;
  Hyperparams best;
  std::vector<TrialRecord> val_records;
  std::vector<TrialRecord> eval_records;
  std::vector<ScenarioSummary> eval_summary;
  double eval_mean = 0.0;
};

/// Index of the largest value; the earliest wins on ties. Throws
/// ContractError on an empty list.
std::size_t argmax_earliest(std::span<const double> values);

/// Mean and sample standard deviation (0 for fewer than two values).
std::pair<double, double> mean_std(std::span<const double> values);

/// Runs `n_configs` configurations (fixed values when the space is empty,
/// otherwise Bayesian suggestions) on every validation scenario, picks the
/// best mean validation H-score and evaluates it on every evaluation
/// scenario for each seed. Throws ContractError when the scenario lists
/// share a domain pair or are empty, or when no seeds are given.
SelectionResult model_selection(std::span<const DomainScenario> val, std::span<const DomainScenario> eval,
                                const SelectionConfig& cfg, const TrialExecutor& execute);

/// Executes tasks on `jobs` worker threads; the result order is the task
/// order regardless of completion order. `on_record` is called under a lock
/// as each record finishes.
std::vector<TrialRecord> run_parallel(const std::vector<TrialTask>& tasks, std::size_t jobs,
                                      const std::function<TrialRecord(const TrialTask&)>& run_one,
                                      const std::function<void(const TrialTask&, const TrialRecord&)>& on_record = {});

}  // namespace unida
