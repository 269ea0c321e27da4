#include "unida/protocol.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <thread>

#include "unida/error.hpp"

namespace unida {

namespace {

std::vector<int> without(std::size_t n_classes, int removed) {
  std::vector<int> out;
  for (int c = 0; c < static_cast<int>(n_classes); ++c)
    if (c != removed) out.push_back(c);
  return out;
}

std::vector<int> set_difference_of(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<int> out;
  std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

bool contains(const std::vector<int>& sorted, int v) { return std::binary_search(sorted.begin(), sorted.end(), v); }

/// Rows of `data` whose label is in `classes`.
TimeSeriesDataset restrict_to(const TimeSeriesDataset& data, const std::vector<int>& classes) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < data.n; ++i)
    if (contains(classes, data.labels[i])) keep.push_back(i);
  return data.subset(keep);
}

bool all_finite(const LossBreakdown& b) {
  return std::isfinite(b.total) && std::isfinite(b.cls_loss) && std::isfinite(b.align_loss) &&
         std::isfinite(b.aux_loss);
}

Batch make_batch(const TimeSeriesDataset& data, std::span<const std::size_t> rows, std::span<const int> labels) {
  Batch b;
  b.indices.assign(rows.begin(), rows.end());
  b.x = data.gather(b.indices);
  b.labels.reserve(rows.size());
  for (std::size_t r : rows) b.labels.push_back(labels[r]);
  return b;
}

std::uint64_t task_seed(std::uint64_t seed, std::string_view phase, std::size_t a, std::size_t b) {
  Rng r = Rng(seed).derive(phase).derive(static_cast<std::uint64_t>(a)).derive(static_cast<std::uint64_t>(b));
  return r();
}

}  // namespace

std::string DomainScenario::name() const {
  return source_id + "->" + target_id + "/s" + std::to_string(removed_source_class) + "/t" +
         std::to_string(removed_target_class);
}

DomainScenario build_scenario(const DatasetMeta& meta, const std::string& source_id, const std::string& target_id,
                              int removed_source_class, int removed_target_class) {
  const auto known = [&](const std::string& id) {
    return std::find(meta.domains.begin(), meta.domains.end(), id) != meta.domains.end();
  };
  if (!known(source_id)) throw ContractError("unknown source domain '" + source_id + "'");
  if (!known(target_id)) throw ContractError("unknown target domain '" + target_id + "'");
  if (source_id == target_id) throw ContractError("source and target domain must differ");
  const int n = static_cast<int>(meta.n_classes);
  for (int c : {removed_source_class, removed_target_class})
    if (c < 0 || c >= n) throw ContractError("removed class " + std::to_string(c) + " is not a label");
  if (removed_source_class == removed_target_class)
    throw ContractError("removing the same class from both domains leaves no private classes");

  DomainScenario s;
  s.source_id = source_id;
  s.target_id = target_id;
  s.removed_source_class = removed_source_class;
  s.removed_target_class = removed_target_class;
  s.source_classes = without(meta.n_classes, removed_source_class);
  s.target_classes = without(meta.n_classes, removed_target_class);
  std::set_intersection(s.source_classes.begin(), s.source_classes.end(), s.target_classes.begin(),
                        s.target_classes.end(), std::back_inserter(s.common_set));
  s.source_private_set = set_difference_of(s.source_classes, s.target_classes);
  s.target_private_set = set_difference_of(s.target_classes, s.source_classes);
  return s;
}

TargetSplit split_target(std::span<const int> labels, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ContractError("split ratio must lie in (0, 1)");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  Rng root = Rng(seed).derive("target-split");
  TargetSplit split;
  for (auto& [label, rows] : by_class) {
    if (rows.size() < 2)
      throw ContractError("class " + std::to_string(label) + " has fewer than 2 samples and cannot be stratified");
    Rng rng = root.derive(static_cast<std::uint64_t>(static_cast<std::int64_t>(label)));
    const auto perm = random_permutation(rows.size(), rng);
    const auto n = static_cast<double>(rows.size());
    const auto n_train = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(ratio * n)), 1,
                                                 rows.size() - 1);
    for (std::size_t k = 0; k < rows.size(); ++k) (k < n_train ? split.train : split.test).push_back(rows[perm[k]]);
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

double harmonic_h(double a_common, double a_unknown) {
  const double s = a_common + a_unknown;
  return s > 0.0 ? 2.0 * a_common * a_unknown / s : 0.0;
}

HScoreReport h_score(std::span<const int> predictions, std::span<const int> true_labels,
                     const DomainScenario& scenario) {
  if (predictions.size() != true_labels.size())
    throw ContractError("h_score: " + std::to_string(predictions.size()) + " predictions for " +
                        std::to_string(true_labels.size()) + " labels");
  if (scenario.common_set.empty() || scenario.target_private_set.empty())
    throw ContractError("h_score needs non-empty common and target-private label sets");
  HScoreReport r;
  std::size_t correct_common = 0, correct_unknown = 0;
  for (std::size_t i = 0; i < true_labels.size(); ++i) {
    const int y = true_labels[i];
    if (contains(scenario.common_set, y)) {
      ++r.n_common;
      if (predictions[i] == y) ++correct_common;
    } else if (contains(scenario.target_private_set, y)) {
      ++r.n_unknown;
      if (predictions[i] == kUnknown) ++correct_unknown;
    } else {
      throw ContractError("label " + std::to_string(y) + " is not in the target label set");
    }
  }
  if (r.n_common == 0) throw ContractError("h_score: no common-class samples in the evaluation set");
  if (r.n_unknown == 0) throw ContractError("h_score: no target-private samples in the evaluation set");
  r.a_common = static_cast<double>(correct_common) / static_cast<double>(r.n_common);
  r.a_unknown = static_cast<double>(correct_unknown) / static_cast<double>(r.n_unknown);
  r.h_score = harmonic_h(r.a_common, r.a_unknown);
  return r;
}

HScoreReport random_baseline(const DomainScenario& scenario, std::size_t n_samples, Rng& rng) {
  if (scenario.target_classes.empty() || scenario.source_classes.empty())
    throw ContractError("random_baseline needs non-empty label sets");
  std::vector<int> truth(n_samples), pred(n_samples);
  const std::size_t n_choices = scenario.source_classes.size() + 1;
  for (std::size_t i = 0; i < n_samples; ++i) {
    truth[i] = scenario.target_classes[rng.below(scenario.target_classes.size())];
    const std::size_t k = rng.below(n_choices);
    pred[i] = k < scenario.source_classes.size() ? scenario.source_classes[k] : kUnknown;
  }
  return h_score(pred, truth, scenario);
}

void apply_hyperparams(const Hyperparams& hp, MethodConfig& m, TrainConfig& t) {
  const auto count = [](double v, const std::string& name) {
    if (!(v >= 1.0) || v != std::floor(v)) throw ConfigError("hyperparameter '" + name + "' must be a positive integer");
    return static_cast<std::size_t>(v);
  };
  for (const auto& [name, v] : hp) {
    if (name == "lr") m.lr = v;
    else if (name == "weight_decay") m.weight_decay = v;
    else if (name == "lambda_align") m.lambda_align = v;
    else if (name == "lambda_aux") m.lambda_aux = v;
    else if (name == "gamma") m.unijdot_gamma = v;
    else if (name == "epsilon") m.ot_epsilon = v;
    else if (name == "mass") m.ot_mass = v;
    else if (name == "momentum") m.prototype_momentum = v;
    else if (name == "alpha") m.unijdot_alpha = v;
    else if (name == "beta") m.unijdot_beta = v;
    else if (name == "dance_temperature") m.dance_temperature = v;
    else if (name == "dance_separation_margin") m.dance_separation_margin = v;
    else if (name == "batch_size") t.batch_size = count(v, name);
    else if (name == "epochs") t.epochs = count(v, name);
    else if (name == "threshold") {
      switch (m.kind) {
        case MethodKind::Uan: m.uan_threshold = v; break;
        case MethodKind::Ovanet: m.ovanet_threshold = v; break;
        case MethodKind::Dance: m.dance_margin = v; break;
        case MethodKind::Ppot: m.ppot_threshold = v; break;
        case MethodKind::Uniot: m.uniot_threshold = v; break;
        case MethodKind::Unijdot: m.unijdot_threshold = v; break;
      }
    } else {
      throw ConfigError("unknown hyperparameter '" + name + "'");
    }
  }
}

TrialData prepare_trial_data(const Dataset& data, const DomainScenario& scenario, double split_ratio,
                             std::uint64_t seed) {
  TrialData out;
  out.source = restrict_to(data.domain(scenario.source_id), scenario.source_classes);
  if (out.source.n == 0) throw ContractError("source domain has no samples of the source classes");
  const TimeSeriesDataset target = restrict_to(data.domain(scenario.target_id), scenario.target_classes);
  const TargetSplit split = split_target(target.labels, split_ratio, seed);
  out.target_train = target.subset(split.train);
  out.target_test = target.subset(split.test);

  const ChannelStats stats = channel_stats(out.source);
  normalize(out.source, stats);
  normalize(out.target_train, stats);
  normalize(out.target_test, stats);

  out.source_local.resize(out.source.n);
  for (std::size_t i = 0; i < out.source.n; ++i) {
    const auto it =
        std::lower_bound(scenario.source_classes.begin(), scenario.source_classes.end(), out.source.labels[i]);
    out.source_local[i] = static_cast<int>(it - scenario.source_classes.begin());
  }
  return out;
}

std::optional<std::string> train_method(UniDAMethod& method, const TrialData& data, const TrainConfig& train,
                                        std::uint64_t seed) {
  if (train.epochs == 0 || train.batch_size == 0) throw ConfigError("epochs and batch_size must be positive");
  const TimeSeriesDataset& source = data.source;
  const TimeSeriesDataset& target = data.target_train;
  const std::vector<int> no_labels(target.n, kUnknown);
  method.begin_training(source.tensor(), data.source_local, target.tensor());

  const Rng root = Rng(seed).derive("trial-order");
  const std::size_t bs = std::min(train.batch_size, source.n);
  const std::size_t bt = std::min(train.batch_size, target.n);
  const std::size_t steps = std::max<std::size_t>(1, source.n / bs);
  std::size_t target_pass = 0, target_pos = 0;
  Rng target_rng = root.derive("target").derive(target_pass);
  std::vector<std::size_t> target_order = random_permutation(target.n, target_rng);

  for (std::size_t epoch = 0; epoch < train.epochs; ++epoch) {
    Rng source_rng = root.derive("source").derive(epoch);
    const auto source_order = random_permutation(source.n, source_rng);
    for (std::size_t step = 0; step < steps; ++step) {
      std::span<const std::size_t> rows(source_order.data() + step * bs, bs);
      if (target_pos + bt > target.n) {
        ++target_pass;
        target_pos = 0;
        target_rng = root.derive("target").derive(target_pass);
        target_order = random_permutation(target.n, target_rng);
      }
      std::span<const std::size_t> trows(target_order.data() + target_pos, bt);
      target_pos += bt;
      const LossBreakdown b =
          method.train_step(make_batch(source, rows, data.source_local), make_batch(target, trows, no_labels));
      if (!all_finite(b))
        return "non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(step);
    }
  }
  return std::nullopt;
}

HScoreReport evaluate_method(UniDAMethod& method, const TrialData& data, const DomainScenario& scenario) {
  const PredictionBatch pred = method.detect(data.target_test.tensor());
  std::vector<int> global(pred.labels.size());
  for (std::size_t i = 0; i < global.size(); ++i)
    global[i] = pred.labels[i] == kUnknown ? kUnknown
                                           : scenario.source_classes.at(static_cast<std::size_t>(pred.labels[i]));
  return h_score(global, data.target_test.labels, scenario);
}

TrialRecord run_trial(const Dataset& data, const DomainScenario& scenario, MethodConfig method_cfg,
                      BackboneConfig backbone_cfg, const TrainConfig& train_cfg, const Hyperparams& hyperparams,
                      std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  TrialRecord record;
  record.hyperparams = hyperparams;
  record.seed = seed;
  record.scenario = scenario;

  TrainConfig train = train_cfg;
  apply_hyperparams(hyperparams, method_cfg, train);
  method_cfg.n_classes = scenario.source_classes.size();
  method_cfg.validate();
  backbone_cfg.in_channels = data.meta.n_channels;
  backbone_cfg.seq_len = data.meta.window_len;
  backbone_cfg.validate();
  if (train.epochs == 0 || train.batch_size == 0) throw ConfigError("epochs and batch_size must be positive");

  const TrialData prepared = prepare_trial_data(data, scenario, train.split_ratio, seed);
  auto method = make_method(method_cfg, backbone_cfg, seed);
  try {
    if (auto failure = train_method(*method, prepared, train, seed)) {
      record.failed = true;
      record.failure = std::move(*failure);
    } else {
      record.report = evaluate_method(*method, prepared, scenario);
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    record.failed = true;
    record.failure = e.what();
  }
  if (record.failed) record.report = HScoreReport{};
  record.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return record;
}

std::pair<std::vector<DomainScenario>, std::vector<DomainScenario>> select_scenarios(
    const DatasetMeta& meta, std::span<const ScenarioRequest> val_requests,
    std::span<const ScenarioRequest> eval_requests, std::size_t n_val, std::size_t n_eval, Rng& rng) {
  if (meta.domains.size() < 2) throw ConfigError("a dataset needs at least two domains");
  if (meta.n_classes < 2) throw ConfigError("a dataset needs at least two classes");

  const auto resolve = [&](const ScenarioRequest& req) {
    Rng pair_rng = rng.derive("removed-classes").derive(req.source_id + "->" + req.target_id);
    const int n = static_cast<int>(meta.n_classes);
    const int rs = req.removed_source_class.value_or(static_cast<int>(pair_rng.below(meta.n_classes)));
    int rt;
    if (req.removed_target_class) {
      rt = *req.removed_target_class;
    } else {
      rt = static_cast<int>(pair_rng.below(meta.n_classes - 1));
      if (rt >= rs && rs >= 0 && rs < n) ++rt;
    }
    return build_scenario(meta, req.source_id, req.target_id, rs, rt);
  };

  std::vector<ScenarioRequest> val(val_requests.begin(), val_requests.end());
  std::vector<ScenarioRequest> eval(eval_requests.begin(), eval_requests.end());
  if (val.empty() && eval.empty()) {
    std::vector<ScenarioRequest> pairs;
    for (const auto& s : meta.domains)
      for (const auto& t : meta.domains)
        if (s != t) pairs.push_back({s, t, std::nullopt, std::nullopt});
    if (n_val + n_eval > pairs.size())
      throw ConfigError("requested " + std::to_string(n_val + n_eval) + " scenarios but only " +
                        std::to_string(pairs.size()) + " ordered domain pairs exist");
    Rng pick = rng.derive("scenario-pairs");
    const auto perm = random_permutation(pairs.size(), pick);
    for (std::size_t k = 0; k < n_val + n_eval; ++k) (k < n_val ? val : eval).push_back(pairs[perm[k]]);
  } else if ((val.empty() && n_val > 0) || eval.empty()) {
    throw ConfigError("explicit scenarios need an evaluation list and, when n_val > 0, a validation list");
  }

  for (const auto& v : val)
    for (const auto& e : eval)
      if (v.source_id == e.source_id && v.target_id == e.target_id)
        throw ContractError("domain pair " + v.source_id + "->" + v.target_id +
                            " appears in both validation and evaluation scenarios");

  std::pair<std::vector<DomainScenario>, std::vector<DomainScenario>> out;
  for (const auto& r : val) out.first.push_back(resolve(r));
  for (const auto& r : eval) out.second.push_back(resolve(r));
  return out;
}

std::size_t argmax_earliest(std::span<const double> values) {
  if (values.empty()) throw ContractError("argmax of an empty list");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

std::pair<double, double> mean_std(std::span<const double> values) {
  if (values.empty()) return {0.0, 0.0};
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / (n - 1.0))};
}

SelectionResult model_selection(std::span<const DomainScenario> val, std::span<const DomainScenario> eval,
                                const SelectionConfig& cfg, const TrialExecutor& execute) {
  if (val.empty() || eval.empty()) throw ContractError("model selection needs validation and evaluation scenarios");
  if (cfg.eval_seeds.empty()) throw ContractError("model selection needs at least one evaluation seed");
  if (cfg.n_configs == 0) throw ContractError("model selection needs at least one configuration");
  for (const auto& v : val)
    for (const auto& e : eval)
      if (v.source_id == e.source_id && v.target_id == e.target_id)
        throw ContractError("validation and evaluation scenarios share the pair " + v.source_id + "->" +
                            v.target_id);
  if (!cfg.space.empty()) cfg.space.validate();

  SelectionResult result;
  std::vector<Observation> history;
  Rng bo_rng = Rng(cfg.seed).derive("bayes");
  for (std::size_t r = 0; r < cfg.n_configs; ++r) {
    Hyperparams hp = cfg.fixed;
    if (!cfg.space.empty())
      for (const auto& [k, v] : bayes_suggest(history, cfg.space, bo_rng)) hp[k] = v;
    std::vector<TrialTask> tasks;
    for (std::size_t s = 0; s < val.size(); ++s)
      tasks.push_back({"val", r, s, 0, 0, val[s], hp, task_seed(cfg.seed, "val", r, s)});
    const auto records = execute(tasks);
    std::vector<double> h;
    for (const auto& rec : records) h.push_back(rec.report.h_score);
    const double mean = mean_std(h).first;
    if (!cfg.space.empty()) {
      Hyperparams searched;
      for (const auto& p : cfg.space.params) searched[p.name] = hp.at(p.name);
      history.push_back({std::move(searched), mean});
    }
    result.configs.push_back(hp);
    result.val_means.push_back(mean);
    result.val_records.insert(result.val_records.end(), records.begin(), records.end());
  }
  result.best_index = argmax_earliest(result.val_means);
  result.best = result.configs[result.best_index];

  std::vector<TrialTask> tasks;
  for (std::size_t s = 0; s < eval.size(); ++s)
    for (std::size_t k = 0; k < cfg.eval_seeds.size(); ++k)
      tasks.push_back({"eval", result.best_index, s, k, 0, eval[s], result.best, cfg.eval_seeds[k]});
  result.eval_records = execute(tasks);

  std::vector<double> scenario_means;
  std::size_t k = 0;
  for (std::size_t s = 0; s < eval.size(); ++s) {
    ScenarioSummary summary;
    summary.scenario = eval[s];
    std::vector<double> h;
    for (std::size_t j = 0; j < cfg.eval_seeds.size(); ++j, ++k) {
      h.push_back(result.eval_records[k].report.h_score);
      if (result.eval_records[k].failed) ++summary.failures;
    }
    std::tie(summary.mean, summary.stddev) = mean_std(h);
    scenario_means.push_back(summary.mean);
    result.eval_summary.push_back(summary);
  }
  result.eval_mean = mean_std(scenario_means).first;
  return result;
}

std::vector<TrialRecord> run_parallel(const std::vector<TrialTask>& tasks, std::size_t jobs,
                                      const std::function<TrialRecord(const TrialTask&)>& run_one,
                                      const std::function<void(const TrialTask&, const TrialRecord&)>& on_record) {
  std::vector<TrialRecord> out(tasks.size());
  std::mutex lock;
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  const auto worker = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      try {
        TrialRecord rec = run_one(tasks[i]);
        std::lock_guard<std::mutex> guard(lock);
        if (on_record) on_record(tasks[i], rec);
        out[i] = std::move(rec);
      } catch (...) {
        std::lock_guard<std::mutex> guard(lock);
        if (!error) error = std::current_exception();
        next = tasks.size();
      }
    }
  };
  const std::size_t n_threads = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(1, tasks.size()));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (error) std::rethrow_exception(error);
  return out;
}

}  // namespace unida
