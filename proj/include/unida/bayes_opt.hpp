#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "unida/rng.hpp"

namespace unida {

/// Hyperparameter assignment by name. Categorical parameters hold one of
/// their numeric choices.
using Hyperparams = std::map<std::string, double>;

struct ParamDomain {
  enum class Kind { Continuous, Categorical };

  std::string name;
  Kind kind = Kind::Continuous;
  double lo = 0.0;
  double hi = 1.0;
  bool log_scale = false;
  std::vector<double> choices;

  static ParamDomain continuous(std::string name, double lo, double hi, bool log_scale = false);
  static ParamDomain categorical(std::string name, std::vector<double> choices);
};

struct SearchSpace {
  std::vector<ParamDomain> params;

  bool empty() const { return params.empty(); }
  /// Throws ConfigError on lo >= hi, non-positive log bounds, empty or
  /// duplicate names, or empty categorical lists.
  void validate() const;
  bool contains(const Hyperparams& hp) const;
};

struct Observation {
  Hyperparams params;
  double score = 0.0;
};

struct BayesOptions {
  std::size_t initial_points = 10;
  std::size_t candidates = 1000;
  double exploration = 0.01;
};

/// Next point to evaluate. The first `initial_points` suggestions follow a
/// randomly shifted Halton sequence (the shift is fixed by the generator's
/// key); later ones maximize Expected Improvement of a Matern-5/2 Gaussian
/// process fitted to the history, over random candidates drawn from `rng`.
/// Continuous inputs are scaled to [0, 1] (log-scaled when requested),
/// categorical ones one-hot encoded. Throws ContractError on an empty space.
Hyperparams bayes_suggest(std::span<const Observation> history, const SearchSpace& space, Rng& rng,
                          const BayesOptions& options = {});

/// Radical inverse of `index` in base `base`.
double radical_inverse(std::size_t index, std::size_t base);

}  // namespace unida
