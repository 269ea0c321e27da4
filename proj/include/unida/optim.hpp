#pragma once

#include <vector>

#include "unida/tensor.hpp"

namespace unida {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Adam with bias-corrected moments. Moment state is kept per parameter
/// position and persists across step() calls.
class Adam {
 public:
  explicit Adam(std::vector<Parameter> params, AdamOptions options = {});

  /// Applies one update. Throws ContractError if a parameter has no gradient.
  void step();
  /// Resets every parameter gradient to zeros.
  void zero_grad();

  const AdamOptions& options() const { return options_; }
  AdamOptions& options() { return options_; }
  std::size_t steps_taken() const { return t_; }
  const std::vector<Parameter>& parameters() const { return params_; }

 private:
  std::vector<Parameter> params_;
  AdamOptions options_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace unida
