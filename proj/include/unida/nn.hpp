#pragma once

#include <string>
#include <vector>

#include "unida/ops.hpp"
#include "unida/rng.hpp"
#include "unida/tensor.hpp"

namespace unida::nn {

/// Fully connected layer, weight [out, in], uniform(+-1/sqrt(in)) init.
struct Linear {
  Tensor weight;
  Tensor bias;

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true);

  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
  void collect(const std::string& prefix, std::vector<Parameter>& out) const;
  std::size_t in_features() const { return weight.dim(1); }
  std::size_t out_features() const { return weight.dim(0); }
};

/// 1D convolution layer, weight [out, in, kernel].
struct Conv1d {
  Tensor weight;
  Tensor bias;
  std::size_t stride = 1;
  std::size_t padding = 0;

  Conv1d() = default;
  Conv1d(std::size_t in, std::size_t out, std::size_t kernel, Rng& rng, std::size_t padding = 0,
         std::size_t stride = 1);

  Tensor operator()(const Tensor& x) const { return conv1d(x, weight, bias, stride, padding); }
  void collect(const std::string& prefix, std::vector<Parameter>& out) const;
  std::size_t kernel() const { return weight.dim(2); }
  std::size_t output_length(std::size_t t) const { return (t + 2 * padding - kernel()) / stride + 1; }
};

/// Layer normalization over the last axis with learned gain and shift.
struct LayerNorm {
  Tensor gamma;
  Tensor beta;
  double eps = 1e-8;

  LayerNorm() = default;
  explicit LayerNorm(std::size_t features);

  Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta, eps); }
  void collect(const std::string& prefix, std::vector<Parameter>& out) const;
};

/// Two-layer perceptron with ReLU, used for the small method heads.
struct Mlp {
  Linear hidden;
  Linear output;

  Mlp() = default;
  Mlp(std::size_t in, std::size_t width, std::size_t out, Rng& rng);

  Tensor operator()(const Tensor& x) const { return output(relu(hidden(x))); }
  void collect(const std::string& prefix, std::vector<Parameter>& out) const;
};

}  // namespace unida::nn
