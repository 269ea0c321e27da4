#include "unida/nn.hpp"

#include <cmath>

namespace unida::nn {

Linear::Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight = Tensor::uniform({out, in}, rng, -bound, bound, true);
  if (with_bias) bias = Tensor::uniform({out}, rng, -bound, bound, true);
}

void Linear::collect(const std::string& prefix, std::vector<Parameter>& out) const {
  out.push_back({prefix + ".weight", weight});
  if (bias.defined()) out.push_back({prefix + ".bias", bias});
}

Conv1d::Conv1d(std::size_t in, std::size_t out, std::size_t kernel, Rng& rng, std::size_t pad, std::size_t s)
    : stride(s), padding(pad) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in * kernel));
  weight = Tensor::uniform({out, in, kernel}, rng, -bound, bound, true);
  bias = Tensor::uniform({out}, rng, -bound, bound, true);
}

void Conv1d::collect(const std::string& prefix, std::vector<Parameter>& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

LayerNorm::LayerNorm(std::size_t features)
    : gamma(Tensor::full({features}, 1.0, true)), beta(Tensor::zeros({features}, true)) {}

void LayerNorm::collect(const std::string& prefix, std::vector<Parameter>& out) const {
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
}

Mlp::Mlp(std::size_t in, std::size_t width, std::size_t out, Rng& rng)
    : hidden(in, width, rng), output(width, out, rng) {}

void Mlp::collect(const std::string& prefix, std::vector<Parameter>& out) const {
  hidden.collect(prefix + ".hidden", out);
  output.collect(prefix + ".output", out);
}

}  // namespace unida::nn
