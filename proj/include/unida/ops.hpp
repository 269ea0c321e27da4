#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "unida/rng.hpp"
#include "unida/tensor.hpp"

// Differentiable operations on Tensor. Axis arguments accept negative values
// counted from the end; an axis outside the tensor rank raises DimensionError.
namespace unida {

// Elementwise binary ops with numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double offset);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& x) { return neg(x); }
inline Tensor operator*(const Tensor& x, double s) { return scale(x, s); }
inline Tensor operator*(double s, const Tensor& x) { return scale(x, s); }
inline Tensor operator+(const Tensor& x, double s) { return add_scalar(x, s); }
inline Tensor operator-(const Tensor& x, double s) { return add_scalar(x, -s); }

Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor square(const Tensor& x);
Tensor relu(const Tensor& x);
/// Exact GELU, x * Phi(x).
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

Tensor softmax(const Tensor& x, int axis);
Tensor log_softmax(const Tensor& x, int axis);

/// Normalizes over the last axis. gamma/beta, when defined, have the size of
/// the last axis.
Tensor layer_norm(const Tensor& x, double eps = 1e-8);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-8);

/// a: [..., n, k], b: [k, m] -> [..., n, m].
Tensor matmul(const Tensor& a, const Tensor& b);
/// x: [..., in], weight: [out, in], bias: [out] or undefined -> [..., out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, int axis, bool keepdim = false);
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, int axis, bool keepdim = false);

Tensor concat(std::span<const Tensor> parts, int axis);
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& order);
Tensor transpose(const Tensor& x, int axis0, int axis1);
Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length);
/// Gathers entries along an axis; repeated indices accumulate gradient.
Tensor index_select(const Tensor& x, int axis, std::span<const std::size_t> indices);
/// x: [B, C], out[b] = x[b, indices[b]].
Tensor pick(const Tensor& x, std::span<const int> indices);
/// Right-pads an axis with zeros up to new_length.
Tensor pad_to(const Tensor& x, int axis, std::size_t new_length);

/// Inverted dropout: scales kept units by 1/(1-rate) so evaluation is a no-op.
Tensor dropout(const Tensor& x, double rate, bool train, Rng& rng);

/// input [B, Cin, T], weight [Cout, Cin, k], bias [Cout] or undefined.
/// Output length floor((T + 2*padding - k) / stride) + 1.
Tensor conv1d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride = 1,
              std::size_t padding = 0);

/// Identity forward; backward multiplies the upstream gradient by -lambda.
Tensor gradient_reversal(const Tensor& x, double lambda);

/// Mean cross-entropy of logits [B, C] against integer class labels.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);
/// Mean binary cross-entropy of logits against targets in [0, 1].
Tensor binary_cross_entropy_with_logits(const Tensor& logits, std::span<const double> targets);

/// a [n, k], b [m, k] -> [n, m] squared Euclidean distances.
Tensor pairwise_sq_dist(const Tensor& a, const Tensor& b);
Tensor l2_normalize(const Tensor& x, int axis, double eps = 1e-12);

/// Radius below which a complex coefficient is treated as the origin by
/// magnitude() and phase(): its angle is 0 and both gradients are zeroed.
inline constexpr double kPolarGuard = 1e-8;
Tensor magnitude(const Tensor& re, const Tensor& im);
Tensor phase(const Tensor& re, const Tensor& im);

}  // namespace unida
