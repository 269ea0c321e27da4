#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include "unida/tensor.hpp"

namespace unida {

/// Number of non-redundant bins of a length-n real transform.
constexpr std::size_t rfft_bins(std::size_t n) { return n / 2 + 1; }

/// Unnormalized forward transform of one real row: out[f] = sum_t x[t] e^{-2 pi i f t / n}.
void rfft_row(std::span<const double> x, std::span<std::complex<double>> out);
/// Inverse of rfft_row including the 1/n factor. Imaginary parts of the DC and
/// Nyquist bins are ignored.
void irfft_row(std::span<const std::complex<double>> spectrum, std::span<double> out);

/// Real FFT over the last axis: [..., T] -> [..., T/2 + 1]. Differentiable;
/// the backward pass is the adjoint transform.
ComplexTensor fft_rfft(const Tensor& x);
/// Inverse real FFT over the last axis: [..., F] -> [..., length]. Requires
/// F == length/2 + 1.
Tensor fft_irfft(const ComplexTensor& spectrum, std::size_t length);

}  // namespace unida
