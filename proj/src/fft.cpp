#include "unida/fft.hpp"

#include <fftw3.h>

#include <map>
#include <mutex>

#include "unida/error.hpp"

namespace unida {
namespace {

// FFTW planning is not thread-safe; execution with the new-array interface is.
class PlanCache {
 public:
  static PlanCache& instance() {
    static PlanCache cache;
    return cache;
  }

  std::pair<fftw_plan, fftw_plan> get(std::size_t n) {
    std::lock_guard lock(mutex_);
    auto it = plans_.find(n);
    if (it != plans_.end()) return it->second;
    const int len = static_cast<int>(n);
    std::vector<double> real(n);
    std::vector<std::complex<double>> spec(rfft_bins(n));
    auto* c = reinterpret_cast<fftw_complex*>(spec.data());
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    fftw_plan fwd = fftw_plan_dft_r2c_1d(len, real.data(), c, flags);
    fftw_plan inv = fftw_plan_dft_c2r_1d(len, c, real.data(), flags | FFTW_DESTROY_INPUT);
    return plans_[n] = {fwd, inv};
  }

  PlanCache(const PlanCache&) = delete;
  PlanCache& operator=(const PlanCache&) = delete;

  ~PlanCache() {
    for (auto& [n, p] : plans_) {
      fftw_destroy_plan(p.first);
      fftw_destroy_plan(p.second);
    }
  }

 private:
  PlanCache() = default;
  std::mutex mutex_;
  std::map<std::size_t, std::pair<fftw_plan, fftw_plan>> plans_;
};

// Adjoint of the forward real transform, used by both backward passes:
// dx[t] = sum_f gre[f] cos(2 pi f t / n) - gim[f] sin(2 pi f t / n).
void rfft_adjoint(std::span<const double> gre, std::span<const double> gim, std::span<double> out) {
  const std::size_t n = out.size();
  const std::size_t nf = gre.size();
  std::vector<std::complex<double>> c(nf);
  for (std::size_t f = 0; f < nf; ++f) {
    const bool edge = f == 0 || (n % 2 == 0 && f == nf - 1);
    const double w = edge ? 1.0 : 0.5;
    c[f] = {w * gre[f], w * gim[f]};
  }
  irfft_row(c, out);
  for (auto& v : out) v *= static_cast<double>(n);
}

}  // namespace

void rfft_row(std::span<const double> x, std::span<std::complex<double>> out) {
  const std::size_t n = x.size();
  if (n == 0 || out.size() != rfft_bins(n)) throw DimensionError("rfft_row: output must have n/2+1 bins");
  auto [fwd, inv] = PlanCache::instance().get(n);
  (void)inv;
  std::vector<double> in(x.begin(), x.end());
  fftw_execute_dft_r2c(fwd, in.data(), reinterpret_cast<fftw_complex*>(out.data()));
}

void irfft_row(std::span<const std::complex<double>> spectrum, std::span<double> out) {
  const std::size_t n = out.size();
  if (n == 0 || spectrum.size() != rfft_bins(n)) throw DimensionError("irfft_row: spectrum must have n/2+1 bins");
  auto [fwd, inv] = PlanCache::instance().get(n);
  (void)fwd;
  std::vector<std::complex<double>> buf(spectrum.begin(), spectrum.end());
  fftw_execute_dft_c2r(inv, reinterpret_cast<fftw_complex*>(buf.data()), out.data());
  const double s = 1.0 / static_cast<double>(n);
  for (auto& v : out) v *= s;
}

ComplexTensor fft_rfft(const Tensor& x) {
  if (x.rank() == 0 || x.shape().back() == 0) throw DimensionError("fft_rfft needs a non-empty last axis");
  const std::size_t n = x.shape().back();
  const std::size_t nf = rfft_bins(n);
  const std::size_t rows = x.numel() / n;
  std::vector<double> re(rows * nf), im(rows * nf);
  std::vector<std::complex<double>> spec(nf);
  for (std::size_t r = 0; r < rows; ++r) {
    rfft_row(x.values().subspan(r * n, n), spec);
    for (std::size_t f = 0; f < nf; ++f) {
      re[r * nf + f] = spec[f].real();
      im[r * nf + f] = spec[f].imag();
    }
  }
  Shape shape = x.shape();
  shape.back() = nf;
  auto backward_part = [n, nf, rows](bool imag_part) {
    return [n, nf, rows, imag_part](const detail::Node& self) {
      auto& g = self.parents[0]->grad_buffer();
      const std::vector<double> zero(nf, 0.0);
      std::vector<double> dx(n);
      for (std::size_t r = 0; r < rows; ++r) {
        std::span<const double> gpart(self.grad.data() + r * nf, nf);
        if (imag_part) {
          rfft_adjoint(zero, gpart, dx);
        } else {
          rfft_adjoint(gpart, zero, dx);
        }
        for (std::size_t t = 0; t < n; ++t) g[r * n + t] += dx[t];
      }
    };
  };
  ComplexTensor out;
  out.real = make_op(shape, std::move(re), {x}, backward_part(false));
  out.imag = make_op(shape, std::move(im), {x}, backward_part(true));
  return out;
}

Tensor fft_irfft(const ComplexTensor& spectrum, std::size_t length) {
  const Tensor& re = spectrum.real;
  const Tensor& im = spectrum.imag;
  if (re.shape() != im.shape()) throw DimensionError("fft_irfft: real/imag shape mismatch");
  if (re.rank() == 0 || length == 0) throw DimensionError("fft_irfft needs a non-empty last axis");
  const std::size_t nf = re.shape().back();
  if (nf != rfft_bins(length)) {
    throw DimensionError("fft_irfft: " + std::to_string(nf) + " bins inconsistent with length " +
                         std::to_string(length));
  }
  const std::size_t rows = re.numel() / nf;
  std::vector<double> out(rows * length);
  std::vector<std::complex<double>> spec(nf);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t f = 0; f < nf; ++f) spec[f] = {re.values()[r * nf + f], im.values()[r * nf + f]};
    irfft_row(spec, std::span<double>(out.data() + r * length, length));
  }
  Shape shape = re.shape();
  shape.back() = length;
  return make_op(std::move(shape), std::move(out), {re, im}, [length, nf, rows](const detail::Node& self) {
    // d re[f] = (w_f / n) Re(rfft(g))[f], d im[f] = (w_f / n) Im(rfft(g))[f],
    // with w_f = 1 on DC/Nyquist and 2 elsewhere.
    std::vector<std::complex<double>> gs(nf);
    const double inv_n = 1.0 / static_cast<double>(length);
    for (std::size_t r = 0; r < rows; ++r) {
      rfft_row(std::span<const double>(self.grad.data() + r * length, length), gs);
      for (std::size_t f = 0; f < nf; ++f) {
        const bool edge = f == 0 || (length % 2 == 0 && f == nf - 1);
        const double w = (edge ? 1.0 : 2.0) * inv_n;
        if (self.parents[0]->requires_grad) self.parents[0]->grad_buffer()[r * nf + f] += w * gs[f].real();
        if (self.parents[1]->requires_grad) {
          // Imaginary parts of DC and Nyquist do not influence the output.
          self.parents[1]->grad_buffer()[r * nf + f] += edge ? 0.0 : w * gs[f].imag();
        }
      }
    }
  });
}

}  // namespace unida
