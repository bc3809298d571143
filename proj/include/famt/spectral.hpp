#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace famt::spectral {

struct ComplexVector {
  std::vector<double> re;
  std::vector<double> im;

  ComplexVector() = default;
  explicit ComplexVector(std::size_t n) : re(n, 0.0), im(n, 0.0) {}
  static ComplexVector from_real(std::span<const double> values);

  std::size_t size() const { return re.size(); }
};

// Unnormalized forward DFT, X[k] = sum_t v[t] exp(-2 pi i k t / n).
// Powers of two use iterative radix-2; other lengths go through Bluestein.
ComplexVector fft(const ComplexVector& v);
// Inverse with 1/n normalization.
ComplexVector ifft(const ComplexVector& v);

// Symmetric Gaussian low-pass response over DFT bins:
// gains[k] = exp(-f_k^2 / (2 sigma^2)), f_k = min(k, n - k).
struct LowPassFilter {
  std::size_t n = 0;
  double sigma = 0.0;
  std::vector<double> gains;
};

LowPassFilter gaussian_lowpass(std::size_t n, double sigma);

// ||ifft(gains * fft(x))||_2 for a real signal x.
double lowpass_norm(std::span<const double> x, const LowPassFilter& filter);

}  // namespace famt::spectral
