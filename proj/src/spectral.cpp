#include "famt/spectral.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "famt/errors.hpp"

namespace famt::spectral {
namespace {

bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// In-place iterative radix-2; sign = -1 forward, +1 inverse (unnormalized).
void radix2(std::vector<double>& re, std::vector<double>& im, int sign) {
  const std::size_t n = re.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      std::swap(re[i], re[j]);
      std::swap(im[i], im[j]);
    }
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = sign * 2.0 * std::numbers::pi / static_cast<double>(len);
    const std::size_t half = len / 2;
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < half; ++k) {
        // Twiddles computed directly rather than by recurrence to keep
        // rounding error flat in n.
        const double wr = std::cos(ang * static_cast<double>(k));
        const double wi = std::sin(ang * static_cast<double>(k));
        const std::size_t a = i + k, b = i + k + half;
        const double xr = re[b] * wr - im[b] * wi;
        const double xi = re[b] * wi + im[b] * wr;
        re[b] = re[a] - xr;
        im[b] = im[a] - xi;
        re[a] += xr;
        im[a] += xi;
      }
    }
  }
}

// Bluestein chirp-z: arbitrary n via a power-of-two circular convolution.
void bluestein(std::vector<double>& re, std::vector<double>& im, int sign) {
  const std::size_t n = re.size();
  std::size_t m = 1;
  while (m < 2 * n - 1) m <<= 1;

  std::vector<double> wr(n), wi(n);
  for (std::size_t k = 0; k < n; ++k) {
    // k^2 mod 2n keeps the angle argument small and exact.
    const std::size_t k2 = (k * k) % (2 * n);
    const double ang = sign * std::numbers::pi * static_cast<double>(k2) / static_cast<double>(n);
    wr[k] = std::cos(ang);
    wi[k] = std::sin(ang);
  }
  std::vector<double> ar(m, 0.0), ai(m, 0.0), br(m, 0.0), bi(m, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    ar[k] = re[k] * wr[k] - im[k] * wi[k];
    ai[k] = re[k] * wi[k] + im[k] * wr[k];
  }
  br[0] = wr[0];
  bi[0] = -wi[0];
  for (std::size_t k = 1; k < n; ++k) {
    br[k] = br[m - k] = wr[k];
    bi[k] = bi[m - k] = -wi[k];
  }
  radix2(ar, ai, -1);
  radix2(br, bi, -1);
  for (std::size_t k = 0; k < m; ++k) {
    const double r = ar[k] * br[k] - ai[k] * bi[k];
    const double i = ar[k] * bi[k] + ai[k] * br[k];
    ar[k] = r;
    ai[k] = i;
  }
  radix2(ar, ai, +1);
  const double inv_m = 1.0 / static_cast<double>(m);
  for (std::size_t k = 0; k < n; ++k) {
    const double cr = ar[k] * inv_m, ci = ai[k] * inv_m;
    re[k] = cr * wr[k] - ci * wi[k];
    im[k] = cr * wi[k] + ci * wr[k];
  }
}

ComplexVector transform(const ComplexVector& v, int sign) {
  if (v.re.size() != v.im.size()) {
    throw ShapeError("fft: re/im lengths differ (" + std::to_string(v.re.size()) + " vs " +
                     std::to_string(v.im.size()) + ")");
  }
  ComplexVector out = v;
  if (out.size() <= 1) return out;
  if (is_pow2(out.size())) {
    radix2(out.re, out.im, sign);
  } else {
    bluestein(out.re, out.im, sign);
  }
  return out;
}

}  // namespace

ComplexVector ComplexVector::from_real(std::span<const double> values) {
  ComplexVector c(values.size());
  std::copy(values.begin(), values.end(), c.re.begin());
  return c;
}

ComplexVector fft(const ComplexVector& v) { return transform(v, -1); }

ComplexVector ifft(const ComplexVector& v) {
  ComplexVector out = transform(v, +1);
  const double inv = out.size() == 0 ? 0.0 : 1.0 / static_cast<double>(out.size());
  for (std::size_t k = 0; k < out.size(); ++k) {
    out.re[k] *= inv;
    out.im[k] *= inv;
  }
  return out;
}

LowPassFilter gaussian_lowpass(std::size_t n, double sigma) {
  if (n == 0) throw ParameterError("gaussian_lowpass: n must be >= 1");
  if (!(sigma > 0.0)) {
    throw ParameterError("gaussian_lowpass: sigma must be > 0, got " + std::to_string(sigma));
  }
  LowPassFilter f{n, sigma, std::vector<double>(n)};
  for (std::size_t k = 0; k < n; ++k) {
    const auto fk = static_cast<double>(std::min(k, n - k));
    f.gains[k] = std::exp(-(fk * fk) / (2.0 * sigma * sigma));
  }
  return f;
}

double lowpass_norm(std::span<const double> x, const LowPassFilter& filter) {
  if (x.size() != filter.n) {
    throw ShapeError("lowpass_norm: signal length " + std::to_string(x.size()) +
                     " vs filter length " + std::to_string(filter.n));
  }
  ComplexVector spec = fft(ComplexVector::from_real(x));
  for (std::size_t k = 0; k < spec.size(); ++k) {
    spec.re[k] *= filter.gains[k];
    spec.im[k] *= filter.gains[k];
  }
  const ComplexVector back = ifft(spec);
  double s = 0.0;
  for (std::size_t k = 0; k < back.size(); ++k) s += back.re[k] * back.re[k] + back.im[k] * back.im[k];
  return std::sqrt(s);
}

}  // namespace famt::spectral
