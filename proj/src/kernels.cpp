#include "famt/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "famt/errors.hpp"

namespace famt::kernels {
namespace {

// Row kernels shared by the serial and the OpenMP drivers; each computes
// one output row so the per-element arithmetic never depends on threading.

inline void matmul_row(const double* a, const double* b, double* c_row,
                       std::size_t i, std::size_t k, std::size_t n,
                       bool accumulate) {
  if (!accumulate) std::memset(c_row, 0, n * sizeof(double));
  const double* a_row = a + i * k;
  for (std::size_t l = 0; l < k; ++l) {
    const double s = a_row[l];
    const double* b_row = b + l * n;
    for (std::size_t j = 0; j < n; ++j) c_row[j] += s * b_row[j];
  }
}

inline void matmul_nt_row(const double* a, const double* b, double* c_row,
                          std::size_t i, std::size_t k, std::size_t n,
                          bool accumulate) {
  const double* a_row = a + i * k;
  for (std::size_t j = 0; j < n; ++j) {
    const double* b_row = b + j * k;
    double s = 0.0;
    for (std::size_t l = 0; l < k; ++l) s += a_row[l] * b_row[l];
    c_row[j] = accumulate ? c_row[j] + s : s;
  }
}

inline void matmul_tn_row(const double* a, const double* b, double* c_row,
                          std::size_t i, std::size_t m, std::size_t k,
                          std::size_t n, bool accumulate) {
  if (!accumulate) std::memset(c_row, 0, n * sizeof(double));
  for (std::size_t l = 0; l < k; ++l) {
    const double s = a[l * m + i];
    if (s == 0.0) continue;
    const double* b_row = b + l * n;
    for (std::size_t j = 0; j < n; ++j) c_row[j] += s * b_row[j];
  }
}

inline bool worth_parallel(std::size_t m, std::size_t k, std::size_t n) {
  return m > 1 && m * k * n >= kParallelThreshold;
}

}  // namespace

namespace serial {

void matmul(const double* a, const double* b, double* c, std::size_t m,
            std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) matmul_row(a, b, c + i * n, i, k, n, accumulate);
}

void matmul_nt(const double* a, const double* b, double* c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) matmul_nt_row(a, b, c + i * n, i, k, n, accumulate);
}

void matmul_tn(const double* a, const double* b, double* c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) matmul_tn_row(a, b, c + i * n, i, m, k, n, accumulate);
}

}  // namespace serial

void matmul(const double* a, const double* b, double* c, std::size_t m,
            std::size_t k, std::size_t n, bool accumulate) {
  const auto rows = static_cast<long long>(m);
#pragma omp parallel for schedule(static) if (worth_parallel(m, k, n))
  for (long long i = 0; i < rows; ++i) {
    const auto r = static_cast<std::size_t>(i);
    matmul_row(a, b, c + r * n, r, k, n, accumulate);
  }
}

void matmul_nt(const double* a, const double* b, double* c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate) {
  const auto rows = static_cast<long long>(m);
#pragma omp parallel for schedule(static) if (worth_parallel(m, k, n))
  for (long long i = 0; i < rows; ++i) {
    const auto r = static_cast<std::size_t>(i);
    matmul_nt_row(a, b, c + r * n, r, k, n, accumulate);
  }
}

void matmul_tn(const double* a, const double* b, double* c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate) {
  const auto rows = static_cast<long long>(m);
#pragma omp parallel for schedule(static) if (worth_parallel(m, k, n))
  for (long long i = 0; i < rows; ++i) {
    const auto r = static_cast<std::size_t>(i);
    matmul_tn_row(a, b, c + r * n, r, m, k, n, accumulate);
  }
}

void softmax_rows(double* x, std::size_t rows, std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i) {
    double* row = x + i * cols;
    double mx = row[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    const double inv = 1.0 / sum;
    for (std::size_t j = 0; j < cols; ++j) row[j] *= inv;
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dims()[1] != b.dims()[0]) {
    throw ShapeError("matmul: incompatible operands " + dims_to_string(a.dims()) +
                     " and " + dims_to_string(b.dims()));
  }
  const std::size_t m = a.dims()[0], k = a.dims()[1], n = b.dims()[1];
  Tensor c({m, n});
  matmul(a.ptr(), b.ptr(), c.ptr(), m, k, n, false);
  return c;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) {
    throw ShapeError("transpose: expected a matrix, got " + dims_to_string(a.dims()));
  }
  const std::size_t m = a.dims()[0], n = a.dims()[1];
  Tensor t({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) t[j * m + i] = a[i * n + j];
  return t;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for " +
                     dims_to_string(x.dims()));
  }
  for (double v : x.data()) {
    if (!std::isfinite(v)) throw NumericError("softmax: non-finite input");
  }
  const auto& d = x.dims();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= d[i];
  for (std::size_t i = axis + 1; i < d.size(); ++i) inner *= d[i];
  const std::size_t len = d[axis];
  Tensor y = x;
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      double* base = y.ptr() + o * len * inner + in;
      double mx = base[0];
      for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, base[j * inner]);
      double sum = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        base[j * inner] = std::exp(base[j * inner] - mx);
        sum += base[j * inner];
      }
      for (std::size_t j = 0; j < len; ++j) base[j * inner] /= sum;
    }
  }
  return y;
}

}  // namespace famt::kernels
