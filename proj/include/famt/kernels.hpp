#pragma once

// Dense kernels on raw row-major buffers.
//
// Every kernel has a serial reference in namespace `serial` and a default
// version that splits output rows across OpenMP threads. The parallel
// versions compute each output element with exactly the same operation
// order as the serial ones, so results are bitwise identical for any
// thread count.

#include <cstddef>

#include "famt/tensor.hpp"

namespace famt::kernels {

// Products smaller than this many multiply-adds stay on the calling thread.
inline constexpr std::size_t kParallelThreshold = 1u << 16;

namespace serial {

// c (m x n) (+)= a (m x k) * b (k x n)
void matmul(const double* a, const double* b, double* c, std::size_t m,
            std::size_t k, std::size_t n, bool accumulate);
// c (m x n) (+)= a (m x k) * b^T, b is (n x k)
void matmul_nt(const double* a, const double* b, double* c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate);
// c (m x n) (+)= a^T * b, a is (k x m), b is (k x n)
void matmul_tn(const double* a, const double* b, double* c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate);

}  // namespace serial

void matmul(const double* a, const double* b, double* c, std::size_t m,
            std::size_t k, std::size_t n, bool accumulate);
void matmul_nt(const double* a, const double* b, double* c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate);
void matmul_tn(const double* a, const double* b, double* c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate);

// Row softmax in place with max subtraction.
void softmax_rows(double* x, std::size_t rows, std::size_t cols);

// Tensor-level wrappers with shape checking.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// Softmax along `axis` of an arbitrary-rank tensor.
Tensor softmax(const Tensor& x, std::size_t axis);

}  // namespace famt::kernels
