#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace famt {

using Dims = std::vector<std::size_t>;

std::string dims_to_string(const Dims& dims);
std::size_t dims_product(const Dims& dims);

// Dense row-major array of doubles. Plain value type: gradient tracking
// lives in the autograd layer (see autograd.hpp), not here.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Dims dims, double fill = 0.0);
  Tensor(Dims dims, std::vector<double> data);

  // 2-D convenience constructor: matrix(2, 2, {1, 2, 3, 4}).
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::initializer_list<double> values);
  static Tensor row(std::span<const double> values);
  static Tensor scalar(double value);

  const Dims& dims() const { return dims_; }
  std::size_t rank() const { return dims_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Leading dimension and the product of the rest; a rank-1 tensor is one row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* ptr() { return data_.data(); }
  const double* ptr() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  double item() const;
  void fill(double value);
  Tensor reshaped(Dims dims) const;

  // Elementwise this += other (same size).
  void add_(const Tensor& other, double scale = 1.0);

  bool same_shape(const Tensor& other) const { return dims_ == other.dims_; }
  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Dims dims_;
  std::vector<double> data_;
};

double max_abs_diff(const Tensor& a, const Tensor& b);
double frobenius_norm(const Tensor& t);

}  // namespace famt
