#include "famt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "famt/errors.hpp"

namespace famt {

std::string dims_to_string(const Dims& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i != 0) os << 'x';
    os << dims[i];
  }
  os << ']';
  return os.str();
}

std::size_t dims_product(const Dims& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                         std::multiplies<>());
}

Tensor::Tensor(Dims dims, double fill)
    : dims_(std::move(dims)), data_(dims_product(dims_), fill) {}

Tensor::Tensor(Dims dims, std::vector<double> data)
    : dims_(std::move(dims)), data_(std::move(data)) {
  if (dims_product(dims_) != data_.size()) {
    throw ShapeError("tensor: dims " + dims_to_string(dims_) + " need " +
                     std::to_string(dims_product(dims_)) + " values, got " +
                     std::to_string(data_.size()));
  }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols,
                      std::initializer_list<double> values) {
  return Tensor({rows, cols}, std::vector<double>(values));
}

Tensor Tensor::row(std::span<const double> values) {
  return Tensor({1, values.size()},
                std::vector<double>(values.begin(), values.end()));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

std::size_t Tensor::rows() const { return dims_.size() <= 1 ? 1 : dims_[0]; }

std::size_t Tensor::cols() const {
  if (dims_.empty()) return 0;
  if (dims_.size() == 1) return dims_[0];
  return dims_[0] == 0 ? 0 : data_.size() / dims_[0];
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw ShapeError("item: tensor " + dims_to_string(dims_) + " is not a scalar");
  }
  return data_[0];
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

Tensor Tensor::reshaped(Dims dims) const {
  if (dims_product(dims) != data_.size()) {
    throw ShapeError("reshape: " + dims_to_string(dims_) + " -> " +
                     dims_to_string(dims));
  }
  return Tensor(std::move(dims), data_);
}

void Tensor::add_(const Tensor& other, double scale) {
  if (other.size() != size()) {
    throw ShapeError("add_: " + dims_to_string(dims_) + " vs " +
                     dims_to_string(other.dims_));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += scale * other.data_[i];
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) {
    throw ShapeError("max_abs_diff: " + dims_to_string(a.dims()) + " vs " +
                     dims_to_string(b.dims()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double frobenius_norm(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v * v;
  return std::sqrt(s);
}

}  // namespace famt
