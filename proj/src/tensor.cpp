#include "camvr/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace camvr {

std::string to_string(const Shape &shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i)
      s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::size_t shape_size(const Shape &shape) {
  std::size_t n = 1;
  for (auto d : shape)
    n *= d;
  return n;
}

static void check_extents(const Shape &shape) {
  if (shape.empty())
    throw DimensionError("tensor shape must have rank >= 1");
  for (auto d : shape)
    if (d == 0)
      throw DimensionError("tensor extents must be positive, got " + to_string(shape));
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_extents(shape_);
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_extents(shape_);
  if (shape_size(shape_) != data_.size())
    throw DimensionError("shape " + to_string(shape_) + " needs " +
                         std::to_string(shape_size(shape_)) + " elements, got " +
                         std::to_string(data_.size()));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto &row : rows) {
    if (row.size() != c)
      throw DimensionError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

Tensor Tensor::row(std::initializer_list<double> values) {
  return Tensor({1, values.size()}, std::vector<double>(values));
}

std::size_t Tensor::rows() const {
  if (rank() != 2)
    throw DimensionError("expected a matrix, got shape " + to_string(shape_));
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2)
    throw DimensionError("expected a matrix, got shape " + to_string(shape_));
  return shape_[1];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != size())
    throw DimensionError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double max_abs_diff(const Tensor &a, const Tensor &b) {
  if (a.shape() != b.shape())
    throw DimensionError("max_abs_diff: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

} // namespace camvr
