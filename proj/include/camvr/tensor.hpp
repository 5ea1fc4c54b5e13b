#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace camvr {

struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape &shape);
std::size_t shape_size(const Shape &shape);

// Dense row-major array of doubles. A default-constructed tensor is the empty
// placeholder (rank 0, no data); every other tensor has positive extents.
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor row(std::initializer_list<double> values);
  static Tensor scalar(double v) { return Tensor({1, 1}, v); }

  const Shape &shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Rank-2 helpers.
  std::size_t rows() const;
  std::size_t cols() const;
  double &at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  double &operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double> &storage() { return data_; }
  const std::vector<double> &storage() const { return data_; }

  Tensor reshaped(Shape shape) const;
  bool all_finite() const;

  // Bitwise equality of shape and contents.
  friend bool operator==(const Tensor &a, const Tensor &b) = default;

private:
  Shape shape_;
  std::vector<double> data_;
};

double max_abs_diff(const Tensor &a, const Tensor &b);

} // namespace camvr
