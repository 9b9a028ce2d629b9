#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace adanode {

// Dense row-major array of doubles. Rank is 1 or 2; a rank-1 tensor of n
// elements behaves as a 1 x n row wherever a matrix is expected. Scalars are
// shape {1}.
class Tensor {
 public:
  using Shape = std::vector<std::size_t>;

  Tensor() : shape_{1}, data_(1, 0.0) {}

  // Validates shape/data agreement and that every entry is finite.
  Tensor(Shape shape, std::vector<double> data);

  // Same as the constructor but skips the finiteness check. Used for
  // intermediate results, where non-finite values must be observable so that
  // callers (the ODE solvers) can report divergence.
  static Tensor unchecked(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape);
  static Tensor filled(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor identity(std::size_t n);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t rows() const noexcept { return shape_.size() == 2 ? shape_[0] : 1; }
  std::size_t cols() const noexcept { return shape_.back(); }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }

  // Scalar value of a single-element tensor.
  double item() const;

  bool all_finite() const noexcept;
  Tensor reshaped(Shape shape) const;
  Tensor row(std::size_t r) const;

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Tensor(Shape shape, std::vector<double> data, bool check_finite);

  Shape shape_;
  std::vector<double> data_;
};

std::size_t shape_size(const Tensor::Shape& shape);
std::string shape_string(const Tensor::Shape& shape);

}  // namespace adanode
