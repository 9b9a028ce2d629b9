#include "adanode/tensor.hpp"

#include <cmath>
#include <sstream>

#include "adanode/errors.hpp"

namespace adanode {

std::size_t shape_size(const Tensor::Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Tensor::Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> data) : Tensor(std::move(shape), std::move(data), true) {}

Tensor::Tensor(Shape shape, std::vector<double> data, bool check_finite)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_.empty() || shape_.size() > 2) {
    throw DimensionError("tensor rank must be 1 or 2, got shape " + shape_string(shape_));
  }
  for (auto d : shape_) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape_));
  }
  if (shape_size(shape_) != data_.size()) {
    throw DimensionError("shape " + shape_string(shape_) + " needs " + std::to_string(shape_size(shape_)) +
                         " values, got " + std::to_string(data_.size()));
  }
  if (check_finite && !all_finite()) throw DomainError("tensor contains a non-finite value");
}

Tensor Tensor::unchecked(Shape shape, std::vector<double> data) {
  return Tensor(std::move(shape), std::move(data), false);
}

Tensor Tensor::zeros(Shape shape) { return filled(std::move(shape), 0.0); }

Tensor Tensor::filled(Shape shape, double value) {
  auto n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::vector(std::vector<double> values) {
  auto n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  std::size_t r = rows.size();
  std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> values;
  values.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged matrix literal");
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(values));
}

Tensor Tensor::identity(std::size_t n) {
  auto t = zeros({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

double Tensor::item() const {
  if (data_.size() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape_));
  return data_[0];
}

bool Tensor::all_finite() const noexcept {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Tensor(std::move(shape), data_, false);
}

Tensor Tensor::row(std::size_t r) const {
  if (r >= rows()) throw DimensionError("row index out of range");
  auto c = cols();
  return Tensor({c}, std::vector<double>(data_.begin() + r * c, data_.begin() + (r + 1) * c), false);
}

}  // namespace adanode
