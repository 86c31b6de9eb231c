#include "memdpc/core/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "memdpc/core/error.hpp"

namespace memdpc {

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(static_cast<std::size_t>(numel(shape_)), fill) {
  for (auto d : shape_) {
    if (d < 0) fail(ErrorKind::ShapeMismatch, "negative dimension in " + shape_str(shape_));
  }
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(values.begin(), values.end()) {
  if (numel(shape_) != static_cast<std::int64_t>(data_.size())) {
    fail(ErrorKind::ShapeMismatch, "value count " + std::to_string(data_.size()) +
                                       " does not match shape " + shape_str(shape_));
  }
}

std::int64_t Tensor::dim(int axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank()) {
    fail(ErrorKind::ShapeMismatch, "axis out of range for shape " + shape_str(shape_));
  }
  return shape_[static_cast<std::size_t>(axis)];
}

std::int64_t Tensor::offset(std::initializer_list<std::int64_t> index) const {
  if (static_cast<int>(index.size()) != rank()) {
    fail(ErrorKind::ShapeMismatch, "index rank does not match " + shape_str(shape_));
  }
  std::int64_t off = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    off = off * shape_[axis] + i;
    ++axis;
  }
  return off;
}

double& Tensor::at(std::initializer_list<std::int64_t> index) {
  return data_[static_cast<std::size_t>(offset(index))];
}

double Tensor::at(std::initializer_list<std::int64_t> index) const {
  return data_[static_cast<std::size_t>(offset(index))];
}

Tensor Tensor::reshaped(Shape shape) const& {
  Tensor copy = *this;
  return std::move(copy).reshaped(std::move(shape));
}

Tensor Tensor::reshaped(Shape shape) && {
  if (numel(shape) != size()) {
    fail(ErrorKind::ShapeMismatch,
         "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  shape_ = std::move(shape);
  return std::move(*this);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::add_(const Tensor& other) {
  if (other.size() != size()) {
    fail(ErrorKind::ShapeMismatch,
         "add_: " + shape_str(shape_) + " vs " + shape_str(other.shape_));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Tensor::item() const {
  if (data_.size() != 1) fail(ErrorKind::ShapeMismatch, "item() on " + shape_str(shape_));
  return data_[0];
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace memdpc
