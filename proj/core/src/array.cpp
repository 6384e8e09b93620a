#include "tegu/array.hpp"

#include <cmath>
#include <sstream>

namespace tegu {

std::string shape_to_string(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << "]";
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) n *= e;
  return n;
}

DenseArray::DenseArray(Shape shape)
    : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {}

DenseArray::DenseArray(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size()) {
    throw ShapeError("DenseArray: shape " + shape_to_string(shape_) + " implies " +
                     std::to_string(shape_numel(shape_)) + " elements, got " +
                     std::to_string(data_.size()));
  }
}

DenseArray DenseArray::full(Shape shape, double value) {
  DenseArray a(std::move(shape));
  a.fill(value);
  return a;
}

DenseArray DenseArray::of(std::initializer_list<double> values) {
  return DenseArray({values.size()}, std::vector<double>(values));
}

std::size_t DenseArray::extent(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_to_string(shape_));
  }
  return shape_[axis];
}

void DenseArray::require_finite(const std::string& context) const {
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) {
      throw ValueError(context + ": non-finite value " + std::to_string(data_[i]) +
                       " at flat index " + std::to_string(i));
    }
  }
}

void DenseArray::fill(double value) {
  for (double& x : data_) x = value;
}

void require_same_shape(const DenseArray& a, const DenseArray& b, const std::string& op) {
  if (!a.same_shape(b)) {
    throw ShapeError(op + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
}

}  // namespace tegu
