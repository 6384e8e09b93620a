#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "tegu/error.hpp"

namespace tegu {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& s);

// Dense row-major array of 64-bit floats. All compute runs in doubles;
// 32-bit values appear only inside checkpoint serialization.
class DenseArray {
public:
  DenseArray() = default;
  explicit DenseArray(Shape shape);
  DenseArray(Shape shape, std::vector<double> data);

  static DenseArray zeros(Shape shape) { return DenseArray(std::move(shape)); }
  static DenseArray full(Shape shape, double value);
  static DenseArray of(std::initializer_list<double> values);  // 1-D literal

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  std::size_t extent(std::size_t axis) const;

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // 2-D accessors; bounds are the caller's responsibility.
  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

  std::size_t rows() const { return shape_.at(0); }
  std::size_t cols() const { return shape_.at(1); }

  bool same_shape(const DenseArray& other) const { return shape_ == other.shape_; }

  // Throws ValueError naming the first non-finite index, if any.
  void require_finite(const std::string& context) const;

  void fill(double value);

private:
  Shape shape_;
  std::vector<double> data_;
};

// Throws ShapeError naming both shapes unless they match.
void require_same_shape(const DenseArray& a, const DenseArray& b, const std::string& op);

std::size_t shape_numel(const Shape& s);

}  // namespace tegu
