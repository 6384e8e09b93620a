#include "tegu/ops.hpp"

#include <Eigen/Core>

#include <cmath>

namespace tegu {

namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<Mat>;
using ConstMatMap = Eigen::Map<const Mat>;

ConstMatMap as_matrix(const DenseArray& a) {
  if (a.rank() != 2) {
    throw ShapeError("expected a rank-2 array, got shape " + shape_to_string(a.shape()));
  }
  return ConstMatMap(a.data(), static_cast<Eigen::Index>(a.rows()),
                     static_cast<Eigen::Index>(a.cols()));
}

MatMap as_matrix(DenseArray& a) {
  return MatMap(a.data(), static_cast<Eigen::Index>(a.rows()),
                static_cast<Eigen::Index>(a.cols()));
}

}  // namespace

DenseArray matmul(const DenseArray& a, const DenseArray& b) {
  auto ma = as_matrix(a);
  auto mb = as_matrix(b);
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner extents differ, " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
  DenseArray c({a.rows(), b.cols()});
  as_matrix(c).noalias() = ma * mb;
  return c;
}

std::pair<DenseArray, DenseArray> matmul_backward(const DenseArray& grad_c, const DenseArray& a,
                                                  const DenseArray& b) {
  if (grad_c.rank() != 2 || grad_c.rows() != a.rows() || grad_c.cols() != b.cols()) {
    throw ShapeError("matmul_backward: upstream shape " + shape_to_string(grad_c.shape()) +
                     " does not match product of " + shape_to_string(a.shape()) + " and " +
                     shape_to_string(b.shape()));
  }
  DenseArray da(a.shape());
  DenseArray db(b.shape());
  as_matrix(da).noalias() = as_matrix(grad_c) * as_matrix(b).transpose();
  as_matrix(db).noalias() = as_matrix(a).transpose() * as_matrix(grad_c);
  return {std::move(da), std::move(db)};
}

DenseArray transpose(const DenseArray& a) {
  auto ma = as_matrix(a);
  DenseArray t({a.cols(), a.rows()});
  as_matrix(t) = ma.transpose();
  return t;
}

DenseArray embedding_lookup(const DenseArray& table, const std::vector<std::int32_t>& ids) {
  if (table.rank() != 2) {
    throw ShapeError("embedding_lookup: table must be rank 2, got " +
                     shape_to_string(table.shape()));
  }
  const std::size_t d = table.cols();
  DenseArray out({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto id = ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= table.rows()) {
      throw ValueError("embedding_lookup: id " + std::to_string(id) + " out of range [0, " +
                       std::to_string(table.rows()) + ") at position " + std::to_string(i));
    }
    const double* src = table.data() + static_cast<std::size_t>(id) * d;
    double* dst = out.data() + i * d;
    for (std::size_t j = 0; j < d; ++j) dst[j] = src[j];
  }
  return out;
}

DenseArray embedding_backward(const DenseArray& grad_out, const Shape& table_shape,
                              const std::vector<std::int32_t>& ids) {
  DenseArray dtable(table_shape);
  const std::size_t d = table_shape.at(1);
  if (grad_out.rank() != 2 || grad_out.rows() != ids.size() || grad_out.cols() != d) {
    throw ShapeError("embedding_backward: upstream shape " + shape_to_string(grad_out.shape()) +
                     " does not match " + std::to_string(ids.size()) + " ids of width " +
                     std::to_string(d));
  }
  for (std::size_t i = 0; i < ids.size(); ++i) {
    double* dst = dtable.data() + static_cast<std::size_t>(ids[i]) * d;
    const double* src = grad_out.data() + i * d;
    for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
  }
  return dtable;
}

namespace {

void check_norm_shapes(const DenseArray& x, const DenseArray& gain, const char* op) {
  if (x.rank() != 1 && x.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected rank 1 or 2, got " +
                     shape_to_string(x.shape()));
  }
  const std::size_t d = x.shape().back();
  if (gain.rank() != 1 || gain.numel() != d) {
    throw ShapeError(std::string(op) + ": gain shape " + shape_to_string(gain.shape()) +
                     " does not match feature extent " + std::to_string(d) + " of " +
                     shape_to_string(x.shape()));
  }
}

}  // namespace

DenseArray rmsnorm(const DenseArray& x, const DenseArray& gain, double eps) {
  check_norm_shapes(x, gain, "rmsnorm");
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.numel() / d;
  DenseArray y(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xi = x.data() + r * d;
    double* yi = y.data() + r * d;
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) ss += xi[j] * xi[j];
    const double inv = 1.0 / std::sqrt(ss / static_cast<double>(d) + eps);
    for (std::size_t j = 0; j < d; ++j) yi[j] = xi[j] * inv * gain[j];
  }
  return y;
}

RmsnormGrads rmsnorm_backward(const DenseArray& grad_y, const DenseArray& x,
                              const DenseArray& gain, double eps) {
  check_norm_shapes(x, gain, "rmsnorm_backward");
  require_same_shape(grad_y, x, "rmsnorm_backward");
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.numel() / d;
  RmsnormGrads g{DenseArray(x.shape()), DenseArray(gain.shape())};
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xi = x.data() + r * d;
    const double* gy = grad_y.data() + r * d;
    double* dx = g.dx.data() + r * d;
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) ss += xi[j] * xi[j];
    const double inv = 1.0 / std::sqrt(ss / static_cast<double>(d) + eps);
    // dL/dx_j = inv * g_j * gy_j - inv^3/d * x_j * sum_i(gy_i * g_i * x_i)
    double dot = 0.0;
    for (std::size_t j = 0; j < d; ++j) dot += gy[j] * gain[j] * xi[j];
    const double coef = inv * inv * inv * dot / static_cast<double>(d);
    for (std::size_t j = 0; j < d; ++j) {
      dx[j] = inv * gain[j] * gy[j] - coef * xi[j];
      g.dgain[j] += gy[j] * xi[j] * inv;
    }
  }
  return g;
}

DenseArray silu(const DenseArray& x) {
  DenseArray y(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double s = 1.0 / (1.0 + std::exp(-x[i]));
    y[i] = x[i] * s;
  }
  return y;
}

DenseArray silu_backward(const DenseArray& grad_y, const DenseArray& x) {
  require_same_shape(grad_y, x, "silu_backward");
  DenseArray dx(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double s = 1.0 / (1.0 + std::exp(-x[i]));
    dx[i] = grad_y[i] * s * (1.0 + x[i] * (1.0 - s));
  }
  return dx;
}

DenseArray add(const DenseArray& a, const DenseArray& b) {
  require_same_shape(a, b, "add");
  DenseArray c(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) c[i] = a[i] + b[i];
  return c;
}

DenseArray mul(const DenseArray& a, const DenseArray& b) {
  require_same_shape(a, b, "mul");
  DenseArray c(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) c[i] = a[i] * b[i];
  return c;
}

std::pair<DenseArray, DenseArray> mul_backward(const DenseArray& grad_c, const DenseArray& a,
                                               const DenseArray& b) {
  require_same_shape(grad_c, a, "mul_backward");
  require_same_shape(a, b, "mul_backward");
  return {mul(grad_c, b), mul(grad_c, a)};
}

void axpy(double alpha, const DenseArray& x, DenseArray& y) {
  require_same_shape(x, y, "axpy");
  for (std::size_t i = 0; i < x.numel(); ++i) y[i] += alpha * x[i];
}

void scale(DenseArray& x, double alpha) {
  for (std::size_t i = 0; i < x.numel(); ++i) x[i] *= alpha;
}

}  // namespace tegu
