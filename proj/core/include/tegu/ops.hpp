#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "tegu/array.hpp"

namespace tegu {

// Dense primitives for the fixed architecture. Every forward has a matching
// hand-derived backward; there is no autodiff graph.

// C = A(m x k) * B(k x n)
DenseArray matmul(const DenseArray& a, const DenseArray& b);
// Returns (dA, dB) given upstream dC.
std::pair<DenseArray, DenseArray> matmul_backward(const DenseArray& grad_c,
                                                  const DenseArray& a,
                                                  const DenseArray& b);

DenseArray transpose(const DenseArray& a);

// rows of `table` gathered by id; ids must be < table.rows()
DenseArray embedding_lookup(const DenseArray& table, const std::vector<std::int32_t>& ids);
// Scatter-adds grad rows into a zeroed table-shaped gradient.
DenseArray embedding_backward(const DenseArray& grad_out, const Shape& table_shape,
                              const std::vector<std::int32_t>& ids);

// y = x / sqrt(mean(x^2) + eps) * g, normalized over the last axis.
// x may be 1-D or 2-D (row-wise); g has the last-axis extent.
DenseArray rmsnorm(const DenseArray& x, const DenseArray& gain, double eps);
struct RmsnormGrads {
  DenseArray dx;
  DenseArray dgain;
};
RmsnormGrads rmsnorm_backward(const DenseArray& grad_y, const DenseArray& x,
                              const DenseArray& gain, double eps);

DenseArray silu(const DenseArray& x);
DenseArray silu_backward(const DenseArray& grad_y, const DenseArray& x);

DenseArray add(const DenseArray& a, const DenseArray& b);
DenseArray mul(const DenseArray& a, const DenseArray& b);
// d(a*b): (grad*b, grad*a)
std::pair<DenseArray, DenseArray> mul_backward(const DenseArray& grad_c, const DenseArray& a,
                                               const DenseArray& b);

// In-place helpers used by the training loops.
void axpy(double alpha, const DenseArray& x, DenseArray& y);  // y += alpha * x
void scale(DenseArray& x, double alpha);

constexpr double kRmsnormEps = 1e-6;

}  // namespace tegu
