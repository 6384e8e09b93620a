#pragma once

#include <limits>
#include <vector>

#include "tegu/array.hpp"

namespace tegu {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Length-V vector of log-probabilities (nats). Entries may be -inf where a
// token has been masked; everything else must be finite and the finite
// entries must logsumexp to 0 within tolerance.
struct LogProbVector {
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
  double operator[](std::size_t i) const { return values[i]; }
  double& operator[](std::size_t i) { return values[i]; }

  // Throws ValueError if the normalization invariant is violated.
  void check_normalized(double tol = 1e-9) const;
};

// Log-softmax along `axis`; all other axes are treated as independent rows.
// Input must be finite; output rows satisfy logsumexp == 0 within 1e-9.
DenseArray log_softmax(const DenseArray& logits, std::size_t axis);

// Convenience for the common 1-D case.
LogProbVector log_softmax_vector(const std::vector<double>& logits);

// exp(log_softmax) along the last axis of a 1-D vector.
std::vector<double> softmax_vector(const std::vector<double>& logits);

// log sum_k exp(logp_k + logw_k), elementwise over equal-length vectors.
// Weights must exponentiate to a distribution (sum 1 within 1e-6).
LogProbVector weighted_logsumexp(const std::vector<LogProbVector>& logps,
                                 const std::vector<double>& logweights);

// -sum p log p in nats with 0*log0 == 0. Entries must be >= 0 and sum to 1
// within 1e-6.
double shannon_entropy(const std::vector<double>& p);

// Stable log(sum(exp(v))) of a plain vector; -inf entries contribute nothing.
double logsumexp(const std::vector<double>& v);

}  // namespace tegu
