#include "tegu/logprob.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace tegu {

double logsumexp(const std::vector<double>& v) {
  double m = kNegInf;
  for (double x : v) m = std::max(m, x);
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (double x : v) {
    if (x != kNegInf) s += std::exp(x - m);
  }
  return m + std::log(s);
}

void LogProbVector::check_normalized(double tol) const {
  bool any_finite = false;
  for (double x : values) {
    if (std::isnan(x) || x == std::numeric_limits<double>::infinity()) {
      throw ValueError("LogProbVector: entry " + std::to_string(x) + " is not a log-probability");
    }
    if (x != kNegInf) any_finite = true;
  }
  if (!any_finite) {
    throw ValueError("LogProbVector: all entries are -inf");
  }
  const double lse = logsumexp(values);
  if (std::abs(lse) > tol) {
    throw ValueError("LogProbVector: logsumexp = " + std::to_string(lse) +
                     " exceeds tolerance " + std::to_string(tol));
  }
}

DenseArray log_softmax(const DenseArray& logits, std::size_t axis) {
  if (axis >= logits.rank()) {
    throw ShapeError("log_softmax: axis " + std::to_string(axis) + " out of range for shape " +
                     shape_to_string(logits.shape()));
  }
  const Shape& s = logits.shape();
  std::size_t inner = 1, outer = 1;
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  const std::size_t n = s[axis];

  DenseArray out(logits.shape());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double m = kNegInf;
      for (std::size_t i = 0; i < n; ++i) {
        const double x = logits[base + i * inner];
        if (!std::isfinite(x)) {
          throw ValueError("log_softmax: non-finite input " + std::to_string(x) +
                           " at flat index " + std::to_string(base + i * inner));
        }
        m = std::max(m, x);
      }
      double sum = 0.0;
      for (std::size_t i = 0; i < n; ++i) sum += std::exp(logits[base + i * inner] - m);
      const double lse = m + std::log(sum);
      for (std::size_t i = 0; i < n; ++i) out[base + i * inner] = logits[base + i * inner] - lse;
    }
  }
  return out;
}

LogProbVector log_softmax_vector(const std::vector<double>& logits) {
  DenseArray a({logits.size()}, std::vector<double>(logits));
  DenseArray r = log_softmax(a, 0);
  return LogProbVector{std::move(r.values())};
}

std::vector<double> softmax_vector(const std::vector<double>& logits) {
  LogProbVector lp = log_softmax_vector(logits);
  std::vector<double> p(lp.size());
  for (std::size_t i = 0; i < lp.size(); ++i) p[i] = std::exp(lp[i]);
  return p;
}

LogProbVector weighted_logsumexp(const std::vector<LogProbVector>& logps,
                                 const std::vector<double>& logweights) {
  if (logps.empty() || logps.size() != logweights.size()) {
    throw ShapeError("weighted_logsumexp: " + std::to_string(logps.size()) +
                     " vectors vs " + std::to_string(logweights.size()) + " weights");
  }
  const std::size_t n = logps[0].size();
  for (const auto& lp : logps) {
    if (lp.size() != n) {
      throw ShapeError("weighted_logsumexp: vector length " + std::to_string(lp.size()) +
                       " differs from " + std::to_string(n));
    }
  }
  double wsum = 0.0;
  for (double lw : logweights) wsum += std::exp(lw);
  if (std::abs(wsum - 1.0) > 1e-6) {
    throw ValueError("weighted_logsumexp: weights sum to " + std::to_string(wsum) +
                     ", expected 1 within 1e-6");
  }

  LogProbVector out;
  out.values.assign(n, kNegInf);
  std::vector<double> terms(logps.size());
  for (std::size_t j = 0; j < n; ++j) {
    double m = kNegInf;
    for (std::size_t k = 0; k < logps.size(); ++k) {
      terms[k] = logps[k][j] + logweights[k];
      m = std::max(m, terms[k]);
    }
    if (m == kNegInf) continue;  // all terms masked
    double s = 0.0;
    for (double t : terms) {
      if (t != kNegInf) s += std::exp(t - m);
    }
    out[j] = m + std::log(s);
  }
  return out;
}

double shannon_entropy(const std::vector<double>& p) {
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] < 0.0) {
      throw ValueError("shannon_entropy: negative probability " + std::to_string(p[i]) +
                       " at index " + std::to_string(i));
    }
    sum += p[i];
  }
  if (std::abs(sum - 1.0) > 1e-6) {
    throw ValueError("shannon_entropy: probabilities sum to " + std::to_string(sum) +
                     ", expected 1 within 1e-6");
  }
  double h = 0.0;
  for (double x : p) {
    if (x > 0.0) h -= x * std::log(x);
  }
  return std::max(h, 0.0);
}

}  // namespace tegu
