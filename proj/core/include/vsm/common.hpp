#pragma once

#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace vsm {

// Thrown when a computation produces non-finite values that the caller is
// expected to surface as a failed run (no clipping or silent recovery).
struct divergence_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double sq_norm(std::span<const double> a) { return dot(a, a); }

// y += alpha * x
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

// log(sum_i exp(v_i)) guarded against overflow; -inf inputs are handled.
double log_sum_exp(std::span<const double> v);

}  // namespace vsm
