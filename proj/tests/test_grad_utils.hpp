// Central finite-difference gradient checking helpers (double precision).
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>

#include "dpk/nn.hpp"

namespace gradcheck {

constexpr double kStep = 1e-5;
constexpr double kTol = 1e-4;

// Absolute floor for the relative-error denominator. Central differences of
// a loss of magnitude L carry ~eps*L/kStep of rounding noise, so gradients
// smaller than this are indistinguishable from zero.
constexpr double kFloor = 1e-3;

// Compares an analytic gradient for `p` against central differences of the
// scalar loss functional. Checks every coordinate up to `max_coords`.
inline double param_max_rel_err(dpk::nn::Param& p, const Eigen::MatrixXd& analytic,
                                const std::function<double()>& loss, int max_coords = 64) {
  double worst = 0.0;
  const Eigen::Index total = p.value.size();
  const Eigen::Index stride = std::max<Eigen::Index>(1, total / max_coords);
  for (Eigen::Index idx = 0; idx < total; idx += stride) {
    const Eigen::Index i = idx % p.value.rows();
    const Eigen::Index j = idx / p.value.rows();
    const double orig = p.value(i, j);
    p.value(i, j) = orig + kStep;
    const double lp = loss();
    p.value(i, j) = orig - kStep;
    const double lm = loss();
    p.value(i, j) = orig;
    const double fd = (lp - lm) / (2.0 * kStep);
    const double a = analytic(i, j);
    const double denom = std::max({std::abs(fd), std::abs(a), kFloor});
    worst = std::max(worst, std::abs(fd - a) / denom);
  }
  return worst;
}

// Same, but perturbing an arbitrary tensor through a value accessor.
inline double value_max_rel_err(double* data, size_t n, const double* analytic,
                                const std::function<double()>& loss, int max_coords = 64) {
  double worst = 0.0;
  const size_t stride = std::max<size_t>(1, n / max_coords);
  for (size_t idx = 0; idx < n; idx += stride) {
    const double orig = data[idx];
    data[idx] = orig + kStep;
    const double lp = loss();
    data[idx] = orig - kStep;
    const double lm = loss();
    data[idx] = orig;
    const double fd = (lp - lm) / (2.0 * kStep);
    const double a = analytic[idx];
    const double denom = std::max({std::abs(fd), std::abs(a), kFloor});
    worst = std::max(worst, std::abs(fd - a) / denom);
  }
  return worst;
}

}  // namespace gradcheck
