#pragma once

// Closed-form answers for V(x) = x^2/2 from the Fourier spectrum of the
// torus Laplacian: lambda_k = sum_j 2(1 - cos(2 pi k_j / (2L+1))).

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace gradphi {

/// Kahan-Babuska-Neumaier accumulator.
class CompensatedSum {
 public:
  void add(double v) {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v))
      comp_ += (sum_ - t) + v;
    else
      comp_ += (v - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

class SpectrumTable {
 public:
  SpectrumTable(int dim, int half_side) : dim_(dim), side_(2 * half_side + 1) {
    if (dim < 1 || dim > 3) throw std::invalid_argument("spectrum: dimension must be 1..3");
    if (half_side < 1) throw std::invalid_argument("spectrum: L must be >= 1");
    axis_.resize(side_);
    for (int j = 0; j < side_; ++j) {
      const double s = std::sin(std::numbers::pi * j / side_);
      axis_[j] = 4.0 * s * s;  // 2(1 - cos(2 pi j / N)), without cancellation
    }
    axis_[0] = 0.0;
  }

  int dim() const { return dim_; }
  int side() const { return side_; }
  long long size() const {
    long long n = 1;
    for (int i = 0; i < dim_; ++i) n *= side_;
    return n;
  }
  const std::vector<double>& axis_eigenvalues() const { return axis_; }

  /// Calls fn(lambda_k) for every k in {0..2L}^d, k = 0 first.
  template <class Fn>
  void for_each(Fn&& fn) const {
    const int n = side_;
    if (dim_ == 1) {
      for (int a = 0; a < n; ++a) fn(axis_[a]);
    } else if (dim_ == 2) {
      for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) fn(axis_[a] + axis_[b]);
    } else {
      for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b)
          for (int c = 0; c < n; ++c) fn(axis_[a] + axis_[b] + axis_[c]);
    }
  }

  double trace() const {
    CompensatedSum s;
    for_each([&](double l) { s.add(l); });
    return s.value();
  }

 private:
  int dim_;
  int side_;
  std::vector<double> axis_;
};

/// Var[phi(0)] = |T|^{-1} sum_{k != 0} 1 / lambda_k for the mean-zero
/// Gaussian field with Hamiltonian (1/2) sum_e (grad phi(e))^2.
inline double gaussian_variance(int dim, int half_side) {
  const SpectrumTable spec(dim, half_side);
  CompensatedSum s;
  spec.for_each([&](double l) {
    if (l > 0.0) s.add(1.0 / l);
  });
  return s.value() / static_cast<double>(spec.size());
}

/// P(t, 0) = |T|^{-1} sum_{k != 0} exp(-lambda_k t) for a == 1.
inline double gaussian_heat_kernel(int dim, int half_side, double t) {
  if (t < 0.0) throw std::invalid_argument("gaussian_heat_kernel: t must be >= 0");
  const SpectrumTable spec(dim, half_side);
  CompensatedSum s;
  spec.for_each([&](double l) {
    if (l > 0.0) s.add(std::exp(-l * t));
  });
  return s.value() / static_cast<double>(spec.size());
}

/// Smallest nonzero eigenvalue.
inline double spectral_gap(int half_side) {
  const double s = std::sin(std::numbers::pi / (2 * half_side + 1));
  return 4.0 * s * s;
}

}  // namespace gradphi
