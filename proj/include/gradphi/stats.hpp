#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "gradphi/rng.hpp"
#include "gradphi/spectral.hpp"

namespace gradphi::stats {

inline double mean(std::span<const double> x) {
  CompensatedSum s;
  for (const double v : x) s.add(v);
  return x.empty() ? 0.0 : s.value() / static_cast<double>(x.size());
}

/// Unbiased sample variance.
inline double variance(std::span<const double> x) {
  if (x.size() < 2) return 0.0;
  const double m = mean(x);
  CompensatedSum s;
  for (const double v : x) s.add((v - m) * (v - m));
  return s.value() / static_cast<double>(x.size() - 1);
}

inline double standard_error(std::span<const double> x) {
  return x.size() < 2 ? 0.0 : std::sqrt(variance(x) / static_cast<double>(x.size()));
}

/// Linear interpolation between order statistics (type 7).
inline double quantile(std::vector<double> x, double q) {
  if (x.empty()) throw std::invalid_argument("quantile of empty sample");
  std::sort(x.begin(), x.end());
  const double h = q * static_cast<double>(x.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, x.size() - 1);
  return x[lo] + (h - static_cast<double>(lo)) * (x[hi] - x[lo]);
}

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  double slope_se = 0.0;
};

inline LinearFit linear_fit(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("linear_fit: need >= 2 paired points");
  const double mx = mean(x), my = mean(y);
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  const double sse = std::max(0.0, syy - f.slope * sxy);
  f.r2 = syy > 0 ? 1.0 - sse / syy : 1.0;
  if (x.size() > 2) f.slope_se = std::sqrt(sse / static_cast<double>(x.size() - 2) / sxx);
  return f;
}

struct BatchMeans {
  double mean = 0.0;
  double stderr_ = 0.0;
  int batches = 0;
};

/// Batched means over a single correlated series.
inline BatchMeans batch_means(std::span<const double> x, int batches) {
  if (batches < 2 || x.size() < static_cast<std::size_t>(batches))
    throw std::invalid_argument("batch_means: fewer samples than batches");
  const std::size_t per = x.size() / static_cast<std::size_t>(batches);
  std::vector<double> m(static_cast<std::size_t>(batches));
  for (int b = 0; b < batches; ++b) m[b] = mean(x.subspan(b * per, per));
  return {mean(m), standard_error(m), batches};
}

/// Two-sided Kolmogorov-Smirnov statistic against a continuous CDF.
template <class Cdf>
double ks_statistic(std::vector<double> x, Cdf&& cdf) {
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = cdf(x[i]);
    d = std::max({d, (static_cast<double>(i) + 1) / n - f, f - static_cast<double>(i) / n});
  }
  return d;
}

/// Asymptotic critical value of the KS statistic at level 1%.
inline double ks_critical_1pct(std::size_t n) { return 1.6276 / std::sqrt(static_cast<double>(n)); }

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

/// Percentile bootstrap interval of stat(resample) with `reps` replicates.
template <class Stat>
std::pair<double, double> bootstrap_interval(std::span<const double> x, Stat&& stat, int reps, double level,
                                             const Stream& stream) {
  std::vector<double> vals;
  vals.reserve(static_cast<std::size_t>(reps));
  std::vector<double> buf(x.size());
  for (int r = 0; r < reps; ++r) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double u = stream.uniform(static_cast<std::uint64_t>(r), i);
      buf[i] = x[std::min(x.size() - 1, static_cast<std::size_t>(u * static_cast<double>(x.size())))];
    }
    vals.push_back(stat(std::span<const double>(buf)));
  }
  const double a = 0.5 * (1.0 - level);
  return {quantile(vals, a), quantile(vals, 1.0 - a)};
}

/// Normal-approximation binomial standard error sqrt(p(1-p)/n).
inline double binomial_se(double p, std::int64_t n) {
  return n > 0 ? std::sqrt(std::max(0.0, p * (1.0 - p)) / static_cast<double>(n)) : 0.0;
}

/// Pairwise-summation reduction of per-item values (order-independent given
/// a fixed item order).
inline double pairwise_sum(std::span<const double> x) {
  if (x.size() <= 8) {
    double s = 0.0;
    for (const double v : x) s += v;
    return s;
  }
  const std::size_t h = x.size() / 2;
  return pairwise_sum(x.first(h)) + pairwise_sum(x.subspan(h));
}

}  // namespace gradphi::stats
