#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "gradphi/lattice.hpp"
#include "gradphi/spectral.hpp"

using namespace gradphi;

namespace {

// G(0, 0) for the pseudo-inverse of the graph Laplacian, by dense solve of
// (-Delta + J / n) g = e_0 - 1 / n.
double dense_green(int d, int L) {
  const Torus t(d, L);
  const auto n = static_cast<std::size_t>(t.vertex_count());
  std::vector<double> A(n * n, 1.0 / static_cast<double>(n)), b(n, -1.0 / static_cast<double>(n));
  b[0] += 1.0;
  const auto heads = t.heads();
  for (Index e = 0; e < t.edge_count(); ++e) {
    const auto x = static_cast<std::size_t>(e / d), y = static_cast<std::size_t>(heads[e]);
    A[x * n + x] += 1.0, A[y * n + y] += 1.0;
    A[x * n + y] -= 1.0, A[y * n + x] -= 1.0;
  }
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(A[r * n + c]) > std::abs(A[piv * n + c])) piv = r;
    for (std::size_t k = 0; k < n; ++k) std::swap(A[c * n + k], A[piv * n + k]);
    std::swap(b[c], b[piv]);
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = A[r * n + c] / A[c * n + c];
      for (std::size_t k = c; k < n; ++k) A[r * n + k] -= f * A[c * n + k];
      b[r] -= f * b[c];
    }
  }
  std::vector<double> g(n);
  for (std::size_t c = n; c-- > 0;) {
    double s = b[c];
    for (std::size_t k = c + 1; k < n; ++k) s -= A[c * n + k] * g[k];
    g[c] = s / A[c * n + c];
  }
  return g[0];
}

}  // namespace

TEST(Spectrum, TraceIdentity) {
  for (int d = 1; d <= 3; ++d)
    for (int L : {1, 2, 5}) {
      const SpectrumTable s(d, L);
      EXPECT_NEAR(s.trace(), 2.0 * d * static_cast<double>(s.size()), 1e-9 * s.size());
    }
}

TEST(Spectrum, SmallExamples) {
  EXPECT_NEAR(gaussian_variance(1, 1), 2.0 / 9.0, 1e-15);
  EXPECT_NEAR(gaussian_heat_kernel(1, 1, 0.0), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(gaussian_heat_kernel(1, 1, 1.0), 2.0 / 3.0 * std::exp(-3.0), 1e-15);
  EXPECT_NEAR(spectral_gap(1), 3.0, 1e-14);
  EXPECT_THROW(SpectrumTable(4, 1), std::invalid_argument);
  EXPECT_THROW(gaussian_heat_kernel(1, 1, -1.0), std::invalid_argument);
}

TEST(Spectrum, VarianceMatchesDenseGreenFunction) {
  for (const auto& [d, L] : std::vector<std::pair<int, int>>{{1, 4}, {2, 2}, {2, 4}, {3, 1}, {3, 2}})
    EXPECT_NEAR(gaussian_variance(d, L), dense_green(d, L), 1e-10) << d << " " << L;
}

TEST(Spectrum, HeatKernelIntegratesToVariance) {
  // int_0^inf P(t, 0) dt by Simpson on [0, 40] at d = 1, L = 2 (gap ~1.38).
  const int n = 8000;
  const double T = 40.0, h = T / n;
  double s = gaussian_heat_kernel(1, 2, 0.0) + gaussian_heat_kernel(1, 2, T);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * gaussian_heat_kernel(1, 2, i * h);
  EXPECT_NEAR(s * h / 3.0, gaussian_variance(1, 2), 1e-10);
}

TEST(CompensatedSum, RecoversSmallTerms) {
  CompensatedSum s;
  s.add(1.0);
  for (int i = 0; i < 1000000; ++i) s.add(1e-16);
  EXPECT_NEAR(s.value() - 1.0, 1e-10, 1e-15);
}
