#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "gradphi/dynamics.hpp"
#include "gradphi/stats.hpp"

using namespace gradphi;

namespace {

LatticeField cycle_field(const Torus& t) { return LatticeField(t, std::vector<double>{0.0, 1.0, -1.0}); }

LangevinConfig quick(std::uint64_t seed, double thinning = 1.0, std::int64_t samples = 1000, int chains = 4) {
  LangevinConfig c;
  c.dt = 0.05;
  c.burn_in = 5.0;
  c.thinning = thinning;
  c.samples_per_chain = samples;
  c.chain_count = chains;
  c.seed = seed;
  return c;
}

}  // namespace

TEST(NonlinearDivergence, Examples) {
  const Torus t(1, 1);
  const auto f = cycle_field(t);
  const auto V = PotentialSpec::gaussian();
  EXPECT_DOUBLE_EQ(nonlinear_divergence(f, V, 0), 0.0);
  EXPECT_DOUBLE_EQ(nonlinear_divergence(f, V, 1), -3.0);
  const LatticeField c(t, 2.0);
  for (const auto& W : {PotentialSpec::power(4), PotentialSpec::flat_bottom(1.0)})
    for (Index x = 0; x < 3; ++x) EXPECT_EQ(nonlinear_divergence(c, W, x), 0.0);
}

TEST(LangevinStep, Examples) {
  const Torus t(1, 1);
  const std::vector<double> zero(3, 0.0);
  const auto out = langevin_step(cycle_field(t), PotentialSpec::gaussian(), 0.1, zero);
  EXPECT_NEAR(out[0], 0.0, 1e-15);
  EXPECT_NEAR(out[1], 0.7, 1e-15);
  EXPECT_NEAR(out[2], -0.7, 1e-15);

  const Torus t2(2, 2);
  const LatticeField flat(t2);
  const std::vector<double> z2(static_cast<std::size_t>(t2.vertex_count()), 0.0);
  const auto still = langevin_step(flat, PotentialSpec::power(4), 0.01, z2);
  for (const double v : still.values()) EXPECT_EQ(v, 0.0);

  std::vector<double> noise{0.3, -1.2, 0.5}, shifted = noise;
  for (auto& v : shifted) v += 4.0;
  const auto a = langevin_step(cycle_field(t), PotentialSpec::power(4), 0.01, noise);
  const auto b = langevin_step(cycle_field(t), PotentialSpec::power(4), 0.01, shifted);
  for (Index x = 0; x < 3; ++x) EXPECT_NEAR(a[x], b[x], 1e-13);
}

TEST(LangevinStep, ProjectionKeepsGradients) {
  const Torus t(2, 2);
  LatticeField f(t);
  fill_normals(Stream(5), 0, f.raw().data(), t.vertex_count());
  auto g = f;
  project_mean_zero(g.raw());
  for (Index e = 0; e < t.edge_count(); ++e) EXPECT_NEAR(gradient(f, e), gradient(g, e), 1e-14);
}

TEST(StabilityPolicy, FixedThrowsAdaptiveSubsteps) {
  const Torus t(2, 2);
  LatticeField init(t);
  for (Index x = 0; x < t.vertex_count(); ++x) init[x] = (x % 2) ? 2.0 : -2.0;
  LangevinConfig c;
  c.dt = 0.05;
  c.correction = Correction::plain;
  c.dt_policy = DtPolicy::fixed;
  LangevinChain fixed(t, PotentialSpec::power(4), c, Stream(1), init);
  EXPECT_THROW(fixed.step(), UnstableStep);
  c.dt_policy = DtPolicy::adaptive;
  LangevinChain adaptive(t, PotentialSpec::power(4), c, Stream(1), init);
  EXPECT_NO_THROW(adaptive.advance(10));
  EXPECT_GT(adaptive.substeps_taken(), 10);
}

TEST(SampleGibbs, GaussianVarianceAndKs) {
  const Torus t(1, 1);
  const auto cfg = quick(17, 1.0, 25000, 4);
  std::vector<double> x;
  std::vector<std::vector<double>> sq(4);
  sample_gibbs(t, PotentialSpec::gaussian(), cfg, [&](int c, std::int64_t, const LatticeField& f) {
    sq[c].push_back(f[0] * f[0]);
  }, nullptr, 1);
  std::vector<double> batches;
  for (const auto& s : sq) {
    for (int b = 0; b < 10; ++b)
      batches.push_back(stats::mean(std::span<const double>(s).subspan(b * 2500, 2500)));
    for (const double v : s) x.push_back(std::sqrt(v));
  }
  EXPECT_NEAR(stats::mean(batches), 2.0 / 9.0, 3.0 * stats::standard_error(batches));
  // Signed samples for the KS test.
  x.clear();
  sample_gibbs(t, PotentialSpec::gaussian(), cfg, [&](int c, std::int64_t k, const LatticeField& f) {
    (void)c, (void)k;
    x.push_back(f[0]);
  }, nullptr, 1);
  const double sd = std::sqrt(2.0 / 9.0);
  EXPECT_LT(stats::ks_statistic(x, [&](double v) { return stats::normal_cdf(v / sd); }),
            stats::ks_critical_1pct(x.size()));
}

TEST(SampleGibbs, QuarticMeanIsZero) {
  const Torus t(1, 1);
  const auto cfg = quick(23, 0.5, 5000, 4);
  std::vector<std::vector<double>> v(4);
  sample_gibbs(t, PotentialSpec::power(4), cfg, [&](int c, std::int64_t, const LatticeField& f) { v[c].push_back(f[0]); });
  std::vector<double> batches;
  for (const auto& s : v)
    for (int b = 0; b < 10; ++b) batches.push_back(stats::mean(std::span<const double>(s).subspan(b * 500, 500)));
  EXPECT_NEAR(stats::mean(batches), 0.0, 3.0 * stats::standard_error(batches));
}

TEST(SampleGibbs, BitIdenticalAcrossWorkerCounts) {
  const Torus t(2, 2);
  const auto cfg = quick(31, 0.2, 50, 6);
  auto collect = [&](int workers) {
    std::vector<std::vector<double>> out(6);
    sample_gibbs(t, PotentialSpec::flat_bottom(1.0), cfg, [&](int c, std::int64_t, const LatticeField& f) {
      out[c].insert(out[c].end(), f.values().begin(), f.values().end());
    }, nullptr, workers);
    return out;
  };
  const auto a = collect(1), b = collect(4), c = collect(1);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, c);
}

TEST(GibbsChain, RestoreContinuesIdentically) {
  const Torus t(2, 2);
  const auto V = PotentialSpec::power(4);
  auto cfg = quick(8, 0.2, 40, 1);
  GibbsChain ref(t, V, cfg, Stream(8).child("chain").child(0));
  std::vector<double> want;
  for (int k = 0; k < 40; ++k) want.push_back(ref.next()[3]);
  GibbsChain part(t, V, cfg, Stream(8).child("chain").child(0));
  for (int k = 0; k < 15; ++k) part.next();
  const auto& c = part.chain();
  GibbsChain resumed(t, V, cfg, Stream(8).child("chain").child(0));
  resumed.restore(c.field().raw(), c.step_index(), c.accepted(), c.proposed(), part.retained(), part.burned_in());
  for (int k = 15; k < 40; ++k) EXPECT_EQ(resumed.next()[3], want[k]);
}

TEST(Trajectory, GaussianEnvironmentIsOne) {
  const Torus t(2, 2);
  const auto traj = evolve_trajectory(LatticeField(t), PotentialSpec::gaussian(), 0.01, 1.0, Stream(2), {5, {}});
  EXPECT_EQ(traj.node_count(), 21);
  for (const double a : traj.raw()) EXPECT_EQ(a, 1.0);
}

TEST(Trajectory, FlatBottomZeroNoiseStaysDegenerate) {
  const Torus t(2, 2);
  const auto V = PotentialSpec::flat_bottom(1.0);
  LatticeField phi(t);
  const std::vector<double> zero(static_cast<std::size_t>(t.vertex_count()), 0.0);
  std::vector<double> a(static_cast<std::size_t>(t.edge_count()));
  for (int k = 0; k < 50; ++k) {
    environment_slice(phi, V, a);
    for (const double v : a) ASSERT_EQ(v, 0.0);
    phi = langevin_step(phi, V, 0.01, zero);
  }
}

TEST(Trajectory, BinaryRoundTrip) {
  const Torus t(2, 1);
  auto traj = evolve_trajectory(LatticeField(t), PotentialSpec::power(4), 0.01, 0.5, Stream(4), {2, {}},
                                DtPolicy::adaptive);
  traj.seed = 4;
  const std::string path = ::testing::TempDir() + "gradphi_traj.bin";
  write_trajectory(traj, path);
  const auto back = read_trajectory(t, path);
  EXPECT_EQ(back.raw(), traj.raw());
  EXPECT_EQ(back.node_dt(), traj.node_dt());
  EXPECT_EQ(back.potential_tag, traj.potential_tag);
  EXPECT_THROW(read_trajectory(Torus(2, 2), path), std::runtime_error);
}

TEST(Stationarity, GradientSecondMomentIsTimeIndependent) {
  const Torus t(1, 2);
  const auto V = PotentialSpec::power(4);
  auto cfg = quick(12, 2.0, 50, 4);
  std::vector<LatticeField> starts;
  sample_gibbs(t, V, cfg, [&](int, std::int64_t, const LatticeField& f) { starts.push_back(f); }, nullptr, 1);
  const double T = 2.0;
  std::vector<std::vector<double>> m(3);
  for (std::size_t i = 0; i < starts.size(); ++i) {
    const auto traj = evolve_trajectory(starts[i], V, 0.002, T, Stream(77).child(i), {500, {0}}, DtPolicy::adaptive);
    for (int j = 0; j < 3; ++j) m[j].push_back(traj.probe_traces[0][j] * traj.probe_traces[0][j]);
  }
  for (int j = 1; j < 3; ++j) {
    const double diff = stats::mean(m[j]) - stats::mean(m[0]);
    const double se = std::sqrt(stats::variance(m[j]) / m[j].size() + stats::variance(m[0]) / m[0].size());
    EXPECT_LT(std::abs(diff), 3.0 * se) << "t index " << j;
  }
}

TEST(NoiseDecomposition, Examples) {
  const int m = 8;
  std::vector<double> lin(m + 1), zero(m + 1, 0.0);
  for (int j = 0; j <= m; ++j) lin[j] = static_cast<double>(j) / m;
  const auto d = decompose_noise({lin, zero}, 1, m);
  EXPECT_DOUBLE_EQ(d.increments[0][0], 1.0);
  for (int j = 0; j <= m; ++j) {
    EXPECT_NEAR(d.bridge(0, 0, j), 0.0, 1e-15);
    EXPECT_EQ(d.bridge(1, 0, j), 0.0);
  }
  EXPECT_EQ(d.increments[1][0], 0.0);
  EXPECT_THROW(decompose_noise({std::vector<double>(m)}, 1, m), std::invalid_argument);
}

TEST(NoiseDecomposition, ReconstructsAndSeparatesIncrementsFromBridges) {
  const Torus t(2, 3);
  const int N = 20, m = 50;
  const double dt = 1.0 / m;
  std::vector<std::vector<double>> paths;
  for (Index x = 0; x < t.vertex_count(); ++x) paths.push_back(driving_path(Stream(9), t, x, dt, N * m));
  const auto d = decompose_noise(paths, N, m);
  std::vector<double> inc, mid;
  for (std::size_t x = 0; x < paths.size(); ++x)
    for (int n = 0; n < N; ++n) {
      for (int j = 0; j <= m; ++j) ASSERT_NEAR(d.reconstruct(x, n, j), paths[x][n * m + j], 1e-12);
      inc.push_back(d.increments[x][n]);
      mid.push_back(d.bridge(x, n, m / 2));
    }
  const double n = static_cast<double>(inc.size());
  const double v = stats::variance(inc);
  EXPECT_NEAR(v, 1.0, 3.0 * std::sqrt(2.0 / n));
  double cov = 0.0;
  for (std::size_t i = 0; i < inc.size(); ++i) cov += inc[i] * mid[i];
  cov /= n;
  const double corr = cov / std::sqrt(v * stats::variance(mid));
  EXPECT_LT(std::abs(corr), 3.0 / std::sqrt(n));
}
