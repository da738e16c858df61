#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "gradphi/estimators.hpp"
#include "gradphi/spectral.hpp"

using namespace gradphi;

namespace {

LangevinConfig chains(std::uint64_t seed, std::int64_t samples, int count = 4) {
  LangevinConfig c;
  c.dt = 0.05;
  c.burn_in = 5.0;
  c.thinning = 0.5;
  c.chain_count = count;
  c.samples_per_chain = samples;
  c.seed = seed;
  return c;
}

}  // namespace

TEST(McVariance, GaussianMatchesSpectralVariance) {
  const Torus t(1, 2);
  const auto r = mc_variance(t, PotentialSpec::gaussian(), chains(3, 4000));
  EXPECT_EQ(r.method, "mc_batched_means_mala");
  EXPECT_EQ(r.n, 16000);
  EXPECT_NEAR(r.estimate, gaussian_variance(1, 2), 3.0 * r.stderr_);
  EXPECT_NEAR(r.extra.at("mean_phi0"), 0.0, 4.0 * r.extra.at("mean_phi0_stderr"));
  EXPECT_GT(r.extra.at("acceptance_min"), 0.9);
}

TEST(McVariance, RequiresTenBatches) {
  const Torus t(1, 1);
  EXPECT_THROW(mc_variance(t, PotentialSpec::gaussian(), chains(3, 4, 1)), std::invalid_argument);
  McOptions few;
  few.batches_per_chain = 2;
  EXPECT_THROW(mc_variance(t, PotentialSpec::gaussian(), chains(3, 100, 4), few), std::invalid_argument);
}

TEST(McReport, BatchedMeansByHand) {
  std::vector<std::vector<double>> second(2), origin(2, std::vector<double>(10, 0.0));
  for (int k = 0; k < 10; ++k) {
    second[0].push_back(k);
    second[1].push_back(10 + k);
  }
  const auto r = mc_report(second, origin, {1.0, 0.5}, 5, Correction::plain);
  // Batch means 0.5, 2.5, ..., 18.5.
  EXPECT_DOUBLE_EQ(r.estimate, 9.5);
  EXPECT_NEAR(r.stderr_, std::sqrt(4.0 * 82.5 / 9.0 / 10.0), 1e-12);
  EXPECT_DOUBLE_EQ(r.extra.at("acceptance_min"), 0.5);
  EXPECT_EQ(r.method, "mc_batched_means_plain");
}

TEST(HsVariance, GaussianIsDeterministicAndExact) {
  for (const auto& [d, L] : std::vector<std::pair<int, int>>{{1, 1}, {1, 4}, {2, 2}}) {
    const Torus t(d, L);
    const auto r = hs_variance(t, PotentialSpec::gaussian(), chains(1, 1));
    EXPECT_EQ(r.method, "hs_deterministic");
    EXPECT_NEAR(r.estimate, gaussian_variance(d, L), 1e-6) << d << " " << L;
    EXPECT_LE(r.truncation_bound, 1e-6);
  }
}

TEST(HsVariance, NeedsEightTrajectories) {
  const Torus t(1, 1);
  HsOptions o;
  o.trajectories = 4;
  EXPECT_THROW(hs_variance(t, PotentialSpec::power(4), chains(1, 1), o), std::invalid_argument);
}

TEST(HsVariance, QuarticAgreesWithMonteCarloOnTinyTorus) {
  const Torus t(1, 1);
  const auto V = PotentialSpec::power(4);
  HsOptions o;
  o.trajectories = 32;
  o.t_max = 10.0;
  const auto hs = hs_variance(t, V, chains(5, 1), o);
  const auto mc = mc_variance(t, V, chains(6, 5000));
  EXPECT_LT(std::abs(hs.estimate - mc.estimate), 3.0 * combined_sigma(hs, mc));
  EXPECT_GT(hs.stderr_, 0.0);
}

TEST(GradientTail, RecoversExponentOfIidSamples) {
  std::mt19937_64 gen(42);
  std::normal_distribution<double> normal;
  std::gamma_distribution<double> gamma(0.25, 1.0);
  std::vector<double> g(200000), q(200000);
  for (auto& v : g) v = normal(gen);
  // |X| = (4 Y)^{1/4} with Y ~ Gamma(1/4) has density proportional to exp(-x^4 / 4).
  for (auto& v : q) v = std::pow(4.0 * gamma(gen), 0.25);
  const auto rg = gradient_tail(g, Stream(1));
  const auto rq = gradient_tail(q, Stream(2));
  EXPECT_NEAR(rg.estimate, 2.0, 0.4);
  EXPECT_NEAR(rq.estimate, 4.0, 0.8);
  EXPECT_LE(rg.extra.at("ci_low"), rg.estimate);
  EXPECT_GE(rg.extra.at("ci_high"), rg.estimate);
  EXPECT_EQ(rg.n, 200000);
}

TEST(GradientTail, RejectsSmallSamples) {
  const std::vector<double> few(100, 1.0);
  EXPECT_THROW(gradient_tail(few, Stream(1)), std::invalid_argument);
  EXPECT_THROW(gradient_tail({}, Stream(1)), std::invalid_argument);
}

TEST(SupremumTail, Example) {
  const std::vector<std::vector<double>> traces{{0.0, 1.0, 2.0}, {0.0, -3.0, 0.0}};
  const auto r = supremum_tail(traces, 1.0, 2.0, {1.0, 2.0, 3.0, 4.0});
  ASSERT_EQ(r.curve.size(), 4u);
  EXPECT_EQ(r.curve[0].second, 1.0);
  EXPECT_EQ(r.curve[1].second, 1.0);
  EXPECT_EQ(r.curve[2].second, 0.5);
  EXPECT_EQ(r.curve[3].second, 0.0);
  EXPECT_THROW(supremum_tail(traces, 1.0, 3.0, {1.0}), std::invalid_argument);
}

TEST(Confinement, ExtremesAndMonotonicity) {
  const Torus t(1, 2);
  const auto V = PotentialSpec::power(4);
  ConfinementOptions o;
  o.trajectories = 16;
  const std::vector<double> T{0.5, 1.0, 2.0};
  const auto wide = confinement_probability(t, V, chains(9, 1), 1e3, T, o);
  for (const auto& [time, p] : wide.curve) EXPECT_EQ(p, 1.0) << time;
  const auto mid = confinement_probability(t, V, chains(9, 1), 0.8, T, o);
  for (std::size_t j = 1; j < mid.curve.size(); ++j) EXPECT_LE(mid.curve[j].second, mid.curve[j - 1].second);
  EXPECT_LT(mid.curve.back().second, 1.0);
  EXPECT_THROW(confinement_probability(t, V, chains(9, 1), 0.0, T, o), std::invalid_argument);
}
