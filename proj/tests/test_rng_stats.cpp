#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <vector>

#include "gradphi/rng.hpp"
#include "gradphi/stats.hpp"

using namespace gradphi;

TEST(Philox, KnownAnswer) {
  // Random123 known-answer vector: counters and keys all ones, then all zeros.
  const auto out = Philox4x32::generate({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu},
                                        {0xffffffffu, 0xffffffffu});
  EXPECT_EQ(out[0], 0x408f276du);
  EXPECT_EQ(out[1], 0x41c83b0eu);
  EXPECT_EQ(out[2], 0xa20bc7c6u);
  EXPECT_EQ(out[3], 0x6d5451fdu);
  const auto zero = Philox4x32::generate({0u, 0u, 0u, 0u}, {0u, 0u});
  EXPECT_EQ(zero[0], 0x6627e8d5u);
  EXPECT_EQ(zero[1], 0xe169c58du);
  EXPECT_EQ(zero[2], 0xbc57ac4cu);
  EXPECT_EQ(zero[3], 0x9b00dbd8u);
}

TEST(Stream, ChildrenAreDistinctAndStable) {
  const Stream root(42);
  std::set<std::uint64_t> keys{root.key()};
  for (std::uint64_t i = 0; i < 1000; ++i) keys.insert(root.child(i).key());
  keys.insert(root.child("noise").key());
  keys.insert(root.child("accept").key());
  EXPECT_EQ(keys.size(), 1003u);
  EXPECT_EQ(Stream(42).child("chain").child(3).key(), root.child("chain").child(3).key());
  EXPECT_EQ(root.normals(5, 7), Stream(42).normals(5, 7));
}

TEST(Stream, NormalMoments) {
  const Stream s(7);
  const int n = 200000;
  double m1 = 0, m2 = 0;
  for (int i = 0; i < n / 2; ++i) {
    const auto z = s.normals(0, static_cast<std::uint64_t>(i));
    m1 += z[0] + z[1];
    m2 += z[0] * z[0] + z[1] * z[1];
  }
  m1 /= n;
  m2 /= n;
  EXPECT_NEAR(m1, 0.0, 4.0 / std::sqrt(n));
  EXPECT_NEAR(m2, 1.0, 4.0 * std::sqrt(2.0 / n));
}

TEST(Stats, BasicEstimators) {
  const std::vector<double> x{1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(stats::mean(x), 2.5);
  EXPECT_NEAR(stats::variance(x), 5.0 / 3.0, 1e-15);
  EXPECT_NEAR(stats::quantile(x, 0.5), 2.5, 1e-15);
  const std::vector<double> lx{0, 1, 2, 3}, ly{1, 3, 5, 7};
  const auto f = stats::linear_fit(lx, ly);
  EXPECT_NEAR(f.slope, 2.0, 1e-14);
  EXPECT_NEAR(f.intercept, 1.0, 1e-14);
  EXPECT_NEAR(f.r2, 1.0, 1e-14);
}

TEST(Stats, KsAcceptsNormalSample) {
  const Stream s(3);
  std::vector<double> x;
  for (int i = 0; i < 20000; ++i) x.push_back(s.normals(0, static_cast<std::uint64_t>(i))[0]);
  EXPECT_LT(stats::ks_statistic(x, stats::normal_cdf), stats::ks_critical_1pct(x.size()));
}
