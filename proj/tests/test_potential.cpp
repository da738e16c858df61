#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "gradphi/potential.hpp"
#include "gradphi/rng.hpp"

using namespace gradphi;

TEST(Potential, EvaluateExamples) {
  const auto g = PotentialSpec::gaussian().evaluate(2.0);
  EXPECT_DOUBLE_EQ(g.value, 2.0);
  EXPECT_DOUBLE_EQ(g.first, 2.0);
  EXPECT_DOUBLE_EQ(g.second, 1.0);
  const auto q = PotentialSpec::power(4).evaluate(1.0);
  EXPECT_DOUBLE_EQ(q.value, 0.25);
  EXPECT_DOUBLE_EQ(q.first, 1.0);
  EXPECT_DOUBLE_EQ(q.second, 3.0);
  const auto f = PotentialSpec::flat_bottom(1.0).evaluate(0.5);
  EXPECT_EQ(f.value, 0.0);
  EXPECT_EQ(f.first, 0.0);
  EXPECT_EQ(f.second, 0.0);
}

TEST(Potential, DerivativesMatchFiniteDifferences) {
  const Stream s(99);
  for (const auto& V : {PotentialSpec::gaussian(), PotentialSpec::power(4), PotentialSpec::power(3),
                        PotentialSpec::flat_bottom(1.0), PotentialSpec::flat_bottom(2.0, 0.5)}) {
    const double h = 1e-5;
    for (int i = 0; i < 1000; ++i) {
      const double x = -20.0 + 40.0 * s.uniform(static_cast<std::uint64_t>(i), 0);
      const double d1 = (V.evaluate(x + h).value - V.evaluate(x - h).value) / (2 * h);
      const double d2 = (V.first(x + h) - V.first(x - h)) / (2 * h);
      EXPECT_NEAR(d1, V.first(x), 1e-5 * std::max(1.0, std::abs(V.first(x)))) << V.tag() << " x=" << x;
      EXPECT_NEAR(d2, V.second(x), 1e-5 * std::max(1.0, std::abs(V.second(x)))) << V.tag() << " x=" << x;
    }
  }
}

TEST(Potential, FlatBottomIsC2AtTheEdge) {
  const auto V = PotentialSpec::flat_bottom(1.0);
  for (const double b : {1.0, -1.0}) {
    EXPECT_NEAR(V.second(b - 1e-9), V.second(b + 1e-9), 1e-8);
    EXPECT_NEAR(V.second(b), 0.0, 1e-8);
  }
}

TEST(RadiusRV, Examples) {
  EXPECT_NEAR(compute_r_v(PotentialSpec::power(4)).r_v, 2.0, 1e-7);
  EXPECT_NEAR(compute_r_v(PotentialSpec::gaussian()).r_v, 2.0, 1e-7);
  EXPECT_NEAR(compute_r_v(PotentialSpec::flat_bottom(1.0)).r_v, 2.0 * (1.0 + 1.0 / std::sqrt(12.0)), 1e-7);
}

TEST(RadiusRV, IsTight) {
  const auto V = PotentialSpec::flat_bottom(1.0);
  const double R = compute_r_v(V).radius;
  for (int i = 0; i <= 20000; ++i) {
    const double x = R + i * 0.01;
    ASSERT_GE(V.second(x), 1.0 - 1e-9);
    ASSERT_GE(V.second(-x), 1.0 - 1e-9);
  }
  // Reducing R by 2% admits a failing point.
  EXPECT_LT(V.second(0.98 * R), 1.0);
}

TEST(Assumption, Examples) {
  const auto q = validate_assumption(PotentialSpec::power(4));
  EXPECT_TRUE(q.pass());
  EXPECT_DOUBLE_EQ(q.r, 4.0);
  EXPECT_NEAR(q.c_minus, 3.0, 1e-9);
  EXPECT_NEAR(q.c_plus, 3.0, 1e-9);

  const auto g = validate_assumption(PotentialSpec::gaussian());
  EXPECT_FALSE(g.pass());
  EXPECT_FALSE(g.growth.pass);
  EXPECT_TRUE(g.has_flag("gaussian-special"));

  // |x| as a table: the second derivative is a spike at the kink.
  std::vector<double> xs, ys;
  for (int i = -400; i <= 400; ++i) {
    xs.push_back(i * 0.05);
    ys.push_back(std::abs(i * 0.05));
  }
  const auto k = validate_assumption(PotentialSpec::table(xs, ys));
  EXPECT_FALSE(k.pass());
  EXPECT_FALSE(k.convex.pass && k.continuous.pass);

  EXPECT_TRUE(validate_assumption(PotentialSpec::flat_bottom(1.0)).pass());
}

TEST(Potential, TableFileRoundTrip) {
  const std::string path = ::testing::TempDir() + "gradphi_table.txt";
  {
    std::ofstream os(path);
    os << "# quartic\n";
    for (int i = -200; i <= 200; ++i) os << i * 0.05 << " " << std::pow(i * 0.05, 4) / 4 << "\n";
  }
  const auto V = PotentialSpec::table_file(path, 4.0);
  EXPECT_EQ(V.family(), Family::user_table);
  EXPECT_NEAR(V.first(1.0), 1.0, 1e-2);
  EXPECT_NEAR(V.second(1.0), 3.0, 5e-2);
  std::remove(path.c_str());
  EXPECT_THROW(PotentialSpec::table_file("/nonexistent/table"), std::runtime_error);
}

TEST(Potential, Tags) {
  EXPECT_NE(PotentialSpec::power(4).tag(), PotentialSpec::power(6).tag());
  EXPECT_EQ(parse_family("flat_bottom"), Family::flat_bottom);
  EXPECT_THROW(parse_family("cubic"), std::invalid_argument);
  EXPECT_THROW(PotentialSpec::power(1.5), std::invalid_argument);
}
