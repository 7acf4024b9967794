#include <gtest/gtest.h>

#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "oracles.hpp"
#include "usnrt/stats.hpp"

using namespace usnrt;
using namespace usnrt::stats;

TEST(Levene, IdenticalGroups) {
  const std::vector<double> g{1, 2, 3, 4};
  const auto r = levene_test(g, g);
  EXPECT_EQ(r.statistic, 0.0);
  EXPECT_DOUBLE_EQ(r.p_value, 1.0);
  EXPECT_EQ(r.degrees_of_freedom, 6u);
}

TEST(Levene, HandWorkedExample) {
  // z_L = {1.5, .5, .5, 1.5} -> mean 1, var 1/3; z_R = {3, 1, 1, 3} -> mean 2, var 4/3.
  const std::vector<double> l{0, 1, 2, 3}, r{0, 2, 4, 6};
  const auto res = levene_test(l, r);
  EXPECT_NEAR(res.statistic, -std::sqrt(12.0 / 5.0), 1e-14);
  EXPECT_EQ(res.degrees_of_freedom, 6u);
  EXPECT_NEAR(res.p_value, oracle::t_two_sided_p(res.statistic, 6), 1e-8);
  boost::math::students_t dist(6);
  EXPECT_NEAR(res.p_value, 2 * boost::math::cdf(boost::math::complement(dist, std::fabs(res.statistic))), 1e-10);
}

TEST(Levene, ErrorPaths) {
  const std::vector<double> one{1.0}, two{1.0, 2.0}, flat{3.0, 3.0};
  EXPECT_THROW(levene_test(one, two), InvalidInput);
  EXPECT_THROW(levene_test(two, one), InvalidInput);
  // |e - mean| = 0.5 in every slot on both sides: pooled variance zero.
  const std::vector<double> a{0.0, 1.0}, b{5.0, 6.0};
  EXPECT_THROW(levene_test(a, b), DegenerateVariance);
  EXPECT_THROW(levene_test(flat, flat), DegenerateVariance);
}

TEST(Levene, SwapNegatesStatisticKeepsP) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> g;
  for (int t = 0; t < 50; ++t) {
    std::vector<double> a(10 + t), b(5 + 2 * t);
    for (auto& x : a) x = g(rng);
    for (auto& x : b) x = 2.0 * g(rng);
    const auto ab = levene_test(a, b), ba = levene_test(b, a);
    EXPECT_DOUBLE_EQ(ab.statistic, -ba.statistic);
    EXPECT_DOUBLE_EQ(ab.p_value, ba.p_value);
  }
}

TEST(Levene, ScaleAndShiftInvariance) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g;
  for (int t = 0; t < 50; ++t) {
    std::vector<double> a(30), b(40);
    for (auto& x : a) x = g(rng);
    for (auto& x : b) x = 1.5 * g(rng);
    const auto base = levene_test(a, b);
    const double c = (t % 2 ? -3.7 : 0.25);
    std::vector<double> as = a, bs = b;
    for (auto& x : as) x *= c;
    for (auto& x : bs) x *= c;
    const auto scaled = levene_test(as, bs);
    EXPECT_NEAR(scaled.statistic, base.statistic, 1e-10 * std::fabs(base.statistic) + 1e-12);
    EXPECT_NEAR(scaled.p_value, base.p_value, 1e-10);
    std::vector<double> shifted = a;
    for (auto& x : shifted) x += 42.0;
    EXPECT_NEAR(levene_test(shifted, b).statistic, base.statistic, 1e-9);
  }
}

TEST(Levene, MatchesNaiveTwoPass) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> size(2, 200);
  std::normal_distribution<double> g;
  for (int t = 0; t < 200; ++t) {
    std::vector<double> a(size(rng)), b(size(rng));
    for (auto& x : a) x = g(rng);
    for (auto& x : b) x = 0.5 * g(rng) + 1.0;
    const auto fast = levene_test(a, b);
    const auto slow = oracle::levene_statistic(a, b);
    EXPECT_NEAR(fast.statistic, slow.statistic, 1e-10 * std::max(1.0, std::fabs(slow.statistic)));
    EXPECT_NEAR(fast.p_value, oracle::t_two_sided_p(slow.statistic, slow.df), 1e-8);
  }
}

TEST(StudentT, ClosedForms) {
  for (double df : {1.0, 2.0, 7.0, 1000.0}) EXPECT_EQ(student_t_cdf(0.0, df), 0.5);
  EXPECT_NEAR(student_t_cdf(1.0, 1.0), 0.75, 1e-10);
  EXPECT_NEAR(student_t_cdf(-1.0, 1.0), 0.25, 1e-10);
  // df = 2: F(t) = 1/2 + t / (2 sqrt(t^2 + 2)).
  for (double t : {-3.0, -0.5, 0.3, 2.0, 10.0})
    EXPECT_NEAR(student_t_cdf(t, 2.0), 0.5 + t / (2.0 * std::sqrt(t * t + 2.0)), 1e-12);
  EXPECT_NEAR(student_t_cdf(1e8, 5.0), 1.0, 1e-10);
  EXPECT_NEAR(student_t_cdf(-1e8, 5.0), 0.0, 1e-10);
  EXPECT_THROW(student_t_cdf(1.0, 0.5), InvalidInput);
}

TEST(StudentT, AgreesWithSeriesAndBoost) {
  for (double df : {1.0, 3.0, 10.0, 57.0, 398.0, 1998.0, 16000.0}) {
    boost::math::students_t dist(df);
    for (double t : {-8.0, -2.5, -0.7, 0.01, 1.2, 3.3, 6.0}) {
      const double f = student_t_cdf(t, df);
      EXPECT_NEAR(f, boost::math::cdf(dist, t), 1e-10) << "df=" << df << " t=" << t;
      EXPECT_NEAR(f, oracle::t_cdf(t, df), 1e-10) << "df=" << df << " t=" << t;
    }
  }
}

TEST(StudentT, Monotone) {
  for (double df : {1.0, 4.0, 30.0, 5000.0}) {
    double prev = 0.0;
    for (double t = -20.0; t <= 20.0; t += 0.01) {
      const double f = student_t_cdf(t, df);
      EXPECT_GE(f, prev);
      prev = f;
    }
  }
}

TEST(NormalQuantile, KnownValuesAndErrors) {
  EXPECT_EQ(normal_inverse_cdf(0.5), 0.0);
  const double oracle_95 = oracle::normal_quantile_bisection(0.95);
  EXPECT_NEAR(oracle_95, 1.644853626, 1e-9);
  EXPECT_NEAR(normal_inverse_cdf(0.95), oracle_95, 1e-12);
  EXPECT_THROW(normal_inverse_cdf(0.0), InvalidInput);
  EXPECT_THROW(normal_inverse_cdf(1.0), InvalidInput);
  EXPECT_THROW(normal_inverse_cdf(-0.2), InvalidInput);
}

TEST(NormalQuantile, SymmetryAndOracleSweep) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(1e-6, 1 - 1e-6);
  for (int i = 0; i < 500; ++i) {
    const double tau = u(rng);
    EXPECT_NEAR(normal_inverse_cdf(tau) + normal_inverse_cdf(1.0 - tau), 0.0, 1e-9);
  }
  for (int k = 1; k < 1000; ++k) {
    const double tau = k / 1000.0;
    EXPECT_NEAR(normal_inverse_cdf(tau), oracle::normal_quantile_bisection(tau), 1e-9) << tau;
  }
}

TEST(NormalQuantile, StrictlyIncreasing) {
  double prev = -INFINITY;
  for (int k = 1; k < 100000; ++k) {
    const double q = normal_inverse_cdf(k / 100000.0);
    EXPECT_GT(q, prev);
    prev = q;
  }
}
