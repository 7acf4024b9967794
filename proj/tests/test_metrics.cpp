#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "oracles.hpp"
#include "usnrt/metrics.hpp"

using namespace usnrt;
using namespace usnrt::metrics;

namespace {

std::vector<GaussianPrediction> constant_preds(std::size_t n, double mu, double sigma) {
  return std::vector<GaussianPrediction>(n, GaussianPrediction{mu, sigma});
}

struct Sample {
  std::vector<GaussianPrediction> preds;
  std::vector<double> y;
};

// Predictions whose sigma is off by `scale` relative to the generating noise.
Sample miscalibrated(std::size_t n, double scale, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> u(-2, 2), s(0.2, 2.0);
  Sample out;
  for (std::size_t i = 0; i < n; ++i) {
    const double mu = u(rng), sd = s(rng);
    out.preds.push_back({mu, sd * scale});
    out.y.push_back(mu + sd * g(rng));
  }
  return out;
}

}  // namespace

TEST(Quantile, WorkedExample) {
  const double q = predicted_quantile({2.0, 3.0}, 0.95);
  EXPECT_NEAR(q, 2.0 + 3.0 * oracle::normal_quantile_bisection(0.95), 1e-12);
  // The nine-digit quantile 1.644853626 is truncated, so the product is off by up to 3e-9.
  EXPECT_NEAR(q, 6.934560879, 3e-9);
  EXPECT_EQ(predicted_quantile({0.0, 1.0}, 0.5), 0.0);
  double prev = -INFINITY;
  for (int k = 1; k < 100; ++k) {
    const double next = predicted_quantile({-1.0, 0.4}, k / 100.0);
    EXPECT_GT(next, prev);
    prev = next;
  }
}

TEST(Ece, AllLabelsAboveEveryQuantile) {
  const auto p = constant_preds(40, 0.0, 1.0);
  const std::vector<double> y(40, 1e6);
  EXPECT_NEAR(ece(p, y), 50.0, 1e-12);
}

TEST(Ece, AllLabelsBelowEveryQuantile) {
  const auto p = constant_preds(40, 0.0, 1.0);
  const std::vector<double> y(40, -1e6);
  EXPECT_NEAR(ece(p, y), 50.0, 1e-12);
}

TEST(Tce, AllInsideAndAllOutside) {
  const auto p = constant_preds(10, 1.0, 0.5);
  const std::vector<double> inside(10, 1.0), outside(10, 100.0);
  EXPECT_NEAR(tce(p, inside), 25.0, 1e-12);
  EXPECT_NEAR(tce(p, outside), 75.0, 1e-12);
}

TEST(Curve, AllInsideGivesTwoHundredTau) {
  const auto p = constant_preds(7, 0.0, 1.0);
  const std::vector<double> y(7, 0.0);
  const auto curve = calibration_curve(p, y);
  ASSERT_EQ(curve.size(), 9u);
  for (int k = 1; k <= 9; ++k) {
    const double tau = (10 - k) / 20.0;
    EXPECT_NEAR(curve[k - 1].expected_probability, k / 10.0, 1e-15);
    EXPECT_NEAR(curve[k - 1].error, 200.0 * tau, 1e-12);
  }
}

TEST(Curve, TceIsMeanOfUpperCurvePoints) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = miscalibrated(300, 0.7 + 0.05 * static_cast<double>(seed), seed);
    const auto curve = calibration_curve(s.preds, s.y);
    const double from_curve = (curve[5].error + curve[6].error + curve[7].error + curve[8].error) / 4.0;
    EXPECT_EQ(tce(s.preds, s.y), from_curve);
  }
}

TEST(Sharpness, MeanSigmaTimesHundred) {
  const std::vector<GaussianPrediction> p{{0, 0.1}, {5, 0.3}, {-1, 0.2}};
  EXPECT_NEAR(sharpness(p), 20.0, 1e-12);
  EXPECT_THROW(sharpness(std::vector<GaussianPrediction>{}), InvalidInput);
}

TEST(Metrics, AgreeWithDirectCounting) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto s = miscalibrated(500, 0.5 + 0.15 * static_cast<double>(seed), 100 + seed);
    std::vector<oracle::BrutePred> bp;
    for (const auto& p : s.preds) bp.push_back({p.mu, p.sigma});
    EXPECT_NEAR(ece(s.preds, s.y), oracle::ece_direct(bp, s.y), 1e-12);
    EXPECT_NEAR(tce(s.preds, s.y), oracle::tce_direct(bp, s.y), 1e-12);
  }
}

TEST(Metrics, AffineInvariance) {
  const auto s = miscalibrated(800, 1.3, 77);
  const double a = 4.5, b = -12.0;
  Sample t;
  for (std::size_t i = 0; i < s.y.size(); ++i) {
    t.preds.push_back({a * s.preds[i].mu + b, a * s.preds[i].sigma});
    t.y.push_back(a * s.y[i] + b);
  }
  EXPECT_NEAR(ece(t.preds, t.y), ece(s.preds, s.y), 1e-12);
  EXPECT_NEAR(tce(t.preds, t.y), tce(s.preds, s.y), 1e-12);
  EXPECT_NEAR(sharpness(t.preds), a * sharpness(s.preds), 1e-9);
}

TEST(Metrics, BoundaryValuesAreNotCounted) {
  // y equal to the median is not strictly below it.
  const std::vector<GaussianPrediction> p{{3.0, 1.0}};
  EXPECT_EQ(detail::below_frequency(p, std::vector<double>{3.0}, 0.0), 0.0);
  // y on the upper interval endpoint is outside the open interval.
  const double tau = detail::tail_level_for_decile(8);
  const double hi = predicted_quantile(p[0], 1.0 - tau);
  EXPECT_NEAR(detail::interval_error(p, std::vector<double>{hi}, tau), 80.0, 1e-12);
}

TEST(Metrics, CalibratedPredictionsScoreLow) {
  const auto s = miscalibrated(100000, 1.0, 5);
  EXPECT_LT(ece(s.preds, s.y), 0.5);
  EXPECT_LT(tce(s.preds, s.y), 0.7);
  const auto wide = miscalibrated(100000, 2.0, 5);
  const auto narrow = miscalibrated(100000, 0.5, 5);
  EXPECT_GT(ece(wide.preds, wide.y), 5.0);
  EXPECT_GT(ece(narrow.preds, narrow.y), 5.0);
}

TEST(Metrics, InputValidation) {
  const std::vector<GaussianPrediction> p{{0, 1}, {0, 0}};
  const std::vector<double> y{1, 2};
  EXPECT_THROW(ece(p, y), InvalidInput);
  EXPECT_THROW(tce(constant_preds(3, 0, 1), y), InvalidInput);
  EXPECT_THROW(ece(std::vector<GaussianPrediction>{}, std::vector<double>{}), InvalidInput);
}

TEST(Nll, StandardNormalAtMean) {
  const std::vector<GaussianPrediction> p{{0, 1}};
  EXPECT_NEAR(mean_nll(p, std::vector<double>{0.0}), 0.5 * std::log(2 * std::numbers::pi), 1e-15);
  const std::vector<GaussianPrediction> q{{1, 2}};
  EXPECT_NEAR(mean_nll(q, std::vector<double>{3.0}), std::log(2.0) + 0.5 + 0.5 * std::log(2 * std::numbers::pi),
              1e-15);
}
