#pragma once

#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "usnrt/error.hpp"
#include "usnrt/stats.hpp"

namespace usnrt::metrics {

struct GaussianPrediction {
  double mu = 0.0;
  double sigma = 1.0;
};

struct CurvePoint {
  double expected_probability = 0.0;
  double error = 0.0;  // C_k, in percent
};

struct MetricsReport {
  double ece = 0.0;
  double tce = 0.0;
  double sharpness = 0.0;
  std::vector<CurvePoint> curve;
  std::size_t n_test = 0;
};

inline double predicted_quantile(const GaussianPrediction& p, double tau) {
  return p.mu + p.sigma * stats::normal_inverse_cdf(tau);
}

namespace detail {
inline void check_inputs(std::span<const GaussianPrediction> preds, std::span<const double> y) {
  if (preds.empty()) throw InvalidInput("metrics: empty test set");
  if (preds.size() != y.size()) throw InvalidInput("metrics: predictions and labels differ in length");
  for (const auto& p : preds)
    if (!(p.sigma > 0.0)) throw InvalidInput("metrics: sigma must be positive");
}

// Fraction of samples with y strictly below the tau-quantile.
inline double below_frequency(std::span<const GaussianPrediction> preds, std::span<const double> y,
                              double z) {
  std::size_t count = 0;
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (y[i] < preds[i].mu + preds[i].sigma * z) ++count;
  return static_cast<double>(count) / static_cast<double>(preds.size());
}

// 100 * |observed coverage of (q_tau, q_{1-tau}) - (1 - 2 tau)|, both ends strict.
inline double interval_error(std::span<const GaussianPrediction> preds, std::span<const double> y,
                             double tau) {
  const double z_lo = stats::normal_inverse_cdf(tau);
  const double z_hi = stats::normal_inverse_cdf(1.0 - tau);
  std::size_t inside = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double lo = preds[i].mu + preds[i].sigma * z_lo;
    const double hi = preds[i].mu + preds[i].sigma * z_hi;
    if (lo < y[i] && y[i] < hi) ++inside;
  }
  const double observed = static_cast<double>(inside) / static_cast<double>(preds.size());
  return 100.0 * std::fabs(observed - (1.0 - 2.0 * tau));
}

// Lower-tail level of the central interval with the given coverage k/10.
inline double tail_level_for_decile(int k) { return static_cast<double>(10 - k) / 20.0; }
}  // namespace detail

/// Expected calibration error over tau in {0.01, ..., 0.99}, in percent.
inline double ece(std::span<const GaussianPrediction> preds, std::span<const double> y) {
  detail::check_inputs(preds, y);
  double total = 0.0;
  for (int k = 1; k <= 99; ++k) {
    const double tau = static_cast<double>(k) / 100.0;
    total += std::fabs(detail::below_frequency(preds, y, stats::normal_inverse_cdf(tau)) - tau);
  }
  return 100.0 * total / 99.0;
}

/// Calibration error of the 60/70/80/90% central intervals, in percent.
inline double tce(std::span<const GaussianPrediction> preds, std::span<const double> y) {
  detail::check_inputs(preds, y);
  double total = 0.0;
  for (int k = 6; k <= 9; ++k) total += detail::interval_error(preds, y, detail::tail_level_for_decile(k));
  return total / 4.0;
}

/// 100 * mean predicted sigma.
inline double sharpness(std::span<const GaussianPrediction> preds) {
  if (preds.empty()) throw InvalidInput("sharpness: empty prediction set");
  double s = 0.0;
  for (const auto& p : preds) s += p.sigma;
  return 100.0 * s / static_cast<double>(preds.size());
}

/// Interval calibration error C_k at expected coverages 0.1, ..., 0.9.
inline std::vector<CurvePoint> calibration_curve(std::span<const GaussianPrediction> preds,
                                                 std::span<const double> y) {
  detail::check_inputs(preds, y);
  std::vector<CurvePoint> curve;
  for (int k = 1; k <= 9; ++k)
    curve.push_back({static_cast<double>(k) / 10.0,
                     detail::interval_error(preds, y, detail::tail_level_for_decile(k))});
  return curve;
}

inline MetricsReport evaluate(std::span<const GaussianPrediction> preds, std::span<const double> y) {
  MetricsReport r;
  r.ece = ece(preds, y);
  r.tce = tce(preds, y);
  r.sharpness = sharpness(preds);
  r.curve = calibration_curve(preds, y);
  r.n_test = preds.size();
  return r;
}

/// Mean Gaussian negative log-likelihood including the 0.5 log(2 pi) constant.
inline double mean_nll(std::span<const GaussianPrediction> preds, std::span<const double> y) {
  detail::check_inputs(preds, y);
  double total = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double r = (y[i] - preds[i].mu) / preds[i].sigma;
    total += std::log(preds[i].sigma) + 0.5 * r * r + 0.5 * std::log(2.0 * std::numbers::pi);
  }
  return total / static_cast<double>(preds.size());
}

}  // namespace usnrt::metrics
