#pragma once

// Independent reference computations for tests. Nothing here calls into the
// library's numerical routines.

#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "usnrt/nn.hpp"

namespace oracle {

struct NaiveLevene {
  double statistic;
  double df;
};

// Straight transcription of the two-group Levene t-statistic with separate
// passes for every quantity.
inline NaiveLevene levene_statistic(std::span<const double> left, std::span<const double> right) {
  auto mean = [](const std::vector<long double>& v) {
    long double s = 0;
    for (auto x : v) s += x;
    return s / static_cast<long double>(v.size());
  };
  auto sample_var = [&](const std::vector<long double>& v) {
    const long double m = mean(v);
    long double s = 0;
    for (auto x : v) s += (x - m) * (x - m);
    return s / static_cast<long double>(v.size() - 1);
  };
  auto deviations = [&](std::span<const double> e) {
    std::vector<long double> ev(e.begin(), e.end());
    const long double m = mean(ev);
    std::vector<long double> z;
    for (auto x : ev) z.push_back(std::fabs(x - m));
    return z;
  };
  const auto zl = deviations(left);
  const auto zr = deviations(right);
  const long double nl = static_cast<long double>(zl.size());
  const long double nr = static_cast<long double>(zr.size());
  const long double pooled = ((nl - 1) * sample_var(zl) + (nr - 1) * sample_var(zr)) / (nl + nr - 2);
  const long double t = (mean(zl) - mean(zr)) / (std::sqrt(pooled) * std::sqrt(1 / nl + 1 / nr));
  return {static_cast<double>(t), static_cast<double>(nl + nr - 2)};
}

// I_x(a, b) from the hypergeometric power series
//   x^a (1-x)^b / (a B(a,b)) * sum_n (a+b)_n / (a+1)_n x^n,
// switching to the complement when x is past the mean.
inline long double incomplete_beta_series(long double a, long double b, long double x) {
  if (x <= 0) return 0;
  if (x >= 1) return 1;
  if (x > a / (a + b)) return 1 - incomplete_beta_series(b, a, 1 - x);
  const long double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  long double term = 1, sum = 1;
  for (long n = 0; n < 10'000'000; ++n) {
    term *= (a + b + n) / (a + 1 + n) * x;
    sum += term;
    if (term < sum * 1e-19L) break;
  }
  return std::exp(log_front) * sum / a;
}

inline double t_two_sided_p(double t, double df) {
  return static_cast<double>(incomplete_beta_series(df / 2.0L, 0.5L, df / (df + static_cast<long double>(t) * t)));
}

inline double t_cdf(double t, double df) {
  const double tail = 0.5 * t_two_sided_p(t, df);
  return t >= 0 ? 1.0 - tail : tail;
}

// Maclaurin series of erf; fine for |x| <~ 4 in long double.
inline long double erf_series(long double x) {
  long double sum = 0, term = x;
  for (int n = 0; n < 400; ++n) {
    const long double contrib = term / (2 * n + 1);
    sum += contrib;
    if (std::fabs(contrib) < 1e-22L) break;
    term *= -x * x / (n + 1);
  }
  return 2 / std::sqrt(std::numbers::pi_v<long double>) * sum;
}

inline long double normal_cdf_series(long double z) { return 0.5L * (1 + erf_series(z / std::numbers::sqrt2_v<long double>)); }

inline double normal_quantile_bisection(double tau) {
  long double lo = -6, hi = 6;
  for (int i = 0; i < 200; ++i) {
    const long double mid = 0.5L * (lo + hi);
    (normal_cdf_series(mid) < tau ? lo : hi) = mid;
  }
  return static_cast<double>(0.5L * (lo + hi));
}

struct BruteSplit {
  std::size_t feature;
  double threshold;
  double p_value;
};

// Every (feature, observed value) pair, groups formed by direct comparison.
inline std::optional<BruteSplit> exhaustive_split(const usnrt::SampleMatrix& X, std::span<const double> residuals,
                                                  std::size_t n_min) {
  std::optional<BruteSplit> best;
  const auto n = static_cast<std::size_t>(X.rows());
  for (Eigen::Index k = 0; k < X.cols(); ++k) {
    std::vector<double> thresholds;
    for (std::size_t i = 0; i < n; ++i) thresholds.push_back(X(static_cast<Eigen::Index>(i), k));
    std::sort(thresholds.begin(), thresholds.end());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
    for (double a : thresholds) {
      std::vector<double> left, right;
      for (std::size_t i = 0; i < n; ++i)
        (X(static_cast<Eigen::Index>(i), k) <= a ? left : right).push_back(residuals[i]);
      if (left.size() < n_min || right.size() < n_min) continue;
      const auto lev = levene_statistic(left, right);
      if (!std::isfinite(lev.statistic)) continue;
      const double p = t_two_sided_p(lev.statistic, lev.df);
      if (!best || p < best->p_value) best = BruteSplit{static_cast<std::size_t>(k), a, p};
    }
  }
  return best;
}

// Central finite-difference gradient of a scalar function of the network parameters.
template <class Loss>
usnrt::nn::Gradients finite_difference_gradient(usnrt::nn::Mlp net, Loss loss, double h = 1e-5) {
  auto g = usnrt::nn::Gradients::zeros_like(net);
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    for (Eigen::Index i = 0; i < net.weights[l].size(); ++i) {
      double& w = net.weights[l].data()[i];
      const double saved = w;
      w = saved + h;
      const double up = loss(net);
      w = saved - h;
      const double down = loss(net);
      w = saved;
      g.weights[l].data()[i] = (up - down) / (2 * h);
    }
    for (Eigen::Index i = 0; i < net.biases[l].size(); ++i) {
      double& b = net.biases[l](i);
      const double saved = b;
      b = saved + h;
      const double up = loss(net);
      b = saved - h;
      const double down = loss(net);
      b = saved;
      g.biases[l](i) = (up - down) / (2 * h);
    }
  }
  return g;
}

// Worst elementwise |a - b| / max(|a|, |b|, floor).
inline double max_relative_error(const usnrt::nn::Gradients& a, const usnrt::nn::Gradients& b, double floor = 1e-6) {
  double worst = 0;
  auto cmp = [&](double x, double y) {
    worst = std::max(worst, std::fabs(x - y) / std::max({std::fabs(x), std::fabs(y), floor}));
  };
  for (std::size_t l = 0; l < a.weights.size(); ++l) {
    for (Eigen::Index i = 0; i < a.weights[l].size(); ++i) cmp(a.weights[l].data()[i], b.weights[l].data()[i]);
    for (Eigen::Index i = 0; i < a.biases[l].size(); ++i) cmp(a.biases[l](i), b.biases[l](i));
  }
  return worst;
}

// Direct per-level counting for ECE / TCE with quantiles from a supplied z table.
struct BrutePred {
  double mu, sigma;
};

inline double ece_direct(const std::vector<BrutePred>& p, const std::vector<double>& y) {
  double total = 0;
  for (int k = 1; k <= 99; ++k) {
    const double tau = k / 100.0;
    const double z = normal_quantile_bisection(tau);
    int below = 0;
    for (std::size_t i = 0; i < p.size(); ++i) below += y[i] < p[i].mu + p[i].sigma * z;
    total += std::fabs(static_cast<double>(below) / p.size() - tau);
  }
  return 100 * total / 99;
}

inline double interval_error_direct(const std::vector<BrutePred>& p, const std::vector<double>& y, double tau) {
  const double zl = normal_quantile_bisection(tau), zh = normal_quantile_bisection(1 - tau);
  int inside = 0;
  for (std::size_t i = 0; i < p.size(); ++i) inside += (p[i].mu + p[i].sigma * zl < y[i]) && (y[i] < p[i].mu + p[i].sigma * zh);
  return 100 * std::fabs(static_cast<double>(inside) / p.size() - (1 - 2 * tau));
}

inline double tce_direct(const std::vector<BrutePred>& p, const std::vector<double>& y) {
  return (interval_error_direct(p, y, 0.05) + interval_error_direct(p, y, 0.10) + interval_error_direct(p, y, 0.15) +
          interval_error_direct(p, y, 0.20)) /
         4;
}

}  // namespace oracle
