#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <string>

#include "usnrt/error.hpp"

namespace usnrt::stats {

namespace detail {

inline constexpr double kBetaCfTolerance = 1e-12;
inline constexpr int kBetaCfMaxIterations = 300;

// Modified Lentz evaluation of the continued fraction for I_x(a, b).
inline double beta_continued_fraction(double a, double b, double x) {
  constexpr double tiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kBetaCfMaxIterations; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kBetaCfTolerance) return h;
  }
  throw std::runtime_error("incomplete beta continued fraction did not converge (a=" +
                           std::to_string(a) + ", b=" + std::to_string(b) +
                           ", x=" + std::to_string(x) + ")");
}

}  // namespace detail

/// Regularized incomplete beta function I_x(a, b) for a, b > 0 and x in [0, 1].
inline double regularized_incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw InvalidInput("incomplete beta: a and b must be positive");
  if (!(x >= 0.0 && x <= 1.0)) throw InvalidInput("incomplete beta: x must lie in [0, 1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                           a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * detail::beta_continued_fraction(a, b, x) / a;
  }
  return 1.0 - front * detail::beta_continued_fraction(b, a, 1.0 - x) / b;
}

/// Two-sided tail probability P(|T| >= |t|) for Student's t with `df` degrees
/// of freedom. Evaluated directly from the incomplete beta so small p-values
/// keep their relative accuracy.
inline double student_t_two_sided_p(double t, double df) {
  if (!(df >= 1.0)) throw InvalidInput("student t: df must be >= 1");
  if (std::isnan(t)) throw InvalidInput("student t: t is NaN");
  if (std::isinf(t)) return 0.0;
  const double x = df / (df + t * t);
  return regularized_incomplete_beta(0.5 * df, 0.5, x);
}

/// CDF of Student's t distribution.
inline double student_t_cdf(double t, double df) {
  if (!(df >= 1.0)) throw InvalidInput("student t: df must be >= 1");
  if (std::isnan(t)) throw InvalidInput("student t: t is NaN");
  if (t == std::numeric_limits<double>::infinity()) return 1.0;
  if (t == -std::numeric_limits<double>::infinity()) return 0.0;
  const double tail = 0.5 * student_t_two_sided_p(t, df);
  return t >= 0.0 ? 1.0 - tail : tail;
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

inline double normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

/// Standard normal quantile: Acklam's rational approximation followed by one
/// Halley correction against the erfc-based CDF.
inline double normal_inverse_cdf(double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw InvalidInput("normal_inverse_cdf: tau must lie in (0, 1)");
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  double x;
  if (tau < p_low) {
    const double q = std::sqrt(-2.0 * std::log(tau));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (tau <= 1.0 - p_low) {
    const double q = tau - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-tau));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  // Halley step; for the upper tail work with the complement to avoid cancellation.
  const double e = tau < 0.5 ? normal_cdf(x) - tau : (1.0 - tau) - normal_cdf(-x);
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

struct LeveneResult {
  double statistic = 0.0;
  std::size_t degrees_of_freedom = 0;
  double p_value = 1.0;
};

/// Two-sample Levene test in t-form on absolute deviations from group means.
/// The p-value is two-sided. Throws DegenerateVariance when the pooled
/// variance of the deviations is zero.
inline LeveneResult levene_test(std::span<const double> left, std::span<const double> right) {
  const std::size_t nl = left.size();
  const std::size_t nr = right.size();
  if (nl < 2 || nr < 2) throw InvalidInput("levene_test: each group needs at least 2 values");

  auto mean_of = [](std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  // Mean and sum of squared deviations of z = |e - mean(e)| for one group.
  auto deviation_moments = [&](std::span<const double> v, double& z_mean, double& z_ss) {
    const double center = mean_of(v);
    double s = 0.0;
    for (double x : v) s += std::fabs(x - center);
    z_mean = s / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) {
      const double dz = std::fabs(x - center) - z_mean;
      ss += dz * dz;
    }
    z_ss = ss;
  };

  double zl = 0.0, ssl = 0.0, zr = 0.0, ssr = 0.0;
  deviation_moments(left, zl, ssl);
  deviation_moments(right, zr, ssr);

  // (n_L - 1) w_L^2 + (n_R - 1) w_R^2 is just the sum of both groups' squared deviations.
  const std::size_t df = nl + nr - 2;
  const double pooled_var = (ssl + ssr) / static_cast<double>(df);
  if (!(pooled_var > 0.0)) throw DegenerateVariance("levene_test: pooled variance is zero");

  LeveneResult r;
  r.degrees_of_freedom = df;
  const double scale = std::sqrt(pooled_var) *
                       std::sqrt(1.0 / static_cast<double>(nl) + 1.0 / static_cast<double>(nr));
  r.statistic = (zl - zr) / scale;
  r.p_value = student_t_two_sided_p(r.statistic, static_cast<double>(df));
  return r;
}

}  // namespace usnrt::stats
